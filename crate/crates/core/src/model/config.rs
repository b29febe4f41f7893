//! Model and training configuration, stored as `key = value` text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::ACOUSTIC_DIM;
use crate::numcore::optim::{OptimConfig, OptimMode};
use crate::numcore::Conv2dGeometry;

/// Which input streams feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Acoustic encoder straight into the output layer.
    Baseline1,
    /// Acoustic + linguistic.
    Al,
    /// Phonetic + linguistic.
    Pl,
    /// Acoustic + phonetic + linguistic.
    Apl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline1, Variant::Al, Variant::Pl, Variant::Apl];

    pub fn uses_acoustic(self) -> bool {
        !matches!(self, Variant::Pl)
    }

    pub fn uses_phonetic(self) -> bool {
        matches!(self, Variant::Pl | Variant::Apl)
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::Baseline1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline1 => "baseline1",
            Variant::Al => "AL",
            Variant::Pl => "PL",
            Variant::Apl => "APL",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline1" => Ok(Variant::Baseline1),
            "al" => Ok(Variant::Al),
            "pl" => Ok(Variant::Pl),
            "apl" => Ok(Variant::Apl),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AplConfig {
    pub variant: Variant,
    pub acoustic_dim: usize,
    pub phonetic_dim: usize,
    /// Inventory size including the blank.
    pub classes: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_padding: usize,
    pub rnn_hidden: usize,
    pub n_rnn_acoustic: usize,
    pub n_rnn_phonetic: usize,
    pub embed_dim: usize,
    pub ling_hidden: usize,
    pub dropout: f64,
    pub cmvn: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping; 0 disables.
    pub patience: usize,
    pub optimizer: OptimMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; 0 disables.
    pub clip_norm: f64,
    pub beam_width: usize,
    pub seed: u64,
}

impl Default for AplConfig {
    fn default() -> Self {
        AplConfig {
            variant: Variant::Apl,
            acoustic_dim: ACOUSTIC_DIM,
            phonetic_dim: 41,
            classes: 69,
            conv_channels: 32,
            conv_kernel: 3,
            conv_stride: 2,
            conv_padding: 1,
            rnn_hidden: 128,
            n_rnn_acoustic: 4,
            n_rnn_phonetic: 1,
            embed_dim: 64,
            ling_hidden: 128,
            dropout: 0.1,
            cmvn: true,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            optimizer: OptimMode::AdaptiveMoments,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            beam_width: crate::ctc::DEFAULT_BEAM_WIDTH,
            seed: 0,
        }
    }
}

macro_rules! fields {
    ($m:ident) => {
        $m!(variant, Variant);
        $m!(acoustic_dim, usize);
        $m!(phonetic_dim, usize);
        $m!(classes, usize);
        $m!(conv_channels, usize);
        $m!(conv_kernel, usize);
        $m!(conv_stride, usize);
        $m!(conv_padding, usize);
        $m!(rnn_hidden, usize);
        $m!(n_rnn_acoustic, usize);
        $m!(n_rnn_phonetic, usize);
        $m!(embed_dim, usize);
        $m!(ling_hidden, usize);
        $m!(dropout, f64);
        $m!(cmvn, bool);
        $m!(batch_size, usize);
        $m!(max_epochs, usize);
        $m!(patience, usize);
        $m!(optimizer, OptimMode);
        $m!(lr, f64);
        $m!(beta1, f64);
        $m!(beta2, f64);
        $m!(adam_eps, f64);
        $m!(clip_norm, f64);
        $m!(beam_width, usize);
        $m!(seed, u64);
    };
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// repeated keys are an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
        let k = k.trim().replace('-', "_");
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", idx + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", idx + 1)));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl AplConfig {
    /// A configuration small enough to train on a laptop in seconds.
    pub fn toy() -> Self {
        AplConfig {
            conv_channels: 4,
            rnn_hidden: 16,
            embed_dim: 16,
            ling_hidden: 16,
            dropout: 0.0,
            cmvn: false,
            batch_size: 16,
            max_epochs: 40,
            patience: 0,
            lr: 3e-3,
            ..AplConfig::default()
        }
    }

    pub fn geometry(&self) -> Conv2dGeometry {
        Conv2dGeometry {
            kernel: (self.conv_kernel, self.conv_kernel),
            stride: (self.conv_stride, self.conv_stride),
            padding: (self.conv_padding, self.conv_padding),
        }
    }

    /// Width of one encoder's output.
    pub fn encoder_dim(&self) -> usize {
        2 * self.rnn_hidden
    }

    /// Decoder query width; keys and values share it.
    pub fn query_dim(&self) -> usize {
        match self.variant {
            Variant::Apl => 2 * self.encoder_dim(),
            _ => self.encoder_dim(),
        }
    }

    pub fn key_dim(&self) -> usize {
        self.query_dim()
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            mode: self.optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("acoustic_dim", self.acoustic_dim),
            ("phonetic_dim", self.phonetic_dim),
            ("conv_channels", self.conv_channels),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("rnn_hidden", self.rnn_hidden),
            ("embed_dim", self.embed_dim),
            ("ling_hidden", self.ling_hidden),
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if self.variant.uses_acoustic() && self.n_rnn_acoustic == 0 {
            return Err(Error::Config("n_rnn_acoustic must be positive".into()));
        }
        if self.variant.uses_phonetic() && self.n_rnn_phonetic == 0 {
            return Err(Error::Config("n_rnn_phonetic must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        self.geometry().output_extent(4, self.acoustic_dim)?;
        Ok(())
    }

    /// Every field as `key = value`, plus the derived key width.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($name:ident, $t:ty) => {
                out.push_str(&format!("{} = {}\n", stringify!($name), self.$name));
            };
        }
        fields!(emit);
        out.push_str(&format!("key_dim = {}\n", self.key_dim()));
        out
    }

    /// Overrides fields of `self` from parsed pairs. Unknown keys are errors.
    pub fn apply_kv(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        let mut key_dim = None;
        for (k, v) in pairs {
            macro_rules! set {
                ($name:ident, $t:ty) => {
                    if k == stringify!($name) {
                        self.$name = parse_value::<$t>(k, v)?;
                        continue;
                    }
                };
            }
            fields!(set);
            if k == "key_dim" {
                key_dim = Some(parse_value::<usize>(k, v)?);
                continue;
            }
            return Err(Error::Config(format!("unknown model setting `{k}`")));
        }
        if let Some(kd) = key_dim {
            if kd != self.key_dim() {
                return Err(Error::Config(format!(
                    "key_dim {kd} does not match the query width {} of variant {}",
                    self.key_dim(),
                    self.variant
                )));
            }
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = AplConfig::default();
        cfg.apply_kv(&parse_kv(text)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Names accepted by [`AplConfig::apply_kv`].
    pub fn keys() -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! name {
            ($name:ident, $t:ty) => {
                out.push(stringify!($name));
            };
        }
        fields!(name);
        out.push("key_dim");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = AplConfig::toy();
        cfg.variant = Variant::Pl;
        cfg.lr = 0.0123;
        cfg.seed = 77;
        let text = cfg.to_kv();
        assert!(text.contains("key_dim = 32"));
        assert_eq!(AplConfig::from_kv(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_follow_the_architecture() {
        let cfg = AplConfig::default();
        assert_eq!((cfg.batch_size, cfg.max_epochs), (64, 200));
        assert_eq!((cfg.n_rnn_acoustic, cfg.n_rnn_phonetic), (4, 1));
        assert_eq!(cfg.encoder_dim(), 256);
        assert_eq!(cfg.key_dim(), 512);
    }

    #[test]
    fn kv_errors() {
        assert!(AplConfig::from_kv("bogus = 1").is_err());
        assert!(AplConfig::from_kv("lr = fast").is_err());
        assert!(AplConfig::from_kv("lr = 1\nlr = 2").is_err());
        assert!(AplConfig::from_kv("no equals sign").is_err());
        assert!(AplConfig::from_kv("variant = AL\nkey_dim = 512").is_err());
        assert!(AplConfig::from_kv("dropout = 1.5").is_err());
        let cfg = AplConfig::from_kv("# comment\nvariant = baseline1  # trailing\nmax-epochs = 3\n").unwrap();
        assert_eq!((cfg.variant, cfg.max_epochs), (Variant::Baseline1, 3));
    }
}
