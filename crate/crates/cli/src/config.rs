//! Run configuration: defaults, then the `--config` file, then command-line
//! settings. The resolved form is written next to every run's outputs and
//! can be passed back with `--config`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use apl_mdd::ablation::toy_synth_config;
use apl_mdd::corpus::SynthConfig;
use apl_mdd::model::{parse_kv, AplConfig, Variant};
use apl_mdd::phoneset::{InventoryMode, PhoneInventory};
use apl_mdd::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";

/// Where PL and APL get their phonetic embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Matrices named in the manifest.
    File,
    /// Built from the annotated segments.
    Oracle,
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" => Ok(EmbeddingSource::File),
            "oracle" => Ok(EmbeddingSource::Oracle),
            _ => Err(Error::Config(format!("embeddings must be `file` or `oracle`, got `{s}`"))),
        }
    }
}

impl EmbeddingSource {
    fn as_str(self) -> &'static str {
        match self {
            EmbeddingSource::File => "file",
            EmbeddingSource::Oracle => "oracle",
        }
    }
}

/// How a single manifest is divided by speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Sorted speakers; the last four test, the four before them dev.
    Tail,
    /// The fixed L2-ARCTIC speaker lists.
    L2Arctic,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail" => Ok(SplitMode::Tail),
            "l2arctic" => Ok(SplitMode::L2Arctic),
            _ => Err(Error::Config(format!("split must be `tail` or `l2arctic`, got `{s}`"))),
        }
    }
}

impl SplitMode {
    fn as_str(self) -> &'static str {
        match self {
            SplitMode::Tail => "tail",
            SplitMode::L2Arctic => "l2arctic",
        }
    }
}

const RUN_KEYS: [&str; 11] = [
    "preset",
    "inventory",
    "embeddings",
    "manifest",
    "dev_manifest",
    "checkpoint",
    "recognized",
    "variants",
    "seeds",
    "split",
    "posteriors",
];

const SYNTH_KEYS: [&str; 10] = [
    "n_utts",
    "phones_per_utt",
    "sub_rate",
    "del_rate",
    "ins_rate",
    "frames_per_phone",
    "noise_std",
    "embedding_noise_std",
    "embedding_sharpness",
    "n_speakers",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: String,
    pub inventory: String,
    pub embeddings: EmbeddingSource,
    pub manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub recognized: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub split: SplitMode,
    pub posteriors: bool,
    pub synth: SynthConfig,
    pub model: AplConfig,
    /// Keys given by the user rather than defaulted.
    pub explicit: BTreeSet<String>,
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Reads the optional config file and layers `overrides` on top.
    pub fn resolve(file: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut pairs = match file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                parse_kv(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            pairs.insert(k.replace('-', "_"), v.clone());
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs(mut pairs: BTreeMap<String, String>) -> Result<Self> {
        let explicit: BTreeSet<String> = pairs.keys().cloned().collect();
        let preset = pairs.remove("preset").unwrap_or_else(|| "toy".into());
        let model = match preset.as_str() {
            "toy" => AplConfig::toy(),
            "full" => AplConfig::default(),
            other => return Err(Error::Config(format!("preset must be `toy` or `full`, got `{other}`"))),
        };
        let mut cfg = RunConfig {
            preset,
            inventory: "l2arctic-extended".into(),
            embeddings: EmbeddingSource::File,
            manifest: None,
            dev_manifest: None,
            checkpoint: None,
            recognized: None,
            variants: vec![Variant::Al, Variant::Pl, Variant::Apl],
            seeds: vec![0],
            split: SplitMode::Tail,
            posteriors: false,
            synth: toy_synth_config(),
            model,
            explicit,
        };
        let model_keys = AplConfig::keys();
        let mut model_pairs = BTreeMap::new();
        for (k, v) in pairs {
            let s = &mut cfg.synth;
            match k.as_str() {
                "inventory" => cfg.inventory = v,
                "embeddings" => cfg.embeddings = value(&k, &v)?,
                "manifest" => cfg.manifest = path(&v),
                "dev_manifest" => cfg.dev_manifest = path(&v),
                "checkpoint" => cfg.checkpoint = path(&v),
                "recognized" => cfg.recognized = path(&v),
                "variants" => cfg.variants = list(&k, &v)?,
                "seeds" => cfg.seeds = list(&k, &v)?,
                "split" => cfg.split = value(&k, &v)?,
                "posteriors" => cfg.posteriors = value(&k, &v)?,
                "n_utts" => s.n_utts = value(&k, &v)?,
                "phones_per_utt" => s.phones_per_utt = value(&k, &v)?,
                "sub_rate" => s.sub_rate = value(&k, &v)?,
                "del_rate" => s.del_rate = value(&k, &v)?,
                "ins_rate" => s.ins_rate = value(&k, &v)?,
                "frames_per_phone" => s.frames_per_phone = value(&k, &v)?,
                "noise_std" => s.noise_std = value(&k, &v)?,
                "embedding_noise_std" => s.embedding_noise_std = value(&k, &v)?,
                "embedding_sharpness" => s.embedding_sharpness = value(&k, &v)?,
                "n_speakers" => s.n_speakers = value(&k, &v)?,
                _ if model_keys.contains(&k.as_str()) => {
                    model_pairs.insert(k, v);
                }
                _ => {
                    return Err(Error::Config(format!(
                        "unknown setting `{k}`; known settings: {}",
                        known_keys().join(", ")
                    )))
                }
            }
        }
        cfg.model.apply_kv(&model_pairs)?;
        if !cfg.is_explicit("seeds") {
            cfg.seeds = vec![cfg.model.seed];
        }
        cfg.synth.validate()?;
        if cfg.variants.is_empty() {
            return Err(Error::Config("variants is empty".into()));
        }
        if cfg.seeds.is_empty() {
            return Err(Error::Config("seeds is empty".into()));
        }
        Ok(cfg)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn load_inventory(&self) -> Result<PhoneInventory> {
        let p = Path::new(&self.inventory);
        if p.is_file() {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            return PhoneInventory::from_text(&text);
        }
        PhoneInventory::build(&self.inventory.parse::<InventoryMode>()?)
    }

    /// The model configuration for `inventory`. `classes` follows the
    /// inventory; `phonetic_dim` follows `embedding_width` unless set.
    pub fn model_for(&self, inventory: &PhoneInventory, embedding_width: Option<usize>) -> Result<AplConfig> {
        let mut m = self.model.clone();
        if self.is_explicit("classes") && m.classes != inventory.len() {
            return Err(Error::Config(format!(
                "classes = {} conflicts with the inventory size {}",
                m.classes,
                inventory.len()
            )));
        }
        m.classes = inventory.len();
        if !self.is_explicit("phonetic_dim") {
            m.phonetic_dim = embedding_width.unwrap_or(inventory.len());
        }
        m.validate()?;
        Ok(m)
    }

    /// Every setting as `key = value`, in a form [`RunConfig::resolve`]
    /// reads back to the same configuration.
    pub fn to_text(&self, model: &AplConfig) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |items: Vec<String>| items.join(",");
        let s = &self.synth;
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("preset", self.preset.clone());
        put("inventory", self.inventory.clone());
        put("embeddings", self.embeddings.as_str().into());
        put("manifest", opt(&self.manifest));
        put("dev_manifest", opt(&self.dev_manifest));
        put("checkpoint", opt(&self.checkpoint));
        put("recognized", opt(&self.recognized));
        put("variants", join(self.variants.iter().map(|v| v.to_string()).collect()));
        put("seeds", join(self.seeds.iter().map(|v| v.to_string()).collect()));
        put("split", self.split.as_str().into());
        put("posteriors", self.posteriors.to_string());
        put("n_utts", s.n_utts.to_string());
        put("phones_per_utt", s.phones_per_utt.to_string());
        put("sub_rate", s.sub_rate.to_string());
        put("del_rate", s.del_rate.to_string());
        put("ins_rate", s.ins_rate.to_string());
        put("frames_per_phone", s.frames_per_phone.to_string());
        put("noise_std", s.noise_std.to_string());
        put("embedding_noise_std", s.embedding_noise_std.to_string());
        put("embedding_sharpness", s.embedding_sharpness.to_string());
        put("n_speakers", s.n_speakers.to_string());
        // key_dim follows the variant and is left out
        for line in model.to_kv().lines().filter(|l| !l.starts_with("key_dim")) {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path, model: &AplConfig) -> Result<()> {
        let p = dir.join(CONFIG_FILE);
        fs::write(&p, self.to_text(model)).map_err(|e| Error::io(p, e))
    }
}

/// All keys accepted in a config file.
pub fn known_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = RUN_KEYS.iter().chain(SYNTH_KEYS.iter()).copied().collect();
    keys.extend(AplConfig::keys());
    keys
}
