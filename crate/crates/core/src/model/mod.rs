//! The full model: acoustic, phonetic and linguistic encoders feeding the
//! attention decoder, the ablation variants, training and inference.

mod config;
mod decoder;
mod layers;
mod persist;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::ops::stream_key;
use crate::numcore::params::join;
use crate::numcore::{Mode, ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor};

pub use config::{parse_kv, AplConfig, Variant};
pub use decoder::{Decoder, DecoderCache, DecoderInputGrads};
pub use layers::{ConvStack, FrameEncoder, LinguisticEncoder, RnnStack, CONV_STACKS};
pub use persist::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{
    accuracy_of, batch_loss, fit, is_feasible, predict, predict_batch, train_step, EpochRecord, Example, FitResult, Trainer,
};

/// Fewest input frames accepted by the encoders.
pub const MIN_FRAMES: usize = 4;

/// One utterance as seen by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<F = f32> {
    /// `[T, acoustic_dim]`
    pub acoustic: Option<Tensor<F>>,
    /// `[T, phonetic_dim]`
    pub phonetic: Option<Tensor<F>>,
    /// Canonical phone ids.
    pub canonical: Vec<usize>,
}

impl<F: Real> ModelInput<F> {
    pub fn frames(&self) -> Option<usize> {
        self.acoustic.as_ref().or(self.phonetic.as_ref()).map(Tensor::rows)
    }
}

/// Encoder outputs and attention of one utterance.
#[derive(Debug, Clone)]
pub struct EncodedStates<F> {
    pub h_a: Option<Tensor<F>>,
    pub h_p: Option<Tensor<F>>,
    pub keys: Option<Tensor<F>>,
    pub values: Option<Tensor<F>>,
    pub alpha: Option<Tensor<F>>,
    pub context: Option<Tensor<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AplModel<F = f32> {
    pub config: AplConfig,
    pub acoustic: Option<FrameEncoder<F>>,
    pub phonetic: Option<FrameEncoder<F>>,
    pub linguistic: Option<LinguisticEncoder<F>>,
    pub decoder: Decoder<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    acoustic: Option<layers::FrameEncoderCache<F>>,
    phonetic: Option<layers::FrameEncoderCache<F>>,
    linguistic: Vec<Option<layers::LinguisticCache<F>>>,
    pub decoder: Vec<DecoderCache<F>>,
    h_a: Vec<Tensor<F>>,
    h_p: Vec<Tensor<F>>,
}

impl<F> ForwardCache<F> {
    pub fn log_probs(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.decoder.iter().map(|d| &d.log_probs)
    }
}

impl<F: Real> ForwardCache<F> {
    pub fn states(&self, u: usize) -> EncodedStates<F> {
        let d = &self.decoder[u];
        EncodedStates {
            h_a: self.h_a.get(u).cloned(),
            h_p: self.h_p.get(u).cloned(),
            keys: d.keys.clone(),
            values: d.values.clone(),
            alpha: d.alpha.clone(),
            context: d.context.clone(),
        }
    }
}

impl<F: Real> AplModel<F> {
    /// Randomly initialized model; the seed is `config.seed`.
    pub fn new(config: &AplConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(config.seed, 0x1a17));
        let geom = config.geometry();
        let v = config.variant;
        let acoustic = if v.uses_acoustic() {
            Some(FrameEncoder::new(
                config.acoustic_dim,
                config.conv_channels,
                geom,
                config.rnn_hidden,
                config.n_rnn_acoustic,
                &mut rng,
            )?)
        } else {
            None
        };
        let phonetic = if v.uses_phonetic() {
            Some(FrameEncoder::new(
                config.phonetic_dim,
                config.conv_channels,
                geom,
                config.rnn_hidden,
                config.n_rnn_phonetic,
                &mut rng,
            )?)
        } else {
            None
        };
        let linguistic = if v.uses_attention() {
            Some(LinguisticEncoder::new(
                config.classes,
                config.embed_dim,
                config.ling_hidden,
                config.key_dim(),
                &mut rng,
            ))
        } else {
            None
        };
        let decoder = Decoder::new(v, config.query_dim(), config.classes, &mut rng);
        Ok(AplModel {
            config: config.clone(),
            acoustic,
            phonetic,
            linguistic,
            decoder,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// The blank is the last class.
    pub fn blank(&self) -> usize {
        self.config.classes - 1
    }

    /// Output frames for `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> Result<usize> {
        let enc = self.acoustic.as_ref().or(self.phonetic.as_ref()).expect("every variant has an encoder");
        enc.output_frames(frames)
    }

    fn check_input(&self, x: &ModelInput<F>) -> Result<usize> {
        let v = self.variant();
        if v.uses_acoustic() && x.acoustic.is_none() {
            return Err(Error::Data(format!("variant {v} needs acoustic features")));
        }
        if v.uses_phonetic() && x.phonetic.is_none() {
            return Err(Error::Data(format!("variant {v} needs a phonetic embedding")));
        }
        let frames = match (v.uses_acoustic().then_some(&x.acoustic), v.uses_phonetic().then_some(&x.phonetic)) {
            (Some(Some(a)), Some(Some(p))) if a.rows() != p.rows() => {
                return Err(Error::Data(format!(
                    "acoustic features have {} frames but the phonetic embedding has {}",
                    a.rows(),
                    p.rows()
                )))
            }
            (Some(Some(a)), _) => a.rows(),
            (_, Some(Some(p))) => p.rows(),
            _ => unreachable!("checked above"),
        };
        if frames < MIN_FRAMES {
            return Err(Error::Data(format!("input has {frames} frames, need at least {MIN_FRAMES}")));
        }
        if v.uses_attention() {
            if x.canonical.is_empty() {
                return Err(Error::Data("canonical sequence is empty".into()));
            }
            if let Some(&bad) = x.canonical.iter().find(|&&id| id >= self.blank()) {
                return Err(Error::ClassIdOutOfRange(bad, self.blank()));
            }
        }
        Ok(frames)
    }

    /// Runs the whole batch. Batch normalization uses batch statistics in
    /// train mode; `key` seeds dropout.
    pub fn forward(&self, batch: &[ModelInput<F>], mode: Mode, key: u64) -> Result<ForwardCache<F>> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        for x in batch {
            self.check_input(x)?;
        }
        let rate = self.config.dropout;
        let encode = |enc: &Option<FrameEncoder<F>>, pick: fn(&ModelInput<F>) -> &Option<Tensor<F>>, site: u64| {
            enc.as_ref()
                .map(|e| {
                    let xs: Vec<Tensor<F>> = batch.iter().map(|x| pick(x).clone().expect("checked")).collect();
                    e.forward(&xs, rate, stream_key(key, site), mode)
                })
                .transpose()
        };
        let (h_a, acoustic) = encode(&self.acoustic, |x| &x.acoustic, 0)?.unzip();
        let (h_p, phonetic) = encode(&self.phonetic, |x| &x.phonetic, 1)?.unzip();
        let (h_a, h_p) = (h_a.unwrap_or_default(), h_p.unwrap_or_default());
        let idx: Vec<usize> = (0..batch.len()).collect();
        let per_utt = layers::par_map(&idx, |_, &u| {
            let (k, v, lc) = match &self.linguistic {
                Some(l) => {
                    let (k, v, c) = l.forward(&batch[u].canonical)?;
                    (Some(k), Some(v), Some(c))
                }
                None => (None, None, None),
            };
            let d = self
                .decoder
                .forward(h_a.get(u), h_p.get(u), k.as_ref(), v.as_ref())?;
            Ok((lc, d))
        })?;
        let (linguistic, decoder) = per_utt.into_iter().unzip();
        Ok(ForwardCache {
            acoustic,
            phonetic,
            linguistic,
            decoder,
            h_a,
            h_p,
        })
    }

    /// Gradients of `sum_u <gys[u], log_probs[u]>` in a zeroed copy of the
    /// model.
    pub fn backward(&self, cache: &ForwardCache<F>, gys: &[Tensor<F>]) -> Result<Self>
    where
        Self: Clone,
    {
        if gys.len() != cache.decoder.len() {
            return Err(Error::Shape(format!(
                "{} output gradients for a batch of {}",
                gys.len(),
                cache.decoder.len()
            )));
        }
        let mut grads = self.zeros_like();
        let idx: Vec<usize> = (0..gys.len()).collect();
        let parts = layers::par_map(&idx, |_, &u| {
            let mut g_dec = self.decoder.zeros_like();
            let gin = self.decoder.backward(&cache.decoder[u], &gys[u], &mut g_dec)?;
            let g_ling = match (&self.linguistic, &cache.linguistic[u], &gin.keys, &gin.values) {
                (Some(l), Some(lc), Some(gk), Some(gv)) => {
                    let mut g = l.zeros_like();
                    l.backward(lc, gk, gv, &mut g);
                    Some(g)
                }
                _ => None,
            };
            Ok((g_dec, g_ling, gin.acoustic, gin.phonetic))
        })?;
        let mut g_a = Vec::new();
        let mut g_p = Vec::new();
        for (g_dec, g_ling, ga, gp) in parts {
            grads.decoder.add_params(&g_dec);
            if let (Some(acc), Some(g)) = (grads.linguistic.as_mut(), g_ling) {
                acc.add_params(&g);
            }
            g_a.extend(ga);
            g_p.extend(gp);
        }
        if let (Some(enc), Some(c)) = (&self.acoustic, &cache.acoustic) {
            enc.backward(c, &g_a, grads.acoustic.as_mut().expect("same layout"))?;
        }
        if let (Some(enc), Some(c)) = (&self.phonetic, &cache.phonetic) {
            enc.backward(c, &g_p, grads.phonetic.as_mut().expect("same layout"))?;
        }
        Ok(grads)
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &ForwardCache<F>) {
        if let (Some(e), Some(c)) = (self.acoustic.as_mut(), &cache.acoustic) {
            e.update_running(c);
        }
        if let (Some(e), Some(c)) = (self.phonetic.as_mut(), &cache.phonetic) {
            e.update_running(c);
        }
    }

    /// Eval-mode encoding of a single utterance.
    pub fn encode(&self, input: &ModelInput<F>) -> Result<EncodedStates<F>> {
        Ok(self.forward(std::slice::from_ref(input), Mode::Eval, 0)?.states(0))
    }

    /// Eval-mode log-posteriors of one utterance.
    pub fn log_posteriors(&self, input: &ModelInput<F>) -> Result<Tensor<F>> {
        let cache = self.forward(std::slice::from_ref(input), Mode::Eval, 0)?;
        Ok(cache.decoder.into_iter().next().expect("one utterance").log_probs)
    }

    /// Same architecture in another precision.
    pub fn cast<G: Real>(&self) -> AplModel<G> {
        let mut out = AplModel::<G>::new(&self.config).expect("config already validated");
        let mut params = Vec::new();
        self.visit_params("", &mut |_, t| params.push(t.cast::<G>()));
        self.visit_buffers("", &mut |_, t| params.push(t.cast::<G>()));
        let mut it = params.into_iter();
        out.visit_params_mut("", &mut |_, t| *t = it.next().expect("same layout"));
        out.visit_buffers_mut("", &mut |_, t| *t = it.next().expect("same layout"));
        out
    }
}

impl<F: Real> Parameterized<F> for AplModel<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        if let Some(e) = &self.acoustic {
            e.visit_params(&join(prefix, "acoustic"), f);
        }
        if let Some(e) = &self.phonetic {
            e.visit_params(&join(prefix, "phonetic"), f);
        }
        if let Some(e) = &self.linguistic {
            e.visit_params(&join(prefix, "linguistic"), f);
        }
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        if let Some(e) = &mut self.acoustic {
            e.visit_params_mut(&join(prefix, "acoustic"), f);
        }
        if let Some(e) = &mut self.phonetic {
            e.visit_params_mut(&join(prefix, "phonetic"), f);
        }
        if let Some(e) = &mut self.linguistic {
            e.visit_params_mut(&join(prefix, "linguistic"), f);
        }
        self.decoder.visit_params_mut(&join(prefix, "decoder"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        if let Some(e) = &self.acoustic {
            e.visit_buffers(&join(prefix, "acoustic"), f);
        }
        if let Some(e) = &self.phonetic {
            e.visit_buffers(&join(prefix, "phonetic"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        if let Some(e) = &mut self.acoustic {
            e.visit_buffers_mut(&join(prefix, "acoustic"), f);
        }
        if let Some(e) = &mut self.phonetic {
            e.visit_buffers_mut(&join(prefix, "phonetic"), f);
        }
    }
}
