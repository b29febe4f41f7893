//! CTC training loop, dev-set model selection and beam-search inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::UtteranceRecord;
use crate::ctc::{beam_search, check_feasible, ctc_loss, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::features::{cmvn_matrix, FbankConfig};
use crate::numcore::ops::stream_key;
use crate::numcore::optim::{sgd_update, OptimState};
use crate::numcore::{Mode, Parameterized, Real, Tensor};
use crate::phoneset::PhoneInventory;
use crate::scoring::{align, EditCounts};

use super::{AplModel, ForwardCache, ModelInput};

/// A training or evaluation utterance: model input plus target ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: ModelInput<f32>,
    /// Perceived phone ids.
    pub target: Vec<usize>,
}

impl Example {
    /// Loads the streams `model` needs from `record`. Streams the variant
    /// does not use are left out even when the record has them.
    pub fn from_record(
        record: &UtteranceRecord,
        inventory: &PhoneInventory,
        config: &super::AplConfig,
        fbank: &FbankConfig,
    ) -> Result<Self> {
        let v = config.variant;
        let acoustic = if v.uses_acoustic() {
            let feats = record.load_features(fbank)?.into_inner();
            if feats.cols() != config.acoustic_dim {
                return Err(Error::Data(format!(
                    "{}: features have {} columns, model expects {}",
                    record.id,
                    feats.cols(),
                    config.acoustic_dim
                )));
            }
            Some(if config.cmvn { cmvn_matrix(&feats)? } else { feats })
        } else {
            None
        };
        let phonetic = if v.uses_phonetic() {
            let emb = record
                .load_embedding()?
                .ok_or_else(|| Error::Data(format!("{}: variant {v} needs a phonetic embedding", record.id)))?;
            if emb.cols() != config.phonetic_dim {
                return Err(Error::Data(format!(
                    "{}: phonetic embedding has {} columns, model expects {}",
                    record.id,
                    emb.cols(),
                    config.phonetic_dim
                )));
            }
            Some(emb)
        } else {
            None
        };
        Ok(Example {
            id: record.id.clone(),
            input: ModelInput {
                acoustic,
                phonetic,
                canonical: inventory.encode(&record.canonical)?,
            },
            target: inventory.encode(&record.perceived)?,
        })
    }

    pub fn from_records(
        records: &[UtteranceRecord],
        inventory: &PhoneInventory,
        config: &super::AplConfig,
        fbank: &FbankConfig,
    ) -> Result<Vec<Self>> {
        super::layers::par_map(records, |_, r| Example::from_record(r, inventory, config, fbank))
    }
}

/// Mean CTC loss of a batch and its gradient.
#[derive(Debug, Clone)]
pub struct BatchLoss<F> {
    pub loss: F,
    pub grads: AplModel<F>,
    pub cache: ForwardCache<F>,
}

/// Forward, CTC and backward over a batch whose targets are all feasible.
pub fn batch_loss<F: Real>(
    model: &AplModel<F>,
    inputs: &[ModelInput<F>],
    targets: &[&[usize]],
    mode: Mode,
    key: u64,
) -> Result<BatchLoss<F>> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape("one target per input required".into()));
    }
    let cache = model.forward(inputs, mode, key)?;
    let n = F::c(inputs.len() as f64);
    let mut loss = F::zero();
    let mut gys = Vec::with_capacity(inputs.len());
    for (lp, target) in cache.log_probs().zip(targets) {
        let post = PosteriorMatrix::new(lp.clone(), model.blank())?;
        let (l, mut g) = ctc_loss(&post, target)?;
        loss = loss + l;
        g.scale(F::one() / n);
        gys.push(g);
    }
    let grads = model.backward(&cache, &gys)?;
    Ok(BatchLoss {
        loss: loss / n,
        grads,
        cache,
    })
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: AplModel<f32>,
    pub optim: OptimState<f32>,
    /// Utterances skipped because their target cannot fit the output frames.
    pub skipped: usize,
}

impl Trainer {
    pub fn new(model: AplModel<f32>) -> Self {
        Trainer {
            model,
            optim: OptimState::default(),
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.optim.step
    }
}

/// Whether the target of `ex` fits the output frames of `model`.
pub fn is_feasible(model: &AplModel<f32>, ex: &Example) -> Result<bool> {
    let frames = ex.input.frames().ok_or_else(|| Error::Data(format!("{}: no input stream", ex.id)))?;
    if frames < super::MIN_FRAMES {
        return Ok(false);
    }
    Ok(check_feasible(model.output_frames(frames)?, &ex.target).is_ok())
}

/// One optimizer update on `batch`. Returns the mean loss over the feasible
/// utterances, or `None` when none were feasible.
pub fn train_step(trainer: &mut Trainer, batch: &[&Example]) -> Result<Option<f64>> {
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        if is_feasible(&trainer.model, ex)? {
            inputs.push(ex.input.clone());
            targets.push(ex.target.as_slice());
        } else {
            trainer.skipped += 1;
            log::warn!("{}: target of {} phones does not fit the input; skipped", ex.id, ex.target.len());
        }
    }
    if inputs.is_empty() {
        return Ok(None);
    }
    let cfg = trainer.model.config.clone();
    let key = stream_key(cfg.seed, 0x7a11_0000 ^ trainer.optim.step);
    let BatchLoss { loss, mut grads, cache } = batch_loss(&trainer.model, &inputs, &targets, Mode::Train, key)?;
    let norm = grads.param_norm();
    if !loss.is_finite() || !norm.is_finite() {
        let max_logit = cache
            .log_probs()
            .map(|lp| lp.max_abs())
            .fold(0.0f32, f32::max);
        return Err(Error::Numeric(format!(
            "non-finite training loss {loss} at step {} (max |log-posterior| {max_logit}, gradient norm {norm})",
            trainer.optim.step
        )));
    }
    if cfg.clip_norm > 0.0 && f64::from(norm) > cfg.clip_norm {
        grads.scale_params((cfg.clip_norm / f64::from(norm)) as f32);
    }
    let grad_tensors = grads.param_tensors();
    let mut params: Vec<Tensor<f32>> = Vec::with_capacity(grad_tensors.len());
    trainer
        .model
        .visit_params_mut("", &mut |_, t| params.push(std::mem::replace(t, Tensor::zeros(&[0]))));
    let mut refs: Vec<&mut Tensor<f32>> = params.iter_mut().collect();
    let update = sgd_update(&mut refs, &grad_tensors, &mut trainer.optim, &cfg.optim());
    let mut it = params.into_iter();
    trainer
        .model
        .visit_params_mut("", &mut |_, t| *t = it.next().expect("same layout"));
    update?;
    trainer.model.update_running(&cache);
    Ok(Some(f64::from(loss)))
}

/// Beam-search recognition of one utterance.
pub fn predict<F: Real>(model: &AplModel<F>, input: &ModelInput<F>, beam_width: usize) -> Result<Vec<usize>> {
    let lp = model.log_posteriors(input)?;
    beam_search(&PosteriorMatrix::new(lp, model.blank())?, beam_width)
}

pub fn predict_batch(model: &AplModel<f32>, examples: &[Example], beam_width: usize) -> Result<Vec<Vec<usize>>> {
    super::layers::par_map(examples, |_, ex| predict(model, &ex.input, beam_width))
}

/// Micro-averaged phoneme accuracy of the recognized sequences against the
/// targets; `None` when there is nothing to score.
pub fn accuracy_of(model: &AplModel<f32>, examples: &[Example], beam_width: usize) -> Result<Option<f64>> {
    let hyps = predict_batch(model, examples, beam_width)?;
    let mut total = EditCounts::default();
    for (ex, hyp) in examples.iter().zip(&hyps) {
        total += align(&ex.target, hyp).1;
    }
    Ok(total.accuracy().ok())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    /// Epoch of the retained model; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best: AplModel<f32>,
}

/// Epoch loop with seeded shuffling. Keeps the model with the best dev
/// accuracy (the latest one when there is no dev set) and stops after
/// `patience` epochs without improvement. `on_epoch` sees each record as it
/// is produced.
pub fn fit(
    trainer: &mut Trainer,
    train: &[Example],
    dev: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    let cfg = trainer.model.config.clone();
    if train.is_empty() && cfg.max_epochs > 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut history = Vec::new();
    let mut best = trainer.model.clone();
    let mut best_epoch = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(cfg.seed, 0xe90c_0000 ^ epoch as u64));
        order.shuffle(&mut rng);
        let (mut sum, mut weight) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let skipped_before = trainer.skipped;
            if let Some(loss) = train_step(trainer, &batch)? {
                let used = batch.len() - (trainer.skipped - skipped_before);
                sum += loss * used as f64;
                weight += used;
            }
        }
        let dev_accuracy = if dev.is_empty() {
            None
        } else {
            accuracy_of(&trainer.model, dev, cfg.beam_width)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: (weight > 0).then(|| sum / weight as f64),
            dev_accuracy,
            lr: cfg.lr,
        };
        on_epoch(&record);
        history.push(record);
        match dev_accuracy {
            Some(acc) if acc > best_acc => {
                best_acc = acc;
                best = trainer.model.clone();
                best_epoch = Some(epoch);
                stale = 0;
            }
            Some(_) => stale += 1,
            None => {
                best = trainer.model.clone();
                best_epoch = Some(epoch);
            }
        }
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    Ok(FitResult {
        history,
        best_epoch,
        best,
    })
}
