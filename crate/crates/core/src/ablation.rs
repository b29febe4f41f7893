//! Variant comparison on a shared corpus: train each variant, decode the
//! test split and score it with the hierarchical evaluation.

use crate::corpus::{split_speakers, synth_corpus, synth_speaker, SplitSpec, Splits, SynthConfig};
use crate::error::{Error, Result};
use crate::features::FbankConfig;
use crate::model::{fit, predict_batch, AplConfig, AplModel, EpochRecord, Example, Trainer, Variant};
use crate::phoneset::{InventoryMode, PhoneInventory};
use crate::scoring::{corpus_report, CorpusReport, ScoredUtterance};

/// Speakers held out for dev and test in the toy split.
pub const TOY_DEV_SPEAKERS: usize = 4;
pub const TOY_TEST_SPEAKERS: usize = 4;

/// The standard toy corpus: 28 speakers with 10 utterances each.
pub fn toy_synth_config() -> SynthConfig {
    SynthConfig {
        n_utts: 280,
        frames_per_phone: 8,
        noise_std: 0.3,
        embedding_noise_std: 1.0,
        embedding_sharpness: 2.0,
        ..SynthConfig::default()
    }
}

/// The toy model preset sized for `inventory`, whose oracle embeddings are
/// as wide as the inventory.
pub fn toy_model_config(inventory: &PhoneInventory, seed: u64) -> AplConfig {
    AplConfig {
        classes: inventory.len(),
        phonetic_dim: inventory.len(),
        seed,
        ..AplConfig::toy()
    }
}

/// The last speakers go to test, the ones before them to dev.
pub fn toy_split(n_speakers: usize) -> Result<SplitSpec> {
    let held = TOY_DEV_SPEAKERS + TOY_TEST_SPEAKERS;
    if n_speakers <= held {
        return Err(Error::Config(format!(
            "toy split needs more than {held} speakers, got {n_speakers}"
        )));
    }
    let names: Vec<String> = (0..n_speakers).map(|i| synth_speaker(i, n_speakers)).collect();
    let train_end = n_speakers - held;
    let dev_end = train_end + TOY_DEV_SPEAKERS;
    SplitSpec::new(&names[..train_end], &names[train_end..dev_end], &names[dev_end..])
}

/// Synthesizes and splits a toy corpus over the extended inventory.
pub fn toy_corpus(cfg: &SynthConfig, seed: u64) -> Result<(PhoneInventory, Splits)> {
    let inventory = PhoneInventory::build(&InventoryMode::L2ArcticExtended)?;
    let records = synth_corpus(cfg, &inventory, seed)?;
    let splits = split_speakers(&records, &toy_split(cfg.n_speakers)?)?;
    Ok((inventory, splits))
}

/// One trained and scored variant.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub report: CorpusReport,
    pub model: AplModel<f32>,
}

/// Trains `config` on the train split (selecting on dev) and scores the
/// retained model on the test split.
pub fn train_and_score(
    config: &AplConfig,
    inventory: &PhoneInventory,
    splits: &Splits,
    fbank: &FbankConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<VariantRun> {
    let train = Example::from_records(&splits.train, inventory, config, fbank)?;
    let dev = Example::from_records(&splits.dev, inventory, config, fbank)?;
    let test = Example::from_records(&splits.test, inventory, config, fbank)?;
    let mut trainer = Trainer::new(AplModel::new(config)?);
    let fitted = fit(&mut trainer, &train, &dev, on_epoch)?;
    let recognized = predict_batch(&fitted.best, &test, config.beam_width)?;
    let scored: Vec<ScoredUtterance<usize>> = test
        .iter()
        .zip(recognized)
        .map(|(ex, rec)| ScoredUtterance {
            id: ex.id.clone(),
            canonical: ex.input.canonical.clone(),
            perceived: ex.target.clone(),
            recognized: rec,
        })
        .collect();
    Ok(VariantRun {
        variant: config.variant,
        seed: config.seed,
        history: fitted.history,
        best_epoch: fitted.best_epoch,
        report: corpus_report(&scored)?,
        model: fitted.best,
    })
}

/// Trains every variant on the same data with the same seed.
pub fn run_variants(
    base: &AplConfig,
    variants: &[Variant],
    inventory: &PhoneInventory,
    splits: &Splits,
    fbank: &FbankConfig,
    mut on_epoch: impl FnMut(Variant, &EpochRecord),
) -> Result<Vec<VariantRun>> {
    variants
        .iter()
        .map(|&variant| {
            let cfg = AplConfig { variant, ..base.clone() };
            train_and_score(&cfg, inventory, splits, fbank, |r| on_epoch(variant, r))
        })
        .collect()
}
