use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use apl_mdd::ablation::{run_variants, toy_split};
use apl_mdd::corpus::{
    load_manifest, oracle_embedding, save_manifest, split_speakers, synth_corpus, MatrixRef, SplitSpec, Splits,
    SynthStats, UtteranceRecord,
};
use apl_mdd::features::FbankConfig;
use apl_mdd::matfile;
use apl_mdd::model::{
    fit, is_feasible, load_checkpoint, predict_batch, save_checkpoint, AplConfig, AplModel, EpochRecord, Example,
    Trainer,
};
use apl_mdd::numcore::ops::stream_key;
use apl_mdd::phoneset::PhoneInventory;
use apl_mdd::scoring::{corpus_report, render_table, ScoreSummary, ScoredUtterance, TABLE_COLUMNS};
use apl_mdd::{Error, Result};
use serde_json::json;

use crate::config::{EmbeddingSource, RunConfig, SplitMode};

const HELD_SPEAKERS: usize = 4;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
}

fn sidecar(checkpoint: &Path, ext: &str) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn id_key(id: &str) -> u64 {
    // FNV-1a
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Replaces the embeddings of `records` with oracle ones when configured.
fn attach_embeddings(
    cfg: &RunConfig,
    records: &mut [UtteranceRecord],
    inventory: &PhoneInventory,
    fbank: &FbankConfig,
    seed: u64,
) -> Result<()> {
    if cfg.embeddings != EmbeddingSource::Oracle {
        return Ok(());
    }
    for r in records.iter_mut() {
        if r.segments.is_empty() {
            return Err(Error::Data(format!("{}: oracle embeddings need timed segments", r.id)));
        }
        let frames = r.load_features(fbank)?.num_frames();
        let emb = oracle_embedding(
            r,
            inventory,
            frames,
            fbank.hop_s,
            cfg.synth.embedding_sharpness,
            cfg.synth.embedding_noise_std,
            stream_key(seed, id_key(&r.id)),
        )?;
        r.phonetic_embedding = Some(MatrixRef::Inline(Arc::new(emb)));
    }
    Ok(())
}

fn embedding_width(cfg: &AplConfig, records: &[UtteranceRecord]) -> Result<Option<usize>> {
    if !cfg.variant.uses_phonetic() {
        return Ok(None);
    }
    match records.first() {
        Some(r) => Ok(r.load_embedding()?.map(|e| e.cols())),
        None => Ok(None),
    }
}

/// Sorted speakers; the last four test, the four before them dev.
fn tail_split(records: &[UtteranceRecord]) -> Result<SplitSpec> {
    let speakers: Vec<String> = records
        .iter()
        .map(|r| r.speaker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if speakers.len() <= 2 * HELD_SPEAKERS {
        return Err(Error::Data(format!(
            "the tail split needs more than {} speakers, found {}",
            2 * HELD_SPEAKERS,
            speakers.len()
        )));
    }
    let n = speakers.len();
    SplitSpec::new(
        &speakers[..n - 2 * HELD_SPEAKERS],
        &speakers[n - 2 * HELD_SPEAKERS..n - HELD_SPEAKERS],
        &speakers[n - HELD_SPEAKERS..],
    )
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inventory = cfg.load_inventory()?;
    let seed = cfg.model.seed;
    let records = synth_corpus(&cfg.synth, &inventory, seed)?;
    let manifest = out.join("manifest.jsonl");
    save_manifest(&manifest, &records)?;
    write(&out.join("inventory.txt"), &inventory.to_text())?;
    let stored = load_manifest(&manifest)?;
    match toy_split(cfg.synth.n_speakers).and_then(|spec| split_speakers(&stored, &spec)) {
        Ok(splits) => {
            for (name, part) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
                save_manifest(&out.join(format!("{name}.jsonl")), part)?;
            }
        }
        Err(e) => log::warn!("no split manifests written: {e}"),
    }
    let model = cfg.model_for(&inventory, Some(inventory.len()))?;
    cfg.write(out, &model)?;

    let stats = SynthStats::of(&records);
    println!("utterances            {}", records.len());
    println!("speakers              {}", cfg.synth.n_speakers.min(records.len()));
    println!("canonical phones      {}", stats.positions);
    println!(
        "perceived phones      {}",
        records.iter().map(|r| r.perceived.len()).sum::<usize>()
    );
    println!("substitutions         {} ({:.4})", stats.substitutions, stats.rate(stats.substitutions));
    println!("deletions             {} ({:.4})", stats.deletions, stats.rate(stats.deletions));
    println!("insertions            {} ({:.4})", stats.insertions, stats.rate(stats.insertions));
    Ok(())
}

fn save_with_sidecars(path: &Path, model: &AplModel<f32>, trainer: Option<&Trainer>, inventory: &PhoneInventory) -> Result<()> {
    save_checkpoint(path, model, trainer.map(|t| &t.optim))?;
    write(&sidecar(path, "config"), &model.config.to_kv())?;
    write(&sidecar(path, "inventory"), &inventory.to_text())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fbank = FbankConfig::default();
    let inventory = cfg.load_inventory()?;
    let seed = cfg.model.seed;
    let mut records = load_manifest(required(&cfg.manifest, "manifest")?)?;
    let mut dev = match &cfg.dev_manifest {
        Some(p) => load_manifest(p)?,
        None => Vec::new(),
    };
    if cfg.model.variant.uses_phonetic() {
        attach_embeddings(cfg, &mut records, &inventory, &fbank, seed)?;
        attach_embeddings(cfg, &mut dev, &inventory, &fbank, seed)?;
    }
    let model_cfg = cfg.model_for(&inventory, embedding_width(&cfg.model, &records)?)?;
    cfg.write(out, &model_cfg)?;
    let train = Example::from_records(&records, &inventory, &model_cfg, &fbank)?;
    let dev = Example::from_records(&dev, &inventory, &model_cfg, &fbank)?;

    let mut trainer = Trainer::new(AplModel::new(&model_cfg)?);
    let mut infeasible = 0;
    for ex in &train {
        if !is_feasible(&trainer.model, ex)? {
            infeasible += 1;
        }
    }
    if infeasible > 0 {
        println!("infeasible training utterances: {infeasible} of {} (skipped)", train.len());
    }
    if infeasible == train.len() && model_cfg.max_epochs > 0 {
        return Err(Error::Data(format!(
            "no training utterance fits its input: all {} are infeasible",
            train.len()
        )));
    }

    let mut log_text = String::new();
    let fitted = fit(&mut trainer, &train, &dev, |r: &EpochRecord| {
        log::info!(
            "epoch {} loss {:?} dev accuracy {:?}",
            r.epoch,
            r.train_loss,
            r.dev_accuracy
        );
        log_text.push_str(&serde_json::to_string(r).expect("plain record"));
        log_text.push('\n');
    })?;
    write(&out.join("epochs.jsonl"), &log_text)?;
    write(&out.join("inventory.txt"), &inventory.to_text())?;
    save_with_sidecars(&out.join("best.ckpt"), &fitted.best, None, &inventory)?;
    save_with_sidecars(&out.join("final.ckpt"), &trainer.model, Some(&trainer), &inventory)?;
    println!(
        "trained {} for {} epochs; best epoch {}",
        model_cfg.variant,
        fitted.history.len(),
        fitted.best_epoch.map_or("none".into(), |e| e.to_string())
    );
    Ok(())
}

pub fn infer(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fbank = FbankConfig::default();
    let ckpt = required(&cfg.checkpoint, "checkpoint")?;
    let stored = PhoneInventory::from_text(&read(&sidecar(ckpt, "inventory"))?)?;
    let inventory = cfg.load_inventory()?;
    if stored.checksum() != inventory.checksum() {
        return Err(Error::Data(format!(
            "inventory checksum {} does not match the checkpoint's inventory checksum {}",
            inventory.checksum(),
            stored.checksum()
        )));
    }
    let mut model_cfg = AplConfig::from_kv(&read(&sidecar(ckpt, "config"))?)?;
    if cfg.is_explicit("beam_width") {
        model_cfg.beam_width = cfg.model.beam_width;
    }
    cfg.write(out, &model_cfg)?;
    let model = load_checkpoint(ckpt, &model_cfg)?.model;
    let mut records = load_manifest(required(&cfg.manifest, "manifest")?)?;
    if model_cfg.variant.uses_phonetic() {
        attach_embeddings(cfg, &mut records, &inventory, &fbank, cfg.model.seed)?;
    }
    let examples = Example::from_records(&records, &inventory, &model_cfg, &fbank)?;
    let recognized = predict_batch(&model, &examples, model_cfg.beam_width)?;
    let mut text = String::new();
    for (ex, ids) in examples.iter().zip(&recognized) {
        let labels: Vec<String> = inventory.decode(ids)?.iter().map(|l| l.to_string()).collect();
        text.push_str(&format!("{}\t{}\n", ex.id, labels.join(" ")));
    }
    let target = cfg.recognized.clone().unwrap_or_else(|| out.join("recognized.txt"));
    write(&target, &text)?;
    if cfg.posteriors {
        let dir = out.join("posteriors");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for ex in &examples {
            matfile::save(&dir.join(format!("{}.aplmat", ex.id)), &model.log_posteriors(&ex.input)?)?;
        }
    }
    println!("decoded {} utterances into {}", examples.len(), target.display());
    Ok(())
}

/// Reads `id<TAB>phone phone ...` lines.
pub fn parse_recognized(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, phones) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "expected `id<TAB>phones`".into(),
        })?;
        out.push((id.to_string(), phones.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}

pub fn score(cfg: &RunConfig, out: &Path) -> Result<()> {
    let records = load_manifest(required(&cfg.manifest, "manifest")?)?;
    let recognized = parse_recognized(&read(required(&cfg.recognized, "recognized")?)?)?;
    cfg.write(out, &cfg.model)?;
    let mut by_id: BTreeMap<&str, &[String]> = BTreeMap::new();
    let mut problems = Vec::new();
    for (id, phones) in &recognized {
        if by_id.insert(id, phones).is_some() {
            problems.push(format!("duplicate recognized id {id}"));
        }
    }
    let known: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    for id in by_id.keys().filter(|id| !known.contains(*id)) {
        problems.push(format!("unknown utterance id {id}"));
    }
    for r in records.iter().filter(|r| !by_id.contains_key(r.id.as_str())) {
        problems.push(format!("no recognized sequence for {}", r.id));
    }
    if !problems.is_empty() {
        return Err(Error::Data(format!("id mismatches:\n  {}", problems.join("\n  "))));
    }
    let strings = |ls: &[apl_mdd::phoneset::PhoneLabel]| ls.iter().map(|l| l.to_string()).collect::<Vec<_>>();
    let scored: Vec<ScoredUtterance<String>> = records
        .iter()
        .map(|r| ScoredUtterance {
            id: r.id.clone(),
            canonical: strings(&r.canonical),
            perceived: strings(&r.perceived),
            recognized: by_id[r.id.as_str()].to_vec(),
        })
        .collect();
    let report = corpus_report(&scored)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    write(&out.join("report.json"), &(json + "\n"))?;
    let text = report_text(&report.aggregate, scored.len());
    write(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn report_text(s: &ScoreSummary, utterances: usize) -> String {
    let m = &s.mdd;
    let e = &s.edit;
    format!(
        "utterances {utterances}\n\
         recognition N={} S={} D={} I={}\n\
         detection TA={} FR={} FA={} TR={} CD={} DE={} insertions_excluded={}\n\n{}",
        e.reference_len,
        e.substitutions,
        e.deletions,
        e.insertions,
        m.ta,
        m.fr,
        m.fa,
        m.tr,
        m.cd,
        m.de,
        s.insertions_excluded,
        render_table(&[("all".to_string(), s.clone())])
    )
}

fn ablation_data(cfg: &RunConfig, seed: u64, fbank: &FbankConfig) -> Result<(PhoneInventory, Splits)> {
    let inventory = cfg.load_inventory()?;
    let mut records = match &cfg.manifest {
        Some(p) => load_manifest(p)?,
        None => synth_corpus(&cfg.synth, &inventory, seed)?,
    };
    let spec = match (&cfg.manifest, cfg.split) {
        (None, _) => toy_split(cfg.synth.n_speakers)?,
        (Some(_), SplitMode::Tail) => tail_split(&records)?,
        (Some(_), SplitMode::L2Arctic) => SplitSpec::l2arctic_default(),
    };
    if cfg.manifest.is_some() && cfg.variants.iter().any(|v| v.uses_phonetic()) {
        attach_embeddings(cfg, &mut records, &inventory, fbank, seed)?;
    }
    Ok((inventory, split_speakers(&records, &spec)?))
}

pub fn ablation(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fbank = FbankConfig::default();
    let mut totals: Vec<Option<ScoreSummary>> = vec![None; cfg.variants.len()];
    let mut per_seed = Vec::new();
    let mut written = false;
    for &seed in &cfg.seeds {
        let (inventory, splits) = ablation_data(cfg, seed, &fbank)?;
        let width = match splits.train.first() {
            Some(r) => r.load_embedding()?.map(|e| e.cols()),
            None => None,
        };
        let mut base = cfg.model_for(&inventory, width)?;
        base.seed = seed;
        if !written {
            cfg.write(out, &base)?;
            written = true;
        }
        let mut logs: BTreeMap<String, String> = BTreeMap::new();
        let runs = run_variants(&base, &cfg.variants, &inventory, &splits, &fbank, |v, r| {
            log::info!("{v} seed {seed} epoch {} dev accuracy {:?}", r.epoch, r.dev_accuracy);
            let text = logs.entry(v.to_string()).or_default();
            text.push_str(&serde_json::to_string(r).expect("plain record"));
            text.push('\n');
        })?;
        for (name, text) in &logs {
            write(&out.join(format!("epochs_{name}_seed{seed}.jsonl")), text)?;
        }
        for (slot, run) in totals.iter_mut().zip(&runs) {
            let s = &run.report.aggregate;
            match slot {
                Some(t) => {
                    t.edit += s.edit;
                    t.mdd += s.mdd;
                    t.insertions_excluded += s.insertions_excluded;
                }
                None => *slot = Some(s.clone()),
            }
            per_seed.push(json!({
                "variant": run.variant.to_string(),
                "seed": seed,
                "best_epoch": run.best_epoch,
                "summary": s,
            }));
        }
    }
    let rows: Vec<(String, ScoreSummary)> = cfg
        .variants
        .iter()
        .zip(totals)
        .map(|(v, s)| (v.to_string(), s.expect("at least one seed")))
        .collect();
    let table = render_table(&rows);
    write(&out.join("ablation.txt"), &table)?;
    let json = json!({
        "columns": TABLE_COLUMNS,
        "seeds": cfg.seeds,
        "rows": rows.iter().map(|(v, s)| json!({"variant": v, "summary": s})).collect::<Vec<_>>(),
        "per_seed": per_seed,
    });
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Data(e.to_string()))?;
    write(&out.join("ablation.json"), &(text + "\n"))?;
    print!("{table}");
    Ok(())
}
