//! One check per acceptance criterion. Each returns whether it held and a
//! one-line summary of what was measured.

use std::time::Instant;

use apl_mdd::ablation::toy_corpus;
use apl_mdd::corpus::{load_manifest, save_manifest, SynthConfig};
use apl_mdd::ctc::{beam_search, check_feasible, ctc_forward_backward, ctc_loss};
use apl_mdd::features::{fbank_energy, FbankConfig, ACOUSTIC_DIM, SAMPLE_RATE};
use apl_mdd::matfile;
use apl_mdd::model::{fit, load_checkpoint, save_checkpoint, AplConfig, AplModel, Example, Trainer};
use apl_mdd::numcore::Tensor;
use apl_mdd::scoring::{align, hierarchical_eval, mdd_metrics, EditCounts, EditOp, MddCounts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad::{suite, TOL};
use super::oracle::{preferred_alignment, random_labels, random_posteriors, random_word, sequence_posteriors, Move};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

/// Criterion 1: the forward-backward probability equals the path sum.
pub fn ctc_oracle(instances: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc7c);
    let (mut worst, mut worst_fb, mut checked, mut infeasible) = (0.0f64, 0.0f64, 0, 0);
    let mut failures = Vec::new();
    for i in 0..instances {
        let t = rng.gen_range(1..=6);
        let c = rng.gen_range(2..=4);
        let len = rng.gen_range(0..=3);
        let (probs, post) = random_posteriors(t, c, &mut rng);
        let labels = random_labels(len, c, &mut rng);
        let exact = sequence_posteriors(&probs, c - 1).get(&labels).copied().unwrap_or(0.0);
        if check_feasible(t, &labels).is_err() {
            infeasible += 1;
            if ctc_loss(&post, &labels).is_ok() || exact != 0.0 {
                failures.push(format!("instance {i}: infeasible target accepted or reachable"));
            }
            continue;
        }
        let out = ctc_forward_backward(&post, &labels).unwrap();
        worst = worst.max(((-out.loss).exp() - exact).abs());
        worst_fb = worst_fb.max((out.log_p_forward - out.log_p_backward).abs());
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        failures.is_empty() && worst < 1e-9 && worst_fb < 1e-10 && checked >= 500 && secs < 30.0,
        format!(
            "{checked} feasible + {infeasible} infeasible instances, max |exp(-loss) - brute| = {worst:.2e}, \
             max forward/backward gap = {worst_fb:.2e}, {secs:.1}s{}",
            failures.first().map(|f| format!(", {f}")).unwrap_or_default()
        ),
    )
}

/// Criterion 2: the finite-difference suite.
pub fn gradient_suite(seeds: u64) -> Outcome {
    let start = Instant::now();
    let results = suite(seeds);
    let secs = start.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(e) if *e < TOL => worst = worst.max(*e),
            Ok(e) => bad.push(format!("{name} {e:.2e}")),
            Err(e) => bad.push(format!("{name} error {e}")),
        }
    }
    Outcome::new(
        bad.is_empty() && secs < 300.0,
        format!(
            "{} components x {seeds} seeds, max relative error {worst:.2e}, {secs:.1}s{}",
            results.len(),
            if bad.is_empty() { String::new() } else { format!(", failing: {}", bad.join("; ")) }
        ),
    )
}

/// Criterion 3: exhaustive-width beam search returns the most probable
/// label sequence.
pub fn beam_optimality(instances: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xbea);
    let mut misses = Vec::new();
    for i in 0..instances {
        let t = rng.gen_range(1..=5);
        let c = rng.gen_range(2..=3);
        let (probs, post) = random_posteriors(t, c, &mut rng);
        let table = sequence_posteriors(&probs, c - 1);
        let (best, p_best) = table
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(k, v)| (k.clone(), *v))
            .unwrap();
        let got = beam_search(&post, 3usize.pow(5)).unwrap();
        let p_got = table.get(&got).copied().unwrap_or(0.0);
        // exact ties may resolve to either sequence
        if got != best && (p_best - p_got).abs() > 1e-12 {
            misses.push(format!("instance {i}: got {got:?} ({p_got:.6}), best {best:?} ({p_best:.6})"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        misses.is_empty() && instances >= 200 && secs < 60.0,
        format!(
            "{instances} instances (T'<=5, C<=3, width 243), {} non-optimal, {secs:.1}s{}",
            misses.len(),
            misses.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    )
}

fn as_moves(ops: &[EditOp]) -> Vec<Move> {
    ops.iter()
        .map(|op| match op {
            EditOp::Match => Move::Match,
            EditOp::Sub => Move::Sub,
            EditOp::Del => Move::Del,
            EditOp::Ins => Move::Ins,
        })
        .collect()
}

/// Criterion 4: the DP alignment equals the exhaustively enumerated
/// minimal alignment, tie-break order included.
pub fn alignment_oracle(pairs: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11);
    let mut misses = Vec::new();
    for i in 0..pairs {
        let a = random_word(6, 5, &mut rng);
        let b = random_word(6, 5, &mut rng);
        let (steps, counts) = align(&a, &b);
        let ops: Vec<EditOp> = steps.iter().map(|s| s.op).collect();
        let want = preferred_alignment(&a, &b);
        let tally = |m: Move| want.iter().filter(|&&x| x == m).count();
        let want_counts = EditCounts {
            substitutions: tally(Move::Sub),
            deletions: tally(Move::Del),
            insertions: tally(Move::Ins),
            reference_len: a.len(),
        };
        if as_moves(&ops) != want || counts != want_counts {
            misses.push(format!("pair {i}: {a:?} vs {b:?}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        misses.is_empty() && pairs >= 1000 && secs < 60.0,
        format!(
            "{pairs} pairs (lengths <= 6, 5 symbols), {} mismatches, {secs:.1}s{}",
            misses.len(),
            misses.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    )
}

/// Mutates `base` with random substitutions, deletions and insertions.
pub fn mutate(base: &[u8], alphabet: u8, rate: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::new();
    for &x in base {
        let r: f64 = rng.gen();
        if r < rate {
            out.push((x + rng.gen_range(1..alphabet)) % alphabet);
        } else if r >= 2.0 * rate {
            out.push(x);
        }
        if rng.gen::<f64>() < rate / 2.0 {
            out.push(rng.gen_range(0..alphabet));
        }
    }
    out
}

/// Criterion 5: metric identities over random triples and tallies.
pub fn metric_identities(triples: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c0);
    let mut bad = Vec::new();
    let mut worst_recall = 0.0f64;
    for i in 0..triples {
        let len = rng.gen_range(1..=10);
        let canonical: Vec<u8> = (0..len).map(|_| rng.gen_range(0..6)).collect();
        let perceived = mutate(&canonical, 6, 0.2, &mut rng);
        let recognized = mutate(&perceived, 6, 0.2, &mut rng);
        let h = hierarchical_eval(&canonical, &perceived, &recognized);
        let m = h.counts;
        if m.total() != canonical.len() || m.tr != m.cd + m.de {
            bad.push(format!("triple {i}: tallies {m:?} for N = {}", canonical.len()));
        }
        let metrics = mdd_metrics(&m);
        if let (Some(r), Some(far)) = (metrics.recall.value(), metrics.far.value()) {
            worst_recall = worst_recall.max((r - (1.0 - far)).abs());
        }
        let same = hierarchical_eval(&canonical, &perceived, &perceived);
        let sm = mdd_metrics(&same.counts);
        let zero = |r: Option<f64>| r.map_or(true, |v| v == 0.0);
        if same.counts.fr != 0 || same.counts.fa != 0 || same.counts.de != 0 || !zero(sm.frr.value()) || !zero(sm.far.value()) || !zero(sm.der.value()) {
            bad.push(format!("triple {i}: recognized = perceived gives {:?}", same.counts));
        }
        let canon = hierarchical_eval(&canonical, &perceived, &canonical);
        let mispronounced = canon.counts.fa;
        if canon.counts.fr != 0 || canon.counts.tr != 0 || mdd_metrics(&canon.counts).recall.value().map_or(false, |r| r != 0.0) {
            bad.push(format!("triple {i}: recognized = canonical gives {:?}", canon.counts));
        }
        let expected_fa = hierarchical_eval(&canonical, &perceived, &perceived).counts.tr;
        if mispronounced != expected_fa {
            bad.push(format!("triple {i}: FA {mispronounced} against {expected_fa} mispronounced positions"));
        }
        let tallies = MddCounts {
            ta: rng.gen_range(0..50),
            fr: rng.gen_range(0..50),
            fa: rng.gen_range(0..50),
            tr: rng.gen_range(1..50),
            ..MddCounts::default()
        };
        let t = mdd_metrics(&tallies);
        worst_recall = worst_recall.max((t.recall.value().unwrap() - (1.0 - t.far.value().unwrap())).abs());
    }
    Outcome::new(
        bad.is_empty() && worst_recall <= f64::EPSILON && triples >= 1000,
        format!(
            "{triples} triples + {triples} random tallies, {} violations, max |recall - (1 - FAR)| = {worst_recall:.1e}{}",
            bad.len(),
            bad.first().map(|b| format!(", first: {b}")).unwrap_or_default()
        ),
    )
}

/// Criterion 6: the worked examples.
pub fn hand_examples() -> Outcome {
    let c = ["t", "aa", "k"];
    let p = ["t", "ah", "k"];
    let first = hierarchical_eval(&c, &p, &p).counts;
    let second = hierarchical_eval(&c, &p, &c).counts;
    let m1 = mdd_metrics(&first);
    let m2 = mdd_metrics(&second);
    let sub = EditCounts {
        substitutions: 1,
        deletions: 1,
        insertions: 1,
        reference_len: 10,
    };
    let checks = [
        first == MddCounts { ta: 2, tr: 1, cd: 1, ..Default::default() },
        second == MddCounts { ta: 2, fa: 1, ..Default::default() },
        m1.frr.value() == Some(0.0) && m1.far.value() == Some(0.0) && m1.der.value() == Some(0.0),
        m1.detection_accuracy.value() == Some(1.0) && m1.precision.value() == Some(1.0),
        m1.recall.value() == Some(1.0) && m1.f_measure.value() == Some(1.0),
        m2.far.value() == Some(1.0) && m2.recall.value() == Some(0.0) && m2.detection_accuracy.value() == Some(2.0 / 3.0),
        sub.correctness().unwrap() == 0.8 && sub.accuracy().unwrap() == 0.7,
    ];
    let failed: Vec<usize> = checks.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i).collect();
    Outcome::new(
        failed.is_empty(),
        format!(
            "two hierarchical examples with their metrics, N=10 S=D=I=1 -> {:.1}/{:.1}; failed checks {failed:?}",
            sub.correctness().unwrap(),
            sub.accuracy().unwrap()
        ),
    )
}

fn tiny_run(seed: u64) -> apl_mdd::Result<(String, AplModel<f32>, Vec<Example>)> {
    let synth = SynthConfig {
        n_utts: 40,
        phones_per_utt: 4,
        frames_per_phone: 6,
        n_speakers: 10,
        ..SynthConfig::default()
    };
    let (inv, splits) = toy_corpus(&synth, seed)?;
    let cfg = AplConfig {
        classes: inv.len(),
        phonetic_dim: inv.len(),
        conv_channels: 2,
        rnn_hidden: 4,
        n_rnn_acoustic: 2,
        embed_dim: 4,
        ling_hidden: 4,
        dropout: 0.1,
        batch_size: 8,
        max_epochs: 3,
        beam_width: 3,
        seed,
        ..AplConfig::default()
    };
    let fbank = FbankConfig::default();
    let train = Example::from_records(&splits.train, &inv, &cfg, &fbank)?;
    let dev = Example::from_records(&splits.dev, &inv, &cfg, &fbank)?;
    let mut trainer = Trainer::new(AplModel::new(&cfg)?);
    let mut log = String::new();
    fit(&mut trainer, &train, &dev, |r| {
        log.push_str(&serde_json::to_string(r).unwrap());
        log.push('\n');
    })?;
    Ok((log, trainer.model, dev))
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Criterion 8: repeated training, checkpoint, manifest and matrix
/// round-trips.
pub fn determinism() -> Outcome {
    let run = || -> Result<Vec<(&'static str, bool)>, Box<dyn std::error::Error>> {
        let (log_a, model_a, dev) = tiny_run(11)?;
        let (log_b, model_b, _) = tiny_run(11)?;
        let mut checks = vec![("training log", log_a == log_b && !log_a.is_empty()), ("parameters", model_a == model_b)];

        let dir = tempfile::tempdir()?;
        let ckpt = dir.path().join("m.ckpt");
        save_checkpoint(&ckpt, &model_a, None)?;
        let back = load_checkpoint(&ckpt, &model_a.config)?.model;
        let same_post = dev.iter().all(|ex| {
            let a = model_a.log_posteriors(&ex.input).unwrap();
            let b = back.log_posteriors(&ex.input).unwrap();
            bits(&a) == bits(&b)
        });
        checks.push(("checkpoint posteriors", same_post));

        let synth = SynthConfig {
            n_utts: 6,
            n_speakers: 2,
            ..SynthConfig::default()
        };
        let inv = apl_mdd::phoneset::PhoneInventory::build(&apl_mdd::phoneset::InventoryMode::L2ArcticExtended)?;
        let records = apl_mdd::corpus::synth_corpus(&synth, &inv, 3)?;
        let path = dir.path().join("corpus/manifest.jsonl");
        std::fs::create_dir_all(path.parent().unwrap())?;
        save_manifest(&path, &records)?;
        let written = std::fs::read(&path)?;
        let loaded = load_manifest(&path)?;
        save_manifest(&path, &loaded)?;
        let elsewhere = dir.path().join("elsewhere.jsonl");
        save_manifest(&elsewhere, &loaded)?;
        let moved = load_manifest(&elsewhere)?;
        let same_features = records.iter().zip(&loaded).all(|(a, b)| {
            a.id == b.id
                && a.canonical == b.canonical
                && a.perceived == b.perceived
                && a.segments == b.segments
                && bits(&a.load_features(&FbankConfig::default()).unwrap().into_inner())
                    == bits(&b.load_features(&FbankConfig::default()).unwrap().into_inner())
        });
        checks.push((
            "manifest",
            same_features && moved == loaded && std::fs::read(&path)? == written,
        ));

        let m = Tensor::from_vec(&[3, 4], vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, 1e-38, 3.25, -7.0, 1e30, 0.1, 0.2, 0.3, f32::MAX])?;
        let path = dir.path().join("m.aplmat");
        matfile::save(&path, &m)?;
        let once = std::fs::read(&path)?;
        let back = matfile::load(&path)?;
        matfile::save(&path, &back)?;
        checks.push(("APLMAT1", bits(&back) == bits(&m) && back.shape() == m.shape() && std::fs::read(&path)? == once));
        Ok(checks)
    };
    match run() {
        Ok(checks) => {
            let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
            Outcome::new(
                failed.is_empty(),
                format!(
                    "two seeded training runs, checkpoint, manifest and matrix round-trips; failed: {failed:?}"
                ),
            )
        }
        Err(e) => Outcome::new(false, format!("error: {e}")),
    }
}

/// Criterion 9: output width, frame count and the silent-input case.
pub fn feature_contract() -> Outcome {
    let cfg = FbankConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut problems = Vec::new();
    for len in [400usize, 401, 559, 560, 16_000, 16_123] {
        let samples: Vec<f32> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let m = fbank_energy(&samples, SAMPLE_RATE, &cfg).unwrap();
        // 25 ms window, 10 ms hop at 16 kHz
        let want = 1 + (len - 400) / 160;
        if m.frames().cols() != ACOUSTIC_DIM || m.num_frames() != want {
            problems.push(format!("{len} samples -> {:?}", m.frames().shape()));
        }
    }
    if fbank_energy(&[0.0; 399], SAMPLE_RATE, &cfg).is_ok() {
        problems.push("399 samples accepted".into());
    }
    let silent = fbank_energy(&vec![0.0; 16_000], SAMPLE_RATE, &cfg).unwrap();
    let first = silent.frames().data()[0];
    let constant = silent.frames().data().iter().all(|&v| v.to_bits() == first.to_bits());
    let floor = (cfg.floor.ln() as f32).to_bits() == first.to_bits();
    if !constant || !floor {
        problems.push(format!("silence gives non-constant output (first value {first})"));
    }
    Outcome::new(
        problems.is_empty() && silent.num_frames() == 98,
        format!(
            "81 columns, T = 1 + floor((n - 400) / 160) on 6 lengths, 1 s -> {} frames, silence -> constant {first}{}",
            silent.num_frames(),
            problems.first().map(|p| format!(", {p}")).unwrap_or_default()
        ),
    )
}

/// Mean test metrics of one variant over seeds.
pub struct VariantMeans {
    pub variant: apl_mdd::model::Variant,
    pub f_measure: f64,
    pub accuracy: f64,
    pub per_seed: Vec<(f64, f64)>,
}

/// Criterion 7: AL, PL and APL trained on the standard toy corpus, one
/// corpus and one model seed per run.
pub fn toy_ablation(seeds: u64) -> (Outcome, Vec<VariantMeans>) {
    use apl_mdd::ablation::{run_variants, toy_model_config, toy_synth_config};
    use apl_mdd::model::Variant;

    let start = Instant::now();
    let variants = [Variant::Al, Variant::Pl, Variant::Apl];
    let mut means: Vec<VariantMeans> = variants
        .iter()
        .map(|&variant| VariantMeans {
            variant,
            f_measure: 0.0,
            accuracy: 0.0,
            per_seed: Vec::new(),
        })
        .collect();
    for seed in 0..seeds {
        let result = toy_corpus(&toy_synth_config(), seed).and_then(|(inv, splits)| {
            let base = toy_model_config(&inv, seed);
            run_variants(&base, &variants, &inv, &splits, &FbankConfig::default(), |_, _| {})
        });
        let runs = match result {
            Ok(r) => r,
            Err(e) => return (Outcome::new(false, format!("seed {seed}: {e}")), means),
        };
        for (m, run) in means.iter_mut().zip(&runs) {
            let s = &run.report.aggregate;
            let f = s.metrics().f_measure.value().unwrap_or(0.0);
            let acc = s.accuracy().value().unwrap_or(f64::NEG_INFINITY);
            m.per_seed.push((f, acc));
        }
    }
    for m in &mut means {
        let n = m.per_seed.len() as f64;
        m.f_measure = m.per_seed.iter().map(|p| p.0).sum::<f64>() / n;
        m.accuracy = m.per_seed.iter().map(|p| p.1).sum::<f64>() / n;
    }
    let secs = start.elapsed().as_secs_f64();
    let (al, pl, apl) = (&means[0], &means[1], &means[2]);
    let pass = apl.f_measure >= pl.f_measure && apl.f_measure >= al.f_measure && pl.accuracy > al.accuracy && secs < 900.0;
    let detail = format!(
        "{seeds} seeds, mean F: APL {:.4} PL {:.4} AL {:.4}; mean accuracy: APL {:.4} PL {:.4} AL {:.4}; {secs:.0}s",
        apl.f_measure, pl.f_measure, al.f_measure, apl.accuracy, pl.accuracy, al.accuracy
    );
    (Outcome::new(pass, detail), means)
}
