//! Synthetic corpus with controlled mispronunciations.
//!
//! Features are rendered directly: each perceived phone holds a one-hot
//! template (column `id mod 80`, plus the energy column) for
//! `frames_per_phone` frames. A deleted phone leaves a gap of the same length
//! with no template. The oracle embedding is a softmax over the inventory,
//! peaked on the perceived phone (on the blank inside gaps).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{ACOUSTIC_DIM, HOP_S, N_MELS};
use crate::numcore::Tensor;
use crate::phoneset::{PhoneInventory, PhoneLabel};

use super::{AnnotationSegment, ErrorType, FeatureSource, MatrixRef, UtteranceRecord};

const SILENCE: &str = "sil";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_utts: usize,
    pub phones_per_utt: usize,
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub frames_per_phone: usize,
    pub noise_std: f64,
    pub embedding_noise_std: f64,
    /// Logit margin of the embedding peak.
    pub embedding_sharpness: f64,
    pub n_speakers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utts: 280,
            phones_per_utt: 8,
            sub_rate: 0.15,
            del_rate: 0.05,
            ins_rate: 0.0,
            frames_per_phone: 4,
            noise_std: 0.5,
            embedding_noise_std: 1.0,
            embedding_sharpness: 6.0,
            n_speakers: 28,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("sub_rate", self.sub_rate), ("del_rate", self.del_rate), ("ins_rate", self.ins_rate)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} outside [0, 1)")));
            }
        }
        if self.sub_rate + self.del_rate >= 1.0 {
            return Err(Error::Config("sub_rate + del_rate must be below 1".into()));
        }
        if self.frames_per_phone < 2 {
            return Err(Error::Config("frames_per_phone must be at least 2".into()));
        }
        if self.n_speakers == 0 {
            return Err(Error::Config("n_speakers must be positive".into()));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("embedding_noise_std", self.embedding_noise_std),
            ("embedding_sharpness", self.embedding_sharpness),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Speaker name of utterance `index`.
pub fn synth_speaker(index: usize, n_speakers: usize) -> String {
    format!("spk{:02}", index % n_speakers)
}

/// Generates `cfg.n_utts` records deterministically from `seed`.
pub fn synth_corpus(cfg: &SynthConfig, inventory: &PhoneInventory, seed: u64) -> Result<Vec<UtteranceRecord>> {
    cfg.validate()?;
    let candidates: Vec<usize> = inventory
        .plain_ids()
        .into_iter()
        .filter(|&i| inventory.classes()[i].as_str() != SILENCE)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Config("inventory has no plain phones to draw from".into()));
    }
    if cfg.sub_rate > 0.0 && candidates.len() < 2 {
        return Err(Error::Config("substitutions need at least two plain phones".into()));
    }
    let silence = PhoneLabel::new(SILENCE)?;
    let acoustic_noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let embed_noise = Normal::new(0.0, cfg.embedding_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = inventory.classes();
    let n_classes = inventory.len();

    let mut out = Vec::with_capacity(cfg.n_utts);
    for u in 0..cfg.n_utts {
        // (canonical id, perceived id, error); ids index `classes`.
        let mut plan: Vec<(usize, usize, ErrorType)> = Vec::new();
        for _ in 0..cfg.phones_per_utt {
            let c = candidates[rng.gen_range(0..candidates.len())];
            let draw: f64 = rng.gen();
            if draw < cfg.sub_rate {
                let mut p = candidates[rng.gen_range(0..candidates.len() - 1)];
                if p == c {
                    p = candidates[candidates.len() - 1];
                }
                plan.push((c, p, ErrorType::Substitution));
            } else if draw < cfg.sub_rate + cfg.del_rate {
                plan.push((c, inventory.blank_id(), ErrorType::Deletion));
            } else {
                plan.push((c, c, ErrorType::None));
            }
            while rng.gen::<f64>() < cfg.ins_rate {
                let p = candidates[rng.gen_range(0..candidates.len())];
                plan.push((inventory.blank_id(), p, ErrorType::Addition));
            }
        }

        let frames = plan.len() * cfg.frames_per_phone;
        let mut feats = Tensor::<f32>::zeros(&[frames, ACOUSTIC_DIM]);
        let mut embed = Tensor::<f32>::zeros(&[frames, n_classes]);
        let mut segments = Vec::with_capacity(plan.len());
        let mut logits = vec![0.0f64; n_classes];
        for (k, &(c, p, error)) in plan.iter().enumerate() {
            let spoken = p != inventory.blank_id();
            for f in k * cfg.frames_per_phone..(k + 1) * cfg.frames_per_phone {
                let row = feats.row_mut(f);
                for v in row.iter_mut() {
                    *v = acoustic_noise.sample(&mut rng) as f32;
                }
                if spoken {
                    row[p % N_MELS] += 1.0;
                    row[N_MELS] += 1.0;
                }
                embedding_row(&mut logits, p, cfg.embedding_sharpness, &embed_noise, &mut rng, embed.row_mut(f));
            }
            let start = (k * cfg.frames_per_phone) as f64 * HOP_S;
            let end = ((k + 1) * cfg.frames_per_phone) as f64 * HOP_S;
            let (canonical, perceived) = match error {
                ErrorType::Addition => (silence.clone(), classes[p].clone()),
                ErrorType::Deletion => (classes[c].clone(), silence.clone()),
                _ => (classes[c].clone(), classes[p].clone()),
            };
            segments.push(AnnotationSegment::new(start, end, canonical, perceived, error)?);
        }
        out.push(UtteranceRecord::from_segments(
            format!("synth{u:05}"),
            synth_speaker(u, cfg.n_speakers),
            FeatureSource::Features(MatrixRef::Inline(Arc::new(feats))),
            Some(MatrixRef::Inline(Arc::new(embed))),
            segments,
        ));
    }
    Ok(out)
}

/// Softmax of `sharpness * onehot(peak) + noise`, written into `out`.
fn embedding_row<R: Rng>(logits: &mut [f64], peak: usize, sharpness: f64, noise: &Normal<f64>, rng: &mut R, out: &mut [f32]) {
    for (j, l) in logits.iter_mut().enumerate() {
        *l = if j == peak { sharpness } else { 0.0 } + noise.sample(rng);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    for (dst, l) in out.iter_mut().zip(logits.iter()) {
        *dst = ((l - max).exp() / z) as f32;
    }
}

/// Oracle phonetic embedding for `frames` frames of `record`, built from its
/// timed segments: frame `f` (starting at `f * hop_s`) peaks on the
/// perceived phone of the segment it falls in, and on the blank inside
/// deletions and outside every segment.
pub fn oracle_embedding(
    record: &UtteranceRecord,
    inventory: &PhoneInventory,
    frames: usize,
    hop_s: f64,
    sharpness: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Tensor<f32>> {
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let peaks: Vec<(f64, f64, usize)> = record
        .segments
        .iter()
        .map(|s| {
            let id = match s.error {
                ErrorType::Deletion => inventory.blank_id(),
                _ => inventory.id_of(s.perceived.as_str())?,
            };
            Ok((s.start_s, s.end_s, id))
        })
        .collect::<Result<_>>()?;
    let mut out = Tensor::<f32>::zeros(&[frames, inventory.len()]);
    let mut logits = vec![0.0f64; inventory.len()];
    for f in 0..frames {
        // small offset keeps frames that start on a boundary in the later segment
        let t = (f as f64 + 1e-6) * hop_s;
        let peak = peaks
            .iter()
            .find(|(a, b, _)| *a <= t && t < *b)
            .map_or(inventory.blank_id(), |p| p.2);
        embedding_row(&mut logits, peak, sharpness, &noise, &mut rng, out.row_mut(f));
    }
    Ok(out)
}

/// Per-position error counts over a set of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynthStats {
    pub positions: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl SynthStats {
    pub fn of(records: &[UtteranceRecord]) -> Self {
        let mut s = SynthStats::default();
        for seg in records.iter().flat_map(|r| &r.segments) {
            match seg.error {
                ErrorType::Addition => s.insertions += 1,
                ErrorType::Substitution => {
                    s.positions += 1;
                    s.substitutions += 1
                }
                ErrorType::Deletion => {
                    s.positions += 1;
                    s.deletions += 1
                }
                ErrorType::None => s.positions += 1,
            }
        }
        s
    }

    pub fn rate(&self, count: usize) -> f64 {
        count as f64 / self.positions.max(1) as f64
    }
}
