//! Connectionist temporal classification: the log-space forward-backward
//! objective, a brute-force path-enumeration oracle, best-path collapse and
//! prefix beam search.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::ops::log_sum_exp;
use crate::numcore::{Real, Tensor};

pub const DEFAULT_BEAM_WIDTH: usize = 10;

/// Upper bound on `C^T` for [`ctc_brute_force`].
pub const BRUTE_FORCE_GUARD: f64 = 1e6;

/// Frame-wise log-posteriors `[T', C]` with a designated blank class.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix<F = f32> {
    log_probs: Tensor<F>,
    blank: usize,
}

impl<F: Real> PosteriorMatrix<F> {
    /// Validates shape, blank index and per-row normalization.
    pub fn new(log_probs: Tensor<F>, blank: usize) -> Result<Self> {
        if log_probs.rank() != 2 || log_probs.cols() < 2 {
            return Err(Error::Shape(format!(
                "posterior matrix needs shape [T, C>=2], got {:?}",
                log_probs.shape()
            )));
        }
        if blank >= log_probs.cols() {
            return Err(Error::ClassIdOutOfRange(blank, log_probs.cols()));
        }
        let tol = 1e-6f64.max(10.0 * F::epsilon().f64() * log_probs.cols() as f64);
        for t in 0..log_probs.rows() {
            let lse = log_sum_exp(log_probs.row(t)).f64();
            if !(lse.abs() < tol) {
                return Err(Error::Data(format!(
                    "row {t} of the posterior matrix log-sums to {lse}, expected 0"
                )));
            }
        }
        Ok(PosteriorMatrix { log_probs, blank })
    }

    /// Normalizes raw scores with a row-wise log-softmax.
    pub fn from_logits(logits: &Tensor<F>, blank: usize) -> Result<Self> {
        Self::new(crate::numcore::ops::log_softmax(logits, 1)?, blank)
    }

    pub fn log_probs(&self) -> &Tensor<F> {
        &self.log_probs
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    pub fn classes(&self) -> usize {
        self.log_probs.cols()
    }

    pub fn into_inner(self) -> Tensor<F> {
        self.log_probs
    }
}

fn check_labels(labels: &[usize], classes: usize, blank: usize) -> Result<()> {
    for &l in labels {
        if l >= classes {
            return Err(Error::ClassIdOutOfRange(l, classes));
        }
        if l == blank {
            return Err(Error::Data("target sequence contains the blank class".into()));
        }
    }
    Ok(())
}

/// Number of adjacent equal pairs in `labels`.
fn repeats(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Checks that `frames` can emit `labels` under the blank-between-repeats rule.
pub fn check_feasible(frames: usize, labels: &[usize]) -> Result<()> {
    let reps = repeats(labels);
    let required = labels.len() + reps;
    if frames < required || frames == 0 {
        return Err(Error::TargetTooLong {
            frames,
            labels: labels.len(),
            repeats: reps,
            required: required.max(1),
        });
    }
    Ok(())
}

/// Full forward-backward result.
#[derive(Debug, Clone)]
pub struct CtcOutput<F> {
    /// `-ln P(labels | posteriors)`
    pub loss: F,
    /// `d loss / d log_probs`, shape `[T', C]`
    pub grad: Tensor<F>,
    /// `ln P` from the forward variables.
    pub log_p_forward: F,
    /// `ln P` from the backward variables.
    pub log_p_backward: F,
}

fn lse2<F: Real>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Runs both recursions over the blank-interleaved label sequence.
pub fn ctc_forward_backward<F: Real>(post: &PosteriorMatrix<F>, labels: &[usize]) -> Result<CtcOutput<F>> {
    let lp = post.log_probs();
    let (t_len, classes, blank) = (post.frames(), post.classes(), post.blank());
    check_labels(labels, classes, blank)?;
    check_feasible(t_len, labels)?;

    let s_len = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { labels[s / 2] })
        .collect();
    // skip transition s-2 -> s allowed for non-blank symbols differing from s-2
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = F::neg_infinity();

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp.at(0, blank);
    if s_len > 1 {
        alpha[1] = lp.at(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = lse2(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = lse2(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == ninf { ninf } else { acc + lp.at(t, ext[s]) };
        }
    }

    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp.at(t_len - 1, blank);
    if s_len > 1 {
        beta[last + s_len - 2] = lp.at(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = lse2(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = lse2(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == ninf { ninf } else { acc + lp.at(t, ext[s]) };
        }
    }

    let end = &alpha[last..last + s_len];
    let log_p_forward = if s_len > 1 {
        lse2(end[s_len - 1], end[s_len - 2])
    } else {
        end[0]
    };
    let log_p_backward = if s_len > 1 { lse2(beta[0], beta[1]) } else { beta[0] };
    if !log_p_forward.is_finite() {
        return Err(Error::Numeric(format!(
            "label sequence has zero probability (ln P = {log_p_forward})"
        )));
    }

    // d(-ln P)/d ln y_t(k) = -sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / (y_t(k) P)
    let mut grad = Tensor::zeros(&[t_len, classes]);
    let mut occ = vec![ninf; classes];
    for t in 0..t_len {
        occ.iter_mut().for_each(|v| *v = ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            occ[ext[s]] = lse2(occ[ext[s]], ab);
        }
        for k in 0..classes {
            if occ[k] != ninf {
                let gamma = (occ[k] - lp.at(t, k) - log_p_forward).exp();
                grad.set(t, k, -gamma);
            }
        }
    }

    Ok(CtcOutput {
        loss: -log_p_forward,
        grad,
        log_p_forward,
        log_p_backward,
    })
}

/// Negative log-likelihood of `labels` and its gradient w.r.t. the
/// log-posteriors.
pub fn ctc_loss<F: Real>(post: &PosteriorMatrix<F>, labels: &[usize]) -> Result<(F, Tensor<F>)> {
    let out = ctc_forward_backward(post, labels)?;
    Ok((out.loss, out.grad))
}

/// Removes adjacent duplicates, then blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Probability of `labels` by summing over every length-T' path.
pub fn ctc_brute_force<F: Real>(post: &PosteriorMatrix<F>, labels: &[usize]) -> Result<f64> {
    let (t_len, classes) = (post.frames(), post.classes());
    if (classes as f64).powi(t_len as i32) > BRUTE_FORCE_GUARD {
        return Err(Error::Config(format!(
            "{classes}^{t_len} paths exceed the enumeration guard"
        )));
    }
    let probs: Vec<f64> = post.log_probs().data().iter().map(|v| v.f64().exp()).collect();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    loop {
        if collapse(&path, post.blank()) == labels {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs[t * classes + k])
                .product::<f64>();
        }
        // odometer increment
        let mut i = t_len;
        loop {
            if i == 0 {
                return Ok(total);
            }
            i -= 1;
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Per-frame argmax (lowest index on ties), collapsed.
pub fn greedy_decode<F: Real>(post: &PosteriorMatrix<F>) -> Vec<usize> {
    let lp = post.log_probs();
    let path: Vec<usize> = (0..post.frames())
        .map(|t| {
            let row = lp.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path, post.blank())
}

#[derive(Debug, Clone, Copy)]
struct BeamScore {
    blank: f64,
    non_blank: f64,
}

impl BeamScore {
    const EMPTY: BeamScore = BeamScore {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        lse2(self.blank, self.non_blank)
    }
}

/// A decoded label sequence with its log-probability as tracked by the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub labels: Vec<usize>,
    pub log_prob: f64,
}

/// Orders by descending score, then ascending prefix.
fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// CTC prefix beam search without language model. Returns the surviving
/// hypotheses best-first.
pub fn beam_search_hypotheses<F: Real>(post: &PosteriorMatrix<F>, beam_width: usize) -> Result<Vec<BeamHypothesis>> {
    if beam_width < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let lp = post.log_probs();
    let blank = post.blank();
    let mut beams: BTreeMap<Vec<usize>, BeamScore> = BTreeMap::new();
    beams.insert(
        Vec::new(),
        BeamScore {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    );
    for t in 0..post.frames() {
        let row: Vec<f64> = lp.row(t).iter().map(|v| v.f64()).collect();
        let mut next: BTreeMap<Vec<usize>, BeamScore> = BTreeMap::new();
        for (prefix, score) in &beams {
            let entry = next.entry(prefix.clone()).or_insert(BeamScore::EMPTY);
            entry.blank = lse2(entry.blank, score.total() + row[blank]);
            let last = prefix.last().copied();
            for (c, &y) in row.iter().enumerate() {
                if c == blank {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                if Some(c) == last {
                    // repeat without a blank stays on the same prefix
                    let same = next.entry(prefix.clone()).or_insert(BeamScore::EMPTY);
                    same.non_blank = lse2(same.non_blank, score.non_blank + y);
                    let ext = next.entry(extended).or_insert(BeamScore::EMPTY);
                    ext.non_blank = lse2(ext.non_blank, score.blank + y);
                } else {
                    let ext = next.entry(extended).or_insert(BeamScore::EMPTY);
                    ext.non_blank = lse2(ext.non_blank, score.total() + y);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, f64)> = next.iter().map(|(p, s)| (p.clone(), s.total())).collect();
        ranked.sort_by(rank);
        ranked.truncate(beam_width);
        beams = ranked
            .into_iter()
            .map(|(p, _)| {
                let s = next[&p];
                (p, s)
            })
            .collect();
    }
    let mut out: Vec<(Vec<usize>, f64)> = beams.into_iter().map(|(p, s)| (p, s.total())).collect();
    out.sort_by(rank);
    Ok(out
        .into_iter()
        .map(|(labels, log_prob)| BeamHypothesis { labels, log_prob })
        .collect())
}

/// Most probable label sequence under prefix beam search.
pub fn beam_search<F: Real>(post: &PosteriorMatrix<F>, beam_width: usize) -> Result<Vec<usize>> {
    Ok(beam_search_hypotheses(post, beam_width)?
        .into_iter()
        .next()
        .map(|h| h.labels)
        .unwrap_or_default())
}
