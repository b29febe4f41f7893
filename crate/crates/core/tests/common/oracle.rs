//! Exhaustive reference implementations, written in the probability domain
//! and by plain enumeration so they share no code with the library.

use std::collections::BTreeMap;

use apl_mdd::ctc::PosteriorMatrix;
use apl_mdd::numcore::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random row-stochastic matrix `[t, c]`, returned as probabilities and as a
/// validated log-posterior matrix with the last class as blank.
pub fn random_posteriors(t: usize, c: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, PosteriorMatrix<f64>) {
    let mut probs = Vec::with_capacity(t);
    for _ in 0..t {
        let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.5f64..2.5).exp()).collect();
        let z: f64 = raw.iter().sum();
        probs.push(raw.into_iter().map(|v| v / z).collect::<Vec<f64>>());
    }
    let logs: Vec<f64> = probs.iter().flatten().map(|p| p.ln()).collect();
    let post = PosteriorMatrix::new(Tensor::from_vec(&[t, c], logs).unwrap(), c - 1).unwrap();
    (probs, post)
}

/// Collapse rule written as a fold: keep a symbol when it differs from its
/// predecessor in the path, then drop blanks.
fn reduce(path: &[usize], blank: usize) -> Vec<usize> {
    path.iter()
        .enumerate()
        .filter(|&(i, &k)| k != blank && (i == 0 || path[i - 1] != k))
        .map(|(_, &k)| k)
        .collect()
}

/// Every length-`t` path over `c` classes, by recursion.
fn paths(t: usize, c: usize) -> Vec<Vec<usize>> {
    if t == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in paths(t - 1, c) {
        for k in 0..c {
            let mut q = p.clone();
            q.push(k);
            out.push(q);
        }
    }
    out
}

/// Probability of every label sequence reachable from some path.
pub fn sequence_posteriors(probs: &[Vec<f64>], blank: usize) -> BTreeMap<Vec<usize>, f64> {
    let c = probs.first().map_or(0, Vec::len);
    let mut out = BTreeMap::new();
    for path in paths(probs.len(), c) {
        let p: f64 = path.iter().enumerate().map(|(t, &k)| probs[t][k]).product();
        *out.entry(reduce(&path, blank)).or_insert(0.0) += p;
    }
    out
}

pub fn sequence_probability(probs: &[Vec<f64>], blank: usize, labels: &[usize]) -> f64 {
    sequence_posteriors(probs, blank).get(labels).copied().unwrap_or(0.0)
}

/// Random label sequence of length `len` over the non-blank classes
/// `0..c-1`.
pub fn random_labels(len: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..c - 1)).collect()
}

/// Edit operation ranks in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Move {
    Match,
    Sub,
    Del,
    Ins,
}

/// Every alignment of `a` against `b` as a sequence of moves, by recursion
/// from the front.
pub fn all_alignments(a: &[u8], b: &[u8]) -> Vec<Vec<Move>> {
    if a.is_empty() && b.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut extend = |first: Move, rest: Vec<Vec<Move>>| {
        for mut r in rest {
            r.insert(0, first);
            out.push(r);
        }
    };
    if !a.is_empty() && !b.is_empty() {
        let m = if a[0] == b[0] { Move::Match } else { Move::Sub };
        extend(m, all_alignments(&a[1..], &b[1..]));
    }
    if !a.is_empty() {
        extend(Move::Del, all_alignments(&a[1..], b));
    }
    if !b.is_empty() {
        extend(Move::Ins, all_alignments(a, &b[1..]));
    }
    out
}

pub fn cost(moves: &[Move]) -> usize {
    moves.iter().filter(|&&m| m != Move::Match).count()
}

/// The minimal-cost alignment a backtrace from the end picks when it
/// prefers match, then substitution, deletion and insertion: among the
/// optimal alignments, the smallest one read back to front.
pub fn preferred_alignment(a: &[u8], b: &[u8]) -> Vec<Move> {
    let all = all_alignments(a, b);
    let best = all.iter().map(|m| cost(m)).min().unwrap();
    all.into_iter()
        .filter(|m| cost(m) == best)
        .min_by(|x, y| x.iter().rev().cmp(y.iter().rev()))
        .unwrap()
}

pub fn random_word(max_len: usize, alphabet: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
}
