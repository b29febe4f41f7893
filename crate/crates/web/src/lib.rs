//! Browser bindings: three-way MDD scoring of phone strings, CTC decoding of
//! a typed-in logit matrix, and filter banks of a synthetic chirp.
//!
//! Each binding wraps a plain function returning JSON so the logic can be
//! tested natively.

use apl_mdd::ctc::{beam_search_hypotheses, greedy_decode, PosteriorMatrix};
use apl_mdd::features::{fbank_energy, FbankConfig, ACOUSTIC_DIM, SAMPLE_RATE};
use apl_mdd::numcore::Tensor;
use apl_mdd::scoring::{align, score_utterance, ScoredUtterance};
use apl_mdd::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_BEAM: usize = 256;
const MAX_SECONDS: f64 = 10.0;

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

fn phones(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Serialize)]
struct Position {
    canonical: String,
    perceived: Option<String>,
    recognized: Option<String>,
    class: &'static str,
}

fn slots(canonical: &[String], hyp: &[String]) -> Vec<Option<String>> {
    let mut out = vec![None; canonical.len()];
    for s in align(canonical, hyp).0 {
        if let (Some(r), Some(h)) = (s.ref_index, s.hyp_index) {
            out[r] = Some(hyp[h].clone());
        }
    }
    out
}

/// Per-position classes plus the utterance summary, as JSON.
pub fn score_json(canonical: &str, perceived: &str, recognized: &str) -> Result<String> {
    let u = ScoredUtterance {
        id: "input".into(),
        canonical: phones(canonical),
        perceived: phones(perceived),
        recognized: phones(recognized),
    };
    if u.canonical.is_empty() {
        return Err(Error::Data("the canonical sequence is empty".into()));
    }
    let said = slots(&u.canonical, &u.perceived);
    let heard = slots(&u.canonical, &u.recognized);
    let positions: Vec<Position> = u
        .canonical
        .iter()
        .zip(said.into_iter().zip(heard))
        .map(|(c, (p, r))| {
            let class = match (p.as_ref() == Some(c), r.as_ref() == Some(c)) {
                (true, true) => "TA",
                (true, false) => "FR",
                (false, true) => "FA",
                (false, false) if p == r => "CD",
                (false, false) => "DE",
            };
            Position {
                canonical: c.clone(),
                perceived: p,
                recognized: r,
                class,
            }
        })
        .collect();
    let body = serde_json::json!({ "positions": positions, "summary": score_utterance(&u) });
    Ok(body.to_string())
}

/// Parses one row of numbers per line; the last column is the blank.
fn parse_logits(text: &str) -> Result<Tensor<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let vals: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("line {}: `{s}` is not a finite number", idx + 1)))
            })
            .collect::<Result<_>>()?;
        if vals.is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(Error::Data(format!("line {}: expected {c} values, found {}", idx + 1, vals.len())))
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Data("no logit rows".into()))?;
    if cols < 2 {
        return Err(Error::Data("need at least one label column and the blank column".into()));
    }
    Tensor::from_vec(&[rows, cols], data)
}

#[derive(Serialize)]
struct Hypothesis {
    labels: Vec<usize>,
    log_prob: f64,
}

/// Greedy and beam decodes of a logit matrix, as JSON.
pub fn decode_json(logits: &str, beam_width: usize) -> Result<String> {
    if beam_width == 0 || beam_width > MAX_BEAM {
        return Err(Error::Config(format!("beam width must be in 1..={MAX_BEAM}")));
    }
    let x = parse_logits(logits)?;
    let blank = x.cols() - 1;
    let post = PosteriorMatrix::from_logits(&x, blank)?;
    let beams: Vec<Hypothesis> = beam_search_hypotheses(&post, beam_width)?
        .into_iter()
        .map(|h| Hypothesis {
            labels: h.labels,
            log_prob: h.log_prob,
        })
        .collect();
    let probs: Vec<Vec<f64>> = (0..post.frames())
        .map(|t| post.log_probs().row(t).iter().map(|v| v.exp()).collect())
        .collect();
    let body = serde_json::json!({
        "blank": blank,
        "greedy": greedy_decode(&post),
        "beams": beams,
        "probs": probs,
    });
    Ok(body.to_string())
}

/// Log-mel features of a linear chirp from `f0` to `f1` Hz, row-major
/// with [`ACOUSTIC_DIM`] columns.
pub fn chirp_features(f0: f64, f1: f64, seconds: f64) -> Result<Vec<f32>> {
    let nyquist = f64::from(SAMPLE_RATE) / 2.0;
    for f in [f0, f1] {
        if !(0.0..nyquist).contains(&f) {
            return Err(Error::Config(format!("frequency {f} outside [0, {nyquist})")));
        }
    }
    if !(seconds > 0.0 && seconds <= MAX_SECONDS) {
        return Err(Error::Config(format!("duration must be in (0, {MAX_SECONDS}] seconds")));
    }
    let n = (seconds * f64::from(SAMPLE_RATE)) as usize;
    let rate = (f1 - f0) / seconds;
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(SAMPLE_RATE);
            (0.5 * (2.0 * std::f64::consts::PI * (f0 * t + 0.5 * rate * t * t)).sin()) as f32
        })
        .collect();
    let feats = fbank_energy(&samples, SAMPLE_RATE, &FbankConfig::default())?;
    Ok(feats.frames().data().to_vec())
}

#[wasm_bindgen]
pub fn score(canonical: &str, perceived: &str, recognized: &str) -> std::result::Result<String, JsError> {
    js(score_json(canonical, perceived, recognized))
}

#[wasm_bindgen]
pub fn decode(logits: &str, beam_width: usize) -> std::result::Result<String, JsError> {
    js(decode_json(logits, beam_width))
}

#[wasm_bindgen]
pub fn chirp_fbank(f0: f64, f1: f64, seconds: f64) -> std::result::Result<Vec<f32>, JsError> {
    js(chirp_features(f0, f1, seconds))
}

#[wasm_bindgen]
pub fn fbank_columns() -> usize {
    ACOUSTIC_DIM
}
