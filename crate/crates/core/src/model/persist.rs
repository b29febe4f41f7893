//! Model checkpoints: learnable tensors, batchnorm statistics and optional
//! optimizer moments, keyed by dotted parameter name.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::checkpoint::{self, Entry};
use crate::numcore::optim::OptimState;
use crate::numcore::{Parameterized, Tensor};

use super::{AplConfig, AplModel};

const PARAM: &str = "param.";
const BUFFER: &str = "buffer.";
const FIRST: &str = "optim.first.";
const SECOND: &str = "optim.second.";
const STEP: &str = "optim.step";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AplModel<f32>,
    pub optim: Option<OptimState<f32>>,
}

pub fn entries(model: &AplModel<f32>, optim: Option<&OptimState<f32>>) -> Vec<Entry> {
    let mut out = Vec::new();
    model.visit_params("", &mut |n, t| out.push((format!("{PARAM}{n}"), t.clone())));
    model.visit_buffers("", &mut |n, t| out.push((format!("{BUFFER}{n}"), t.clone())));
    if let Some(s) = optim.filter(|s| !s.first.is_empty()) {
        let names = model.param_names();
        for (n, t) in names.iter().zip(&s.first) {
            out.push((format!("{FIRST}{n}"), t.clone()));
        }
        for (n, t) in names.iter().zip(&s.second) {
            out.push((format!("{SECOND}{n}"), t.clone()));
        }
        // Two 32-bit halves keep the counter exact in f32 storage.
        let halves = vec![(s.step >> 32) as u32, s.step as u32];
        let bits: Vec<f32> = halves.into_iter().map(|h| f32::from_bits(h)).collect();
        out.push((STEP.to_string(), Tensor::from_vec(&[2], bits).expect("two values")));
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &AplModel<f32>, optim: Option<&OptimState<f32>>) -> Result<()> {
    checkpoint::save(path, &entries(model, optim))
}

fn take(map: &mut BTreeMap<String, Tensor<f32>>, name: &str, like: &Tensor<f32>) -> Result<Tensor<f32>> {
    let t = map
        .remove(name)
        .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor `{name}`")))?;
    if t.shape() != like.shape() {
        return Err(Error::Data(format!(
            "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
            t.shape(),
            like.shape()
        )));
    }
    Ok(t)
}

/// Rebuilds a model described by `config` from checkpoint entries.
pub fn from_entries(config: &AplConfig, entries: Vec<Entry>) -> Result<Checkpoint> {
    let mut map = BTreeMap::new();
    for (n, t) in entries {
        if map.insert(n.clone(), t).is_some() {
            return Err(Error::Data(format!("checkpoint repeats tensor `{n}`")));
        }
    }
    let mut model = AplModel::<f32>::new(config)?;
    let mut err = None;
    model.visit_params_mut("", &mut |n, t| match take(&mut map, &format!("{PARAM}{n}"), t) {
        Ok(v) => *t = v,
        Err(e) => {
            err.get_or_insert(e);
        }
    });
    model.visit_buffers_mut("", &mut |n, t| match take(&mut map, &format!("{BUFFER}{n}"), t) {
        Ok(v) => *t = v,
        Err(e) => {
            err.get_or_insert(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let optim = match map.remove(STEP) {
        None => None,
        Some(step) => {
            let bits: Vec<u64> = step.data().iter().map(|v| u64::from(v.to_bits())).collect();
            if bits.len() != 2 {
                return Err(Error::Data("malformed optimizer step entry".into()));
            }
            let mut state = OptimState {
                step: (bits[0] << 32) | bits[1],
                ..OptimState::default()
            };
            let params = model.param_tensors();
            for (n, like) in model.param_names().iter().zip(&params) {
                state.first.push(take(&mut map, &format!("{FIRST}{n}"), like)?);
                state.second.push(take(&mut map, &format!("{SECOND}{n}"), like)?);
            }
            Some(state)
        }
    };
    if let Some(extra) = map.keys().next() {
        return Err(Error::Data(format!(
            "checkpoint tensor `{extra}` does not belong to a {} model",
            config.variant
        )));
    }
    Ok(Checkpoint { model, optim })
}

pub fn load_checkpoint(path: &Path, config: &AplConfig) -> Result<Checkpoint> {
    from_entries(config, checkpoint::load(path)?)
}
