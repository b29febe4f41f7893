//! Plain gradient descent and the bias-corrected adaptive-moment update.

use crate::error::{Error, Result};

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimMode {
    Plain,
    AdaptiveMoments,
}

impl std::str::FromStr for OptimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(OptimMode::Plain),
            "adaptive-moments" | "adam" => Ok(OptimMode::AdaptiveMoments),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl std::fmt::Display for OptimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimMode::Plain => "plain",
            OptimMode::AdaptiveMoments => "adaptive-moments",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mode: OptimMode,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mode: OptimMode::AdaptiveMoments,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState<F> {
    pub step: u64,
    pub first: Vec<Tensor<F>>,
    pub second: Vec<Tensor<F>>,
}

/// Applies one update to `params` in place.
pub fn sgd_update<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut OptimState<F>,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let lr = F::c(cfg.lr);
    match cfg.mode {
        OptimMode::Plain => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv = *pv - lr * gv;
                }
            }
        }
        OptimMode::AdaptiveMoments => {
            if state.first.is_empty() {
                state.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
                state.second = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            }
            if state.first.len() != grads.len() {
                return Err(Error::Shape("optimizer state does not match parameters".into()));
            }
            state.step += 1;
            let (b1, b2) = (F::c(cfg.beta1), F::c(cfg.beta2));
            let bc1 = F::one() - F::c(cfg.beta1.powi(state.step as i32));
            let bc2 = F::one() - F::c(cfg.beta2.powi(state.step as i32));
            let eps = F::c(cfg.eps);
            for ((p, g), (m, v)) in params
                .iter_mut()
                .zip(grads)
                .zip(state.first.iter_mut().zip(state.second.iter_mut()))
            {
                for (((pv, &gv), mv), vv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mv = b1 * *mv + (F::one() - b1) * gv;
                    *vv = b2 * *vv + (F::one() - b2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
