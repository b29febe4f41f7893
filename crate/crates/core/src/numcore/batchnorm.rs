use crate::error::{Error, Result};

use super::params::join;
use super::{ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which axis of each input tensor holds the feature channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelAxis {
    /// `[channels, ...]`, e.g. convolution maps.
    First,
    /// `[rows, channels]`, e.g. per-frame feature sequences.
    Last,
}

impl ChannelAxis {
    fn channels<F: Real>(self, x: &Tensor<F>) -> usize {
        match self {
            ChannelAxis::First => x.shape()[0],
            ChannelAxis::Last => *x.shape().last().unwrap_or(&0),
        }
    }

    fn channel_of<F: Real>(self, x: &Tensor<F>, idx: usize) -> usize {
        match self {
            ChannelAxis::First => idx / (x.len() / x.shape()[0]),
            ChannelAxis::Last => idx % x.shape()[x.rank() - 1],
        }
    }
}

/// Batch normalization over every position of every tensor in a batch,
/// per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F = f32> {
    pub gain: Tensor<F>,
    pub shift: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub momentum: f64,
    pub eps: f64,
    pub axis: ChannelAxis,
}

#[derive(Debug, Clone)]
pub struct BnCache<F> {
    xhat: Vec<Tensor<F>>,
    inv_std: Vec<F>,
    mean: Vec<F>,
    var: Vec<F>,
    count: usize,
    mode: Mode,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(channels: usize, axis: ChannelAxis) -> Self {
        BatchNorm {
            gain: Tensor::full(&[channels], F::one()),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], F::one()),
            momentum: 0.1,
            eps: 1e-5,
            axis,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, xs: &[Tensor<F>], mode: Mode) -> Result<(Vec<Tensor<F>>, BnCache<F>)> {
        let ch = self.channels();
        for x in xs {
            if x.rank() == 0 || self.axis.channels(x) != ch {
                return Err(Error::Shape(format!(
                    "batchnorm over {ch} channels got {:?}",
                    x.shape()
                )));
            }
        }
        let eps = F::c(self.eps);
        let mut sum = vec![F::zero(); ch];
        let mut count = 0usize;
        let (mean, var) = match mode {
            Mode::Train => {
                for x in xs {
                    for (i, &v) in x.data().iter().enumerate() {
                        let c = self.axis.channel_of(x, i);
                        sum[c] = sum[c] + v;
                    }
                    count += x.len() / ch;
                }
                if count < 2 {
                    return Err(Error::Shape(format!(
                        "batchnorm in train mode needs at least 2 values per channel, got {count}"
                    )));
                }
                let n = F::c(count as f64);
                let mean: Vec<F> = sum.iter().map(|&s| s / n).collect();
                let mut sq = vec![F::zero(); ch];
                for x in xs {
                    for (i, &v) in x.data().iter().enumerate() {
                        let c = self.axis.channel_of(x, i);
                        let d = v - mean[c];
                        sq[c] = sq[c] + d * d;
                    }
                }
                let var = sq.iter().map(|&s| s / n).collect();
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut ys = Vec::with_capacity(xs.len());
        let mut xhats = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xhat = x.clone();
            let mut y = x.clone();
            for (i, (h, yv)) in xhat.data_mut().iter_mut().zip(y.data_mut()).enumerate() {
                let c = self.axis.channel_of(x, i);
                *h = (*h - mean[c]) * inv_std[c];
                *yv = self.gain.data()[c] * *h + self.shift.data()[c];
            }
            ys.push(y);
            xhats.push(xhat);
        }
        Ok((
            ys,
            BnCache {
                xhat: xhats,
                inv_std,
                mean,
                var,
                count,
                mode,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// estimates (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<F>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = F::c(self.momentum);
        let n = F::c(cache.count as f64);
        let unbias = n / (n - F::one());
        for c in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (F::one() - m) * *rm + m * cache.mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (F::one() - m) * *rv + m * cache.var[c] * unbias;
        }
    }

    pub fn backward(&self, cache: &BnCache<F>, gys: &[Tensor<F>], grads: &mut Self) -> Vec<Tensor<F>> {
        let ch = self.channels();
        let mut sum_g = vec![F::zero(); ch];
        let mut sum_gx = vec![F::zero(); ch];
        for (gy, xhat) in gys.iter().zip(&cache.xhat) {
            for (i, (&g, &h)) in gy.data().iter().zip(xhat.data()).enumerate() {
                let c = self.axis.channel_of(gy, i);
                sum_g[c] = sum_g[c] + g;
                sum_gx[c] = sum_gx[c] + g * h;
            }
        }
        for c in 0..ch {
            grads.gain.data_mut()[c] = grads.gain.data()[c] + sum_gx[c];
            grads.shift.data_mut()[c] = grads.shift.data()[c] + sum_g[c];
        }
        let n = F::c(cache.count as f64);
        gys.iter()
            .zip(&cache.xhat)
            .map(|(gy, xhat)| {
                let mut gx = gy.clone();
                for (i, (gv, &h)) in gx.data_mut().iter_mut().zip(xhat.data()).enumerate() {
                    let c = self.axis.channel_of(gy, i);
                    let scale = self.gain.data()[c] * cache.inv_std[c];
                    *gv = match cache.mode {
                        Mode::Train => scale * (*gv - sum_g[c] / n - h * sum_gx[c] / n),
                        Mode::Eval => scale * *gv,
                    };
                }
                gx
            })
            .collect()
    }
}

impl<F: Real> Parameterized<F> for BatchNorm<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "shift"), &self.shift);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "shift"), &mut self.shift);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
