use rand::Rng;

use crate::error::{Error, Result};

use super::params::join;
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor};

pub(crate) fn uniform<F: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::c(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_vec(shape, data).expect("volume matches")
}

/// `y = x W^T + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F = f32> {
    /// `[out, in]`
    pub weight: Tensor<F>,
    /// `[out]`
    pub bias: Tensor<F>,
}

impl<F: Real> Linear<F> {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: uniform(&[output, input], bound, rng),
            bias: uniform(&[output], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        if x.rank() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "linear expects [n, {}], got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let (n, d, o) = (x.rows(), self.input_dim(), self.output_dim());
        let mut y = Tensor::zeros(&[n, o]);
        for r in 0..n {
            y.row_mut(r).copy_from_slice(self.bias.data());
        }
        gemm_nt_acc(x.data(), self.weight.data(), y.data_mut(), n, d, o);
        Ok(y)
    }

    /// Accumulates weight/bias gradients into `grads`; returns `dL/dx`.
    pub fn backward(&self, x: &Tensor<F>, gy: &Tensor<F>, grads: &mut Self) -> Tensor<F> {
        let (n, d, o) = (x.rows(), self.input_dim(), self.output_dim());
        gemm_tn_acc(gy.data(), x.data(), grads.weight.data_mut(), n, o, d);
        for r in 0..n {
            for (b, &g) in grads.bias.data_mut().iter_mut().zip(gy.row(r)) {
                *b = *b + g;
            }
        }
        let mut gx = Tensor::zeros(&[n, d]);
        gemm_acc(gy.data(), self.weight.data(), gx.data_mut(), n, o, d);
        gx
    }
}

impl<F: Real> Parameterized<F> for Linear<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Lookup table from class ids to dense vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<F = f32> {
    /// `[vocab, dim]`
    pub table: Tensor<F>,
}

impl<F: Real> Embedding<F> {
    pub fn new<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: uniform(&[vocab, dim], 1.0, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor<F>> {
        let mut out = Tensor::zeros(&[ids.len(), self.dim()]);
        for (r, &id) in ids.iter().enumerate() {
            if id >= self.vocab() {
                return Err(Error::ClassIdOutOfRange(id, self.vocab()));
            }
            out.row_mut(r).copy_from_slice(self.table.row(id));
        }
        Ok(out)
    }

    pub fn backward(&self, ids: &[usize], gy: &Tensor<F>, grads: &mut Self) {
        for (r, &id) in ids.iter().enumerate() {
            for (g, &v) in grads.table.row_mut(id).iter_mut().zip(gy.row(r)) {
                *g = *g + v;
            }
        }
    }
}

impl<F: Real> Parameterized<F> for Embedding<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join(prefix, "table"), &self.table);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        f(&join(prefix, "table"), &mut self.table);
    }
}
