use rand::Rng;

use crate::error::{Error, Result};

use super::linear::uniform;
use super::params::join;
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor};

/// Single-direction LSTM with gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<F = f32> {
    /// `[4H, D]`
    pub w_ih: Tensor<F>,
    /// `[4H, H]`
    pub w_hh: Tensor<F>,
    /// `[4H]`
    pub bias: Tensor<F>,
}

/// Activations saved by [`Lstm::forward`].
#[derive(Debug, Clone)]
pub struct LstmCache<F> {
    x: Tensor<F>,
    /// post-activation gates `[T, 4H]`
    gates: Vec<F>,
    /// cell states `[T, H]`
    cells: Vec<F>,
    /// hidden states `[T, H]`
    hidden: Vec<F>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> Lstm<F> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias: Tensor<F> = uniform(&[4 * hidden], bound, rng);
        // forget gate starts open
        for b in &mut bias.data_mut()[hidden..2 * hidden] {
            *b = *b + F::one();
        }
        Lstm {
            w_ih: uniform(&[4 * hidden, input], bound, rng),
            w_hh: uniform(&[4 * hidden, hidden], bound, rng),
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[1]
    }

    /// Runs over `x: [T, D]` from zero initial states; returns `[T, H]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LstmCache<F>)> {
        if x.rank() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "lstm expects [T, {}], got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let (t_len, d, h) = (x.rows(), self.input_dim(), self.hidden_dim());
        let g4 = 4 * h;
        // input projections for all frames at once
        let mut pre = vec![F::zero(); t_len * g4];
        for t in 0..t_len {
            pre[t * g4..(t + 1) * g4].copy_from_slice(self.bias.data());
        }
        gemm_nt_acc(x.data(), self.w_ih.data(), &mut pre, t_len, d, g4);

        let mut gates = vec![F::zero(); t_len * g4];
        let mut cells = vec![F::zero(); t_len * h];
        let mut hidden = vec![F::zero(); t_len * h];
        let mut h_prev = vec![F::zero(); h];
        let mut c_prev = vec![F::zero(); h];
        for t in 0..t_len {
            let z = &mut pre[t * g4..(t + 1) * g4];
            gemm_nt_acc(&h_prev, self.w_hh.data(), z, 1, h, g4);
            let gt = &mut gates[t * g4..(t + 1) * g4];
            for k in 0..h {
                gt[k] = sigmoid(z[k]);
                gt[h + k] = sigmoid(z[h + k]);
                gt[2 * h + k] = z[2 * h + k].tanh();
                gt[3 * h + k] = sigmoid(z[3 * h + k]);
                let c = gt[h + k] * c_prev[k] + gt[k] * gt[2 * h + k];
                cells[t * h + k] = c;
                hidden[t * h + k] = gt[3 * h + k] * c.tanh();
            }
            h_prev.copy_from_slice(&hidden[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
        }
        let out = Tensor::from_vec(&[t_len, h], hidden.clone())?;
        Ok((
            out,
            LstmCache {
                x: x.clone(),
                gates,
                cells,
                hidden,
            },
        ))
    }

    /// Backpropagation through time. Accumulates into `grads`, returns `dL/dx`.
    pub fn backward(&self, cache: &LstmCache<F>, gy: &Tensor<F>, grads: &mut Self) -> Tensor<F> {
        let (t_len, d, h) = (cache.x.rows(), self.input_dim(), self.hidden_dim());
        let g4 = 4 * h;
        let mut dz_all = vec![F::zero(); t_len * g4];
        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        for t in (0..t_len).rev() {
            let gt = &cache.gates[t * g4..(t + 1) * g4];
            let dz = &mut dz_all[t * g4..(t + 1) * g4];
            for k in 0..h {
                let (i, f, g, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                let c = cache.cells[t * h + k];
                let c_prev = if t > 0 { cache.cells[(t - 1) * h + k] } else { F::zero() };
                let tc = c.tanh();
                let dh = gy.data()[t * h + k] + dh_next[k];
                let dc = dc_next[k] + dh * o * (F::one() - tc * tc);
                dz[k] = dc * g * i * (F::one() - i);
                dz[h + k] = dc * c_prev * f * (F::one() - f);
                dz[2 * h + k] = dc * i * (F::one() - g * g);
                dz[3 * h + k] = dh * tc * o * (F::one() - o);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = F::zero());
            gemm_acc(dz, self.w_hh.data(), &mut dh_next, 1, g4, h);
            if t > 0 {
                let h_prev = &cache.hidden[(t - 1) * h..t * h];
                gemm_tn_acc(dz, h_prev, grads.w_hh.data_mut(), 1, g4, h);
            }
        }
        gemm_tn_acc(&dz_all, cache.x.data(), grads.w_ih.data_mut(), t_len, g4, d);
        for t in 0..t_len {
            for (b, &g) in grads.bias.data_mut().iter_mut().zip(&dz_all[t * g4..(t + 1) * g4]) {
                *b = *b + g;
            }
        }
        let mut gx = Tensor::zeros(&[t_len, d]);
        gemm_acc(&dz_all, self.w_ih.data(), gx.data_mut(), t_len, g4, d);
        gx
    }
}

impl<F: Real> Parameterized<F> for Lstm<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Forward and time-reversed LSTMs whose outputs are concatenated per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<F = f32> {
    pub fwd: Lstm<F>,
    pub bwd: Lstm<F>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<F> {
    fwd: LstmCache<F>,
    bwd: LstmCache<F>,
}

impl<F: Real> BiLstm<F> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = Lstm::new(input, hidden, rng);
        let bwd = Lstm::new(input, hidden, rng);
        BiLstm { fwd, bwd }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    /// `[T, D] -> [T, 2H]`
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, BiLstmCache<F>)> {
        let (hf, cf) = self.fwd.forward(x)?;
        let (hb_rev, cb) = self.bwd.forward(&x.reverse_rows())?;
        let y = super::ops::concat(&hf, &hb_rev.reverse_rows(), 1)?;
        Ok((y, BiLstmCache { fwd: cf, bwd: cb }))
    }

    pub fn backward(&self, cache: &BiLstmCache<F>, gy: &Tensor<F>, grads: &mut Self) -> Tensor<F> {
        let (gf, gb) = super::ops::concat_backward(gy, self.hidden_dim(), 1).expect("bilstm output gradient");
        let mut gx = self.fwd.backward(&cache.fwd, &gf, &mut grads.fwd);
        let gx_b = self.bwd.backward(&cache.bwd, &gb.reverse_rows(), &mut grads.bwd);
        gx.add_assign(&gx_b.reverse_rows());
        gx
    }
}

impl<F: Real> Parameterized<F> for BiLstm<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.fwd.visit_params(&join(prefix, "fwd"), f);
        self.bwd.visit_params(&join(prefix, "bwd"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.fwd.visit_params_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_params_mut(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lstm = BiLstm::<f64>::new(3, 2, &mut rng);
        lstm.visit_params_mut("", &mut |_, t| t.fill(0.0));
        let x = uniform::<f64, _>(&[5, 3], 2.0, &mut rng);
        let (y, _) = lstm.forward(&x).unwrap();
        assert_eq!(y.shape(), &[5, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_is_two_independent_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = BiLstm::<f64>::new(3, 2, &mut rng);
        let x = uniform::<f64, _>(&[1, 3], 1.0, &mut rng);
        let (y, _) = lstm.forward(&x).unwrap();
        let (f, _) = lstm.fwd.forward(&x).unwrap();
        let (b, _) = lstm.bwd.forward(&x).unwrap();
        assert_eq!(&y.data()[..2], f.data());
        assert_eq!(&y.data()[2..], b.data());
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = Lstm::<f64>::new(3, 2, &mut rng);
        assert!(lstm.forward(&Tensor::zeros(&[4, 2])).is_err());
    }
}
