//! Central finite-difference gradient verification (64-bit).

use crate::error::{Error, Result};

use super::{Parameterized, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index (or parameter entry label) of the worst element.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            worst: String::new(),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) -> Result<()> {
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient (analytic {analytic}, numeric {numeric})"
            )));
        }
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_err || self.worst.is_empty() {
            self.max_rel_err = rel;
            self.worst = label();
            self.analytic = analytic;
            self.numeric = numeric;
        }
        Ok(())
    }
}

/// Denominator floor of [`relative_error`]. Gradients that are exactly zero
/// (a bias feeding batch normalization) meet central differences of pure
/// round-off, up to about 1e-10 for objectives of order ten.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("objective evaluated to {v}")))
    }
}

/// Compares the analytic gradient returned by `f` at `x` with central
/// differences of its value, element by element.
pub fn grad_check<G>(mut f: G, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    G: FnMut(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    let (v0, analytic) = f(x)?;
    finite(v0)?;
    if analytic.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} for input {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    let mut report = GradCheckReport::empty();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = finite(f(&probe)?.0)?;
        probe.data_mut()[i] = orig - eps;
        let minus = finite(f(&probe)?.0)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        report.record(|| i.to_string(), analytic.data()[i], numeric)?;
    }
    Ok(report)
}

/// Same check over every learnable tensor of a model. `loss` returns the
/// objective and a gradient accumulator with the model's layout.
/// `stride` > 1 checks every `stride`-th entry of each tensor.
pub fn grad_check_params<M, L>(model: &M, mut loss: L, eps: f64, stride: usize) -> Result<GradCheckReport>
where
    M: Parameterized<f64> + Clone,
    L: FnMut(&M) -> Result<(f64, M)>,
{
    let (v0, grads) = loss(model)?;
    finite(v0)?;
    let analytic = grads.param_tensors();
    let names = model.param_names();
    let mut report = GradCheckReport::empty();
    for (p, (name, g)) in names.iter().zip(&analytic).enumerate() {
        for i in (0..g.len()).step_by(stride.max(1)) {
            let mut plus_model = model.clone();
            perturb(&mut plus_model, p, i, eps);
            let plus = finite(loss(&plus_model)?.0)?;
            let mut minus_model = model.clone();
            perturb(&mut minus_model, p, i, -eps);
            let minus = finite(loss(&minus_model)?.0)?;
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(|| format!("{name}[{i}]"), g.data()[i], numeric)?;
        }
    }
    Ok(report)
}

fn perturb<M: Parameterized<f64>>(model: &mut M, tensor: usize, index: usize, delta: f64) {
    let mut k = 0;
    model.visit_params_mut("", &mut |_, t| {
        if k == tensor {
            t.data_mut()[index] += delta;
        }
        k += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ops;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let r = grad_check(
            |x| Ok((x.data().iter().map(|v| v * v).sum(), x.map(|v| 2.0 * v))),
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn softmax_sum_is_flat() {
        let x = Tensor::from_vec(&[1, 4], vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let y = ops::softmax(&x, 1).unwrap();
        let g = ops::softmax_backward(&y, &Tensor::full(&[1, 4], 1.0), 1).unwrap();
        assert!(g.max_abs() < 1e-15);
        for i in 0..4 {
            let mut p = x.clone();
            p.data_mut()[i] += DEFAULT_EPS;
            let mut m = x.clone();
            m.data_mut()[i] -= DEFAULT_EPS;
            let fp = ops::softmax(&p, 1).unwrap().sum();
            let fm = ops::softmax(&m, 1).unwrap().sum();
            assert!(((fp - fm) / (2.0 * DEFAULT_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let r = grad_check(|x| Ok((1.0 / x.data()[0], x.clone())), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
