//! Stateless layers: activations, dropout, softmax and concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Mode, Real, Tensor};

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

/// Gradient of `relu` given the forward input.
pub fn relu_backward<F: Real>(x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&xv, &g)| if xv > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Mixes a run seed with a call index into an independent stream key.
pub fn stream_key(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverted dropout. Returns the output and the multiplicative mask; the
/// backward pass is `gy * mask`. In eval mode the mask is all ones.
pub fn dropout<F: Real>(x: &Tensor<F>, rate: f64, key: u64, mode: Mode) -> Result<(Tensor<F>, Tensor<F>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Tensor::full(x.shape(), F::one())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let keep = F::c(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    Ok((
        Tensor::from_vec(x.shape(), y)?,
        Tensor::from_vec(x.shape(), mask)?,
    ))
}

pub fn mul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn check_axis<F: Real>(x: &Tensor<F>, axis: usize) -> Result<()> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!("expected a 2-D tensor, got {:?}", x.shape())));
    }
    if axis > 1 {
        return Err(Error::Shape(format!("axis {axis} out of range for rank 2")));
    }
    Ok(())
}

/// Applies `f` to every 1-D lane along `axis` of a 2-D tensor.
fn lanes_mut<F: Real>(x: &mut Tensor<F>, axis: usize, mut f: impl FnMut(&mut [F])) {
    if axis == 1 {
        let c = x.cols();
        for lane in x.data_mut().chunks_mut(c.max(1)) {
            f(lane);
        }
    } else {
        let (r, c) = (x.rows(), x.cols());
        let mut buf = vec![F::zero(); r];
        for j in 0..c {
            for i in 0..r {
                buf[i] = x.data()[i * c + j];
            }
            f(&mut buf);
            for i in 0..r {
                x.data_mut()[i * c + j] = buf[i];
            }
        }
    }
}

fn lanes2_mut<F: Real>(
    x: &mut Tensor<F>,
    other: &Tensor<F>,
    axis: usize,
    mut f: impl FnMut(&mut [F], &[F]),
) {
    let (r, c) = (x.rows(), x.cols());
    if axis == 1 {
        for i in 0..r {
            let o = other.row(i).to_vec();
            f(x.row_mut(i), &o);
        }
    } else {
        let mut a = vec![F::zero(); r];
        let mut b = vec![F::zero(); r];
        for j in 0..c {
            for i in 0..r {
                a[i] = x.data()[i * c + j];
                b[i] = other.data()[i * c + j];
            }
            f(&mut a, &b);
            for i in 0..r {
                x.data_mut()[i * c + j] = a[i];
            }
        }
    }
}

pub(crate) fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if m == F::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<F>().ln()
}

pub fn softmax<F: Real>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    check_axis(x, axis)?;
    let mut y = x.clone();
    lanes_mut(&mut y, axis, |lane| {
        let m = lane.iter().copied().fold(F::neg_infinity(), F::max);
        let mut s = F::zero();
        for v in lane.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        for v in lane.iter_mut() {
            *v = *v / s;
        }
    });
    Ok(y)
}

/// Backward of softmax given its output `y`.
pub fn softmax_backward<F: Real>(y: &Tensor<F>, gy: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    check_axis(y, axis)?;
    let mut gx = gy.clone();
    lanes2_mut(&mut gx, y, axis, |g, yl| {
        let dot: F = g.iter().zip(yl).map(|(&a, &b)| a * b).sum();
        for (gv, &yv) in g.iter_mut().zip(yl) {
            *gv = yv * (*gv - dot);
        }
    });
    Ok(gx)
}

pub fn log_softmax<F: Real>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    check_axis(x, axis)?;
    let mut y = x.clone();
    lanes_mut(&mut y, axis, |lane| {
        let lse = log_sum_exp(lane);
        for v in lane.iter_mut() {
            *v = *v - lse;
        }
    });
    Ok(y)
}

/// Backward of log-softmax given its output `y` (log-probabilities).
pub fn log_softmax_backward<F: Real>(y: &Tensor<F>, gy: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    check_axis(y, axis)?;
    let mut gx = gy.clone();
    lanes2_mut(&mut gx, y, axis, |g, yl| {
        let total: F = g.iter().copied().sum();
        for (gv, &lv) in g.iter_mut().zip(yl) {
            *gv = *gv - lv.exp() * total;
        }
    });
    Ok(gx)
}

/// Concatenates two 2-D tensors along `axis`.
pub fn concat<F: Real>(a: &Tensor<F>, b: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    check_axis(a, axis)?;
    check_axis(b, axis)?;
    match axis {
        0 => {
            if a.cols() != b.cols() {
                return Err(Error::Shape(format!("concat rows {:?} {:?}", a.shape(), b.shape())));
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::from_vec(&[a.rows() + b.rows(), a.cols()], data)
        }
        _ => {
            if a.rows() != b.rows() {
                return Err(Error::Shape(format!("concat cols {:?} {:?}", a.shape(), b.shape())));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Tensor::from_vec(&[a.rows(), a.cols() + b.cols()], data)
        }
    }
}

/// Splits a gradient of `concat(a, b, axis)` back into the parts; `split`
/// is the extent of `a` along `axis`.
pub fn concat_backward<F: Real>(g: &Tensor<F>, split: usize, axis: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    check_axis(g, axis)?;
    let (r, c) = (g.rows(), g.cols());
    match axis {
        0 => {
            if split > r {
                return Err(Error::Shape("split beyond extent".into()));
            }
            let (ga, gb) = g.data().split_at(split * c);
            Ok((
                Tensor::from_vec(&[split, c], ga.to_vec())?,
                Tensor::from_vec(&[r - split, c], gb.to_vec())?,
            ))
        }
        _ => {
            if split > c {
                return Err(Error::Shape("split beyond extent".into()));
            }
            let mut ga = Vec::with_capacity(r * split);
            let mut gb = Vec::with_capacity(r * (c - split));
            for i in 0..r {
                let row = g.row(i);
                ga.extend_from_slice(&row[..split]);
                gb.extend_from_slice(&row[split..]);
            }
            Ok((
                Tensor::from_vec(&[r, split], ga)?,
                Tensor::from_vec(&[r, c - split], gb)?,
            ))
        }
    }
}
