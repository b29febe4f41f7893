use rand::Rng;

use crate::error::{Error, Result};

use super::linear::uniform;
use super::params::join;
use super::{ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor};

/// Kernel, stride and zero padding along (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn output_extent(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let out = |n: usize, k: usize, s: usize, p: usize| {
            if n + 2 * p < k || s == 0 {
                None
            } else {
                Some((n + 2 * p - k) / s + 1)
            }
        };
        match (
            out(height, self.kernel.0, self.stride.0, self.padding.0),
            out(width, self.kernel.1, self.stride.1, self.padding.1),
        ) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "input {height}x{width} smaller than kernel {:?} under padding {:?}",
                self.kernel, self.padding
            ))),
        }
    }
}

/// 2-D cross-correlation over a `[channels, height, width]` input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F = f32> {
    /// `[out_channels, in_channels, kh, kw]`
    pub weight: Tensor<F>,
    /// `[out_channels]`
    pub bias: Tensor<F>,
    pub geometry: Conv2dGeometry,
}

impl<F: Real> Conv2d<F> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, geometry: Conv2dGeometry, rng: &mut R) -> Self {
        let (kh, kw) = geometry.kernel;
        let bound = 1.0 / ((in_channels * kh * kw) as f64).sqrt();
        Conv2d {
            weight: uniform(&[out_channels, in_channels, kh, kw], bound, rng),
            bias: uniform(&[out_channels], bound, rng),
            geometry,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<(usize, usize, usize, usize)> {
        if x.rank() != 3 || x.shape()[0] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects [{}, h, w], got {:?}",
                self.in_channels(),
                x.shape()
            )));
        }
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.geometry.output_extent(h, w)?;
        Ok((h, w, oh, ow))
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (h, w, oh, ow) = self.check_input(x)?;
        let (co, ci) = (self.out_channels(), self.in_channels());
        let Conv2dGeometry {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.geometry;
        let xd = x.data();
        let wd = self.weight.data();
        let mut y = Tensor::zeros(&[co, oh, ow]);
        let yd = y.data_mut();
        for o in 0..co {
            let b = self.bias.data()[o];
            for v in &mut yd[o * oh * ow..(o + 1) * oh * ow] {
                *v = b;
            }
            for c in 0..ci {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = wd[((o * ci + c) * kh + ki) * kw + kj];
                        for i in 0..oh {
                            let xi = (i * sh + ki) as isize - ph as isize;
                            if xi < 0 || xi >= h as isize {
                                continue;
                            }
                            let xrow = &xd[(c * h + xi as usize) * w..(c * h + xi as usize + 1) * w];
                            let yrow = &mut yd[(o * oh + i) * ow..(o * oh + i + 1) * ow];
                            for (j, yv) in yrow.iter_mut().enumerate() {
                                let xj = (j * sw + kj) as isize - pw as isize;
                                if xj >= 0 && xj < w as isize {
                                    *yv = *yv + wv * xrow[xj as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates kernel and bias gradients into `grads`; returns `dL/dx`.
    pub fn backward(&self, x: &Tensor<F>, gy: &Tensor<F>, grads: &mut Self) -> Result<Tensor<F>> {
        let (h, w, oh, ow) = self.check_input(x)?;
        if gy.shape() != [self.out_channels(), oh, ow] {
            return Err(Error::Shape(format!("conv output gradient {:?}", gy.shape())));
        }
        let (co, ci) = (self.out_channels(), self.in_channels());
        let Conv2dGeometry {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.geometry;
        let xd = x.data();
        let wd = self.weight.data();
        let gyd = gy.data();
        let mut gx = Tensor::zeros(x.shape());
        for o in 0..co {
            let gb: F = gyd[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum();
            grads.bias.data_mut()[o] = grads.bias.data()[o] + gb;
            for c in 0..ci {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let widx = ((o * ci + c) * kh + ki) * kw + kj;
                        let wv = wd[widx];
                        let mut gw = F::zero();
                        for i in 0..oh {
                            let xi = (i * sh + ki) as isize - ph as isize;
                            if xi < 0 || xi >= h as isize {
                                continue;
                            }
                            let xbase = (c * h + xi as usize) * w;
                            for j in 0..ow {
                                let xj = (j * sw + kj) as isize - pw as isize;
                                if xj < 0 || xj >= w as isize {
                                    continue;
                                }
                                let g = gyd[(o * oh + i) * ow + j];
                                gw = gw + g * xd[xbase + xj as usize];
                                let gxd = gx.data_mut();
                                gxd[xbase + xj as usize] = gxd[xbase + xj as usize] + g * wv;
                            }
                        }
                        grads.weight.data_mut()[widx] = grads.weight.data()[widx] + gw;
                    }
                }
            }
        }
        Ok(gx)
    }
}

impl<F: Real> Parameterized<F> for Conv2d<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
