//! Encoder building blocks. Every forward pass takes a whole batch so that
//! batch normalization sees all utterances at once; caches hold what the
//! matching backward pass needs.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::ops::{self, stream_key};
use crate::numcore::params::join;
use crate::numcore::{
    BatchNorm, BiLstm, BiLstmCache, BnCache, ChannelAxis, Conv2d, Conv2dGeometry, Embedding, Linear, Mode,
    ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor,
};

/// Order-preserving parallel map.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync) -> Result<Vec<U>> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Per-utterance gradients summed in input order.
fn reduce_grads<L: Parameterized<F> + Clone, F: Real>(grads: &mut L, parts: Vec<L>) {
    for p in &parts {
        grads.add_params(p);
    }
}

fn dropout_all<F: Real>(xs: Vec<Tensor<F>>, rate: f64, key: u64, mode: Mode) -> Result<(Vec<Tensor<F>>, Vec<Tensor<F>>)> {
    let pairs = par_map(&xs, |u, x| ops::dropout(x, rate, stream_key(key, u as u64), mode))?;
    Ok(pairs.into_iter().unzip())
}

fn mask_all<F: Real>(gys: &[Tensor<F>], masks: &[Tensor<F>]) -> Vec<Tensor<F>> {
    gys.iter().zip(masks).map(|(g, m)| ops::mul(g, m)).collect()
}

/// conv -> batchnorm -> relu -> dropout
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<F = f32> {
    pub conv: Conv2d<F>,
    pub bn: BatchNorm<F>,
}

#[derive(Debug, Clone)]
pub struct ConvStackCache<F> {
    inputs: Vec<Tensor<F>>,
    bn: BnCache<F>,
    normed: Vec<Tensor<F>>,
    masks: Vec<Tensor<F>>,
}

impl<F: Real> ConvStack<F> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, geometry: Conv2dGeometry, rng: &mut R) -> Self {
        ConvStack {
            conv: Conv2d::new(in_channels, out_channels, geometry, rng),
            bn: BatchNorm::new(out_channels, ChannelAxis::First),
        }
    }

    pub fn forward(&self, xs: Vec<Tensor<F>>, rate: f64, key: u64, mode: Mode) -> Result<(Vec<Tensor<F>>, ConvStackCache<F>)> {
        let ys = par_map(&xs, |_, x| self.conv.forward(x))?;
        let (normed, bn) = self.bn.forward(&ys, mode)?;
        let activated: Vec<_> = normed.iter().map(ops::relu).collect();
        let (out, masks) = dropout_all(activated, rate, key, mode)?;
        Ok((
            out,
            ConvStackCache {
                inputs: xs,
                bn,
                normed,
                masks,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvStackCache<F>, gys: &[Tensor<F>], grads: &mut Self) -> Result<Vec<Tensor<F>>> {
        let g_act = mask_all(gys, &cache.masks);
        let g_norm: Vec<_> = cache.normed.iter().zip(&g_act).map(|(x, g)| ops::relu_backward(x, g)).collect();
        let g_conv = self.bn.backward(&cache.bn, &g_norm, &mut grads.bn);
        let idx: Vec<usize> = (0..g_conv.len()).collect();
        let parts = par_map(&idx, |_, &u| {
            let mut g = self.conv.zeros_like();
            let gx = self.conv.backward(&cache.inputs[u], &g_conv[u], &mut g)?;
            Ok((gx, g))
        })?;
        let (gxs, layer_grads): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        reduce_grads(&mut grads.conv, layer_grads);
        Ok(gxs)
    }

    pub fn update_running(&mut self, cache: &ConvStackCache<F>) {
        self.bn.update_running(&cache.bn);
    }
}

impl<F: Real> Parameterized<F> for ConvStack<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
        self.bn.visit_params_mut(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), f);
    }
}

/// bilstm -> batchnorm -> dropout
#[derive(Debug, Clone, PartialEq)]
pub struct RnnStack<F = f32> {
    pub rnn: BiLstm<F>,
    pub bn: BatchNorm<F>,
}

#[derive(Debug, Clone)]
pub struct RnnStackCache<F> {
    rnn: Vec<BiLstmCache<F>>,
    bn: BnCache<F>,
    masks: Vec<Tensor<F>>,
}

impl<F: Real> RnnStack<F> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        RnnStack {
            rnn: BiLstm::new(input, hidden, rng),
            bn: BatchNorm::new(2 * hidden, ChannelAxis::Last),
        }
    }

    pub fn forward(&self, xs: &[Tensor<F>], rate: f64, key: u64, mode: Mode) -> Result<(Vec<Tensor<F>>, RnnStackCache<F>)> {
        let (hs, rnn): (Vec<_>, Vec<_>) = par_map(xs, |_, x| self.rnn.forward(x))?.into_iter().unzip();
        let (normed, bn) = self.bn.forward(&hs, mode)?;
        let (out, masks) = dropout_all(normed, rate, key, mode)?;
        Ok((out, RnnStackCache { rnn, bn, masks }))
    }

    pub fn backward(&self, cache: &RnnStackCache<F>, gys: &[Tensor<F>], grads: &mut Self) -> Result<Vec<Tensor<F>>> {
        let g_norm = mask_all(gys, &cache.masks);
        let g_rnn = self.bn.backward(&cache.bn, &g_norm, &mut grads.bn);
        let idx: Vec<usize> = (0..g_rnn.len()).collect();
        let parts = par_map(&idx, |_, &u| {
            let mut g = self.rnn.zeros_like();
            let gx = self.rnn.backward(&cache.rnn[u], &g_rnn[u], &mut g);
            Ok((gx, g))
        })?;
        let (gxs, layer_grads): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        reduce_grads(&mut grads.rnn, layer_grads);
        Ok(gxs)
    }

    pub fn update_running(&mut self, cache: &RnnStackCache<F>) {
        self.bn.update_running(&cache.bn);
    }
}

impl<F: Real> Parameterized<F> for RnnStack<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.rnn.visit_params(&join(prefix, "rnn"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.rnn.visit_params_mut(&join(prefix, "rnn"), f);
        self.bn.visit_params_mut(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), f);
    }
}

/// `[C, T, W]` map to `[T, C*W]` frames.
fn flatten_frames<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (c, t, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[t, c * w]);
    for ch in 0..c {
        for ti in 0..t {
            let src = &x.data()[(ch * t + ti) * w..(ch * t + ti + 1) * w];
            out.row_mut(ti)[ch * w..(ch + 1) * w].copy_from_slice(src);
        }
    }
    out
}

fn unflatten_frames<F: Real>(g: &Tensor<F>, c: usize) -> Tensor<F> {
    let t = g.rows();
    let w = g.cols() / c;
    let mut out = Tensor::zeros(&[c, t, w]);
    for ch in 0..c {
        for ti in 0..t {
            let dst = (ch * t + ti) * w;
            out.data_mut()[dst..dst + w].copy_from_slice(&g.row(ti)[ch * w..(ch + 1) * w]);
        }
    }
    out
}

/// Two convolution stacks over the `T x D` input viewed as a one-channel
/// image, then a chain of recurrent stacks over the flattened frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEncoder<F = f32> {
    pub input_dim: usize,
    pub convs: Vec<ConvStack<F>>,
    pub rnns: Vec<RnnStack<F>>,
}

#[derive(Debug, Clone)]
pub struct FrameEncoderCache<F> {
    convs: Vec<ConvStackCache<F>>,
    rnns: Vec<RnnStackCache<F>>,
}

pub const CONV_STACKS: usize = 2;

impl<F: Real> FrameEncoder<F> {
    pub fn new<R: Rng>(
        input_dim: usize,
        channels: usize,
        geometry: Conv2dGeometry,
        hidden: usize,
        n_rnn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(CONV_STACKS);
        let mut width = input_dim;
        for k in 0..CONV_STACKS {
            convs.push(ConvStack::new(if k == 0 { 1 } else { channels }, channels, geometry, rng));
            width = geometry.output_extent(geometry.kernel.0, width)?.1;
        }
        let mut rnns = Vec::with_capacity(n_rnn);
        for k in 0..n_rnn {
            let input = if k == 0 { channels * width } else { 2 * hidden };
            rnns.push(RnnStack::new(input, hidden, rng));
        }
        Ok(FrameEncoder { input_dim, convs, rnns })
    }

    pub fn output_dim(&self) -> usize {
        self.rnns.last().map_or(0, |r| r.rnn.output_dim())
    }

    /// Number of frames after the convolution stacks.
    pub fn output_frames(&self, frames: usize) -> Result<usize> {
        let mut t = frames;
        for c in &self.convs {
            t = c.conv.geometry.output_extent(t, self.input_dim)?.0;
        }
        Ok(t)
    }

    /// `key` seeds dropout; each stack draws from its own stream.
    pub fn forward(&self, xs: &[Tensor<F>], rate: f64, key: u64, mode: Mode) -> Result<(Vec<Tensor<F>>, FrameEncoderCache<F>)> {
        let mut maps = Vec::with_capacity(xs.len());
        for x in xs {
            if x.rank() != 2 || x.cols() != self.input_dim {
                return Err(Error::Shape(format!(
                    "encoder expects [T, {}], got {:?}",
                    self.input_dim,
                    x.shape()
                )));
            }
            maps.push(x.clone().reshape(&[1, x.rows(), x.cols()])?);
        }
        let mut conv_caches = Vec::with_capacity(self.convs.len());
        for (k, stack) in self.convs.iter().enumerate() {
            let (out, cache) = stack.forward(maps, rate, stream_key(key, k as u64), mode)?;
            maps = out;
            conv_caches.push(cache);
        }
        let mut seqs: Vec<_> = maps.iter().map(flatten_frames).collect();
        let mut rnn_caches = Vec::with_capacity(self.rnns.len());
        for (k, stack) in self.rnns.iter().enumerate() {
            let (out, cache) = stack.forward(&seqs, rate, stream_key(key, (self.convs.len() + k) as u64), mode)?;
            seqs = out;
            rnn_caches.push(cache);
        }
        Ok((
            seqs,
            FrameEncoderCache {
                convs: conv_caches,
                rnns: rnn_caches,
            },
        ))
    }

    /// Accumulates parameter gradients; input gradients are discarded.
    pub fn backward(&self, cache: &FrameEncoderCache<F>, gys: &[Tensor<F>], grads: &mut Self) -> Result<()> {
        let mut g: Vec<Tensor<F>> = gys.to_vec();
        for k in (0..self.rnns.len()).rev() {
            g = self.rnns[k].backward(&cache.rnns[k], &g, &mut grads.rnns[k])?;
        }
        let channels = self.convs.last().map_or(1, |c| c.conv.out_channels());
        let mut maps: Vec<_> = g.iter().map(|x| unflatten_frames(x, channels)).collect();
        for k in (0..self.convs.len()).rev() {
            maps = self.convs[k].backward(&cache.convs[k], &maps, &mut grads.convs[k])?;
        }
        Ok(())
    }

    pub fn update_running(&mut self, cache: &FrameEncoderCache<F>) {
        for (s, c) in self.convs.iter_mut().zip(&cache.convs) {
            s.update_running(c);
        }
        for (s, c) in self.rnns.iter_mut().zip(&cache.rnns) {
            s.update_running(c);
        }
    }
}

impl<F: Real> Parameterized<F> for FrameEncoder<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        for (k, s) in self.convs.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("conv{k}")), f);
        }
        for (k, s) in self.rnns.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("rnn{k}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        for (k, s) in self.convs.iter_mut().enumerate() {
            s.visit_params_mut(&join(prefix, &format!("conv{k}")), f);
        }
        for (k, s) in self.rnns.iter_mut().enumerate() {
            s.visit_params_mut(&join(prefix, &format!("rnn{k}")), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        for (k, s) in self.convs.iter().enumerate() {
            s.visit_buffers(&join(prefix, &format!("conv{k}")), f);
        }
        for (k, s) in self.rnns.iter().enumerate() {
            s.visit_buffers(&join(prefix, &format!("rnn{k}")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        for (k, s) in self.convs.iter_mut().enumerate() {
            s.visit_buffers_mut(&join(prefix, &format!("conv{k}")), f);
        }
        for (k, s) in self.rnns.iter_mut().enumerate() {
            s.visit_buffers_mut(&join(prefix, &format!("rnn{k}")), f);
        }
    }
}

/// Phone embedding -> BiLSTM -> separate key and value projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticEncoder<F = f32> {
    pub embed: Embedding<F>,
    pub rnn: BiLstm<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct LinguisticCache<F> {
    ids: Vec<usize>,
    rnn: BiLstmCache<F>,
    hidden: Tensor<F>,
}

impl<F: Real> LinguisticEncoder<F> {
    pub fn new<R: Rng>(vocab: usize, embed_dim: usize, hidden: usize, key_dim: usize, rng: &mut R) -> Self {
        LinguisticEncoder {
            embed: Embedding::new(vocab, embed_dim, rng),
            rnn: BiLstm::new(embed_dim, hidden, rng),
            key: Linear::new(2 * hidden, key_dim, rng),
            value: Linear::new(2 * hidden, key_dim, rng),
        }
    }

    /// Keys and values, each `[N, key_dim]`.
    pub fn forward(&self, ids: &[usize]) -> Result<(Tensor<F>, Tensor<F>, LinguisticCache<F>)> {
        if ids.is_empty() {
            return Err(Error::Data("canonical sequence is empty".into()));
        }
        let e = self.embed.forward(ids)?;
        let (hidden, rnn) = self.rnn.forward(&e)?;
        let k = self.key.forward(&hidden)?;
        let v = self.value.forward(&hidden)?;
        Ok((
            k,
            v,
            LinguisticCache {
                ids: ids.to_vec(),
                rnn,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &LinguisticCache<F>, gk: &Tensor<F>, gv: &Tensor<F>, grads: &mut Self) {
        let mut gh = self.key.backward(&cache.hidden, gk, &mut grads.key);
        gh.add_assign(&self.value.backward(&cache.hidden, gv, &mut grads.value));
        let ge = self.rnn.backward(&cache.rnn, &gh, &mut grads.rnn);
        self.embed.backward(&cache.ids, &ge, &mut grads.embed);
    }
}

impl<F: Real> Parameterized<F> for LinguisticEncoder<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.embed.visit_params(&join(prefix, "embed"), f);
        self.rnn.visit_params(&join(prefix, "rnn"), f);
        self.key.visit_params(&join(prefix, "key"), f);
        self.value.visit_params(&join(prefix, "value"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.embed.visit_params_mut(&join(prefix, "embed"), f);
        self.rnn.visit_params_mut(&join(prefix, "rnn"), f);
        self.key.visit_params_mut(&join(prefix, "key"), f);
        self.value.visit_params_mut(&join(prefix, "value"), f);
    }
}
