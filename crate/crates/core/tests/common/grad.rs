//! Finite-difference gradient suite over every layer, the decoder and the
//! full model with CTC.

use apl_mdd::model::{batch_loss, AplConfig, AplModel, Decoder, FrameEncoder, LinguisticEncoder, ModelInput, Variant};
use apl_mdd::numcore::gradcheck::{grad_check, grad_check_params, DEFAULT_EPS};
use apl_mdd::numcore::ops;
use apl_mdd::numcore::{
    BatchNorm, BiLstm, ChannelAxis, Conv2d, Conv2dGeometry, Embedding, Linear, Lstm, Mode, Parameterized, Tensor,
};
use apl_mdd::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;

pub fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for checks through the relu kink.
fn rand_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = rand_t(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn geom() -> Conv2dGeometry {
    Conv2dGeometry {
        kernel: (3, 3),
        stride: (2, 2),
        padding: (1, 1),
    }
}

/// Worst relative error of one component over one seed.
pub type Check = fn(u64) -> Result<f64>;

fn max2(a: f64, b: f64) -> f64 {
    a.max(b)
}

fn linear(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Linear::<f64>::new(4, 3, &mut rng);
    let x = rand_t(&[5, 4], &mut rng);
    let w = rand_t(&[5, 3], &mut rng);
    let a = grad_check(
        |x| {
            let y = layer.forward(x)?;
            let mut g = layer.zeros_like();
            Ok((dot(&y, &w), layer.backward(x, &w, &mut g)))
        },
        &x,
        DEFAULT_EPS,
    )?;
    let b = grad_check_params(
        &layer,
        |m| {
            let mut g = m.zeros_like();
            m.backward(&x, &w, &mut g);
            Ok((dot(&m.forward(&x)?, &w), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(max2(a.max_rel_err, b.max_rel_err))
}

fn embedding(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Embedding::<f64>::new(6, 3, &mut rng);
    let ids = [1, 4, 1, 5];
    let w = rand_t(&[4, 3], &mut rng);
    let r = grad_check_params(
        &layer,
        |m| {
            let mut g = m.zeros_like();
            m.backward(&ids, &w, &mut g);
            Ok((dot(&m.forward(&ids)?, &w), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(r.max_rel_err)
}

fn conv(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Conv2d::<f64>::new(2, 3, geom(), &mut rng);
    let x = rand_t(&[2, 7, 6], &mut rng);
    let y0 = layer.forward(&x)?;
    let w = rand_t(y0.shape(), &mut rng);
    let a = grad_check(
        |x| {
            let y = layer.forward(x)?;
            let mut g = layer.zeros_like();
            Ok((dot(&y, &w), layer.backward(x, &w, &mut g)?))
        },
        &x,
        DEFAULT_EPS,
    )?;
    let b = grad_check_params(
        &layer,
        |m| {
            let mut g = m.zeros_like();
            m.backward(&x, &w, &mut g)?;
            Ok((dot(&m.forward(&x)?, &w), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(max2(a.max_rel_err, b.max_rel_err))
}

fn split_rows(x: &Tensor<f64>, parts: &[usize]) -> Vec<Tensor<f64>> {
    let cols = x.cols();
    let mut out = Vec::new();
    let mut r = 0;
    for &n in parts {
        out.push(Tensor::from_vec(&[n, cols], x.data()[r * cols..(r + n) * cols].to_vec()).unwrap());
        r += n;
    }
    out
}

fn join_rows(xs: &[Tensor<f64>]) -> Tensor<f64> {
    let cols = xs[0].cols();
    let data: Vec<f64> = xs.iter().flat_map(|x| x.data().to_vec()).collect();
    Tensor::from_vec(&[data.len() / cols, cols], data).unwrap()
}

fn batchnorm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    // sequences [T, D], channel last, two utterances of different length
    let mut bn = BatchNorm::<f64>::new(3, ChannelAxis::Last);
    bn.gain = rand_t(&[3], &mut rng);
    bn.shift = rand_t(&[3], &mut rng);
    let x = rand_t(&[7, 3], &mut rng);
    let w = rand_t(&[7, 3], &mut rng);
    let parts = [3, 4];
    for mode in [Mode::Train, Mode::Eval] {
        let a = grad_check(
            |x| {
                let xs = split_rows(x, &parts);
                let ws = split_rows(&w, &parts);
                let (ys, cache) = bn.forward(&xs, mode)?;
                let mut g = bn.zeros_like();
                let gx = bn.backward(&cache, &ws, &mut g);
                Ok((dot(&join_rows(&ys), &w), join_rows(&gx)))
            },
            &x,
            DEFAULT_EPS,
        )?;
        let b = grad_check_params(
            &bn,
            |m| {
                let xs = split_rows(&x, &parts);
                let ws = split_rows(&w, &parts);
                let (ys, cache) = m.forward(&xs, mode)?;
                let mut g = m.zeros_like();
                m.backward(&cache, &ws, &mut g);
                Ok((dot(&join_rows(&ys), &w), g))
            },
            DEFAULT_EPS,
            1,
        )?;
        worst = worst.max(a.max_rel_err).max(b.max_rel_err);
    }
    // maps [C, H, W], channel first
    let mut bn = BatchNorm::<f64>::new(2, ChannelAxis::First);
    bn.gain = rand_t(&[2], &mut rng);
    let x = rand_t(&[2, 2, 3, 2], &mut rng);
    let w = rand_t(&[2, 2, 3, 2], &mut rng);
    let unpack = |x: &Tensor<f64>| -> Vec<Tensor<f64>> {
        (0..2)
            .map(|b| Tensor::from_vec(&[2, 3, 2], x.data()[b * 12..(b + 1) * 12].to_vec()).unwrap())
            .collect()
    };
    let pack = |xs: &[Tensor<f64>]| -> Tensor<f64> {
        Tensor::from_vec(&[2, 2, 3, 2], xs.iter().flat_map(|t| t.data().to_vec()).collect()).unwrap()
    };
    let a = grad_check(
        |x| {
            let (ys, cache) = bn.forward(&unpack(x), Mode::Train)?;
            let mut g = bn.zeros_like();
            let gx = bn.backward(&cache, &unpack(&w), &mut g);
            Ok((dot(&pack(&ys), &w), pack(&gx)))
        },
        &x,
        DEFAULT_EPS,
    )?;
    Ok(worst.max(a.max_rel_err))
}

fn lstm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Lstm::<f64>::new(3, 4, &mut rng);
    let x = rand_t(&[5, 3], &mut rng);
    let w = rand_t(&[5, 4], &mut rng);
    let a = grad_check(
        |x| {
            let (y, c) = layer.forward(x)?;
            let mut g = layer.zeros_like();
            Ok((dot(&y, &w), layer.backward(&c, &w, &mut g)))
        },
        &x,
        DEFAULT_EPS,
    )?;
    let b = grad_check_params(
        &layer,
        |m| {
            let (y, c) = m.forward(&x)?;
            let mut g = m.zeros_like();
            m.backward(&c, &w, &mut g);
            Ok((dot(&y, &w), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(max2(a.max_rel_err, b.max_rel_err))
}

fn bilstm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = BiLstm::<f64>::new(3, 2, &mut rng);
    let x = rand_t(&[4, 3], &mut rng);
    let w = rand_t(&[4, 4], &mut rng);
    let a = grad_check(
        |x| {
            let (y, c) = layer.forward(x)?;
            let mut g = layer.zeros_like();
            Ok((dot(&y, &w), layer.backward(&c, &w, &mut g)))
        },
        &x,
        DEFAULT_EPS,
    )?;
    let b = grad_check_params(
        &layer,
        |m| {
            let (y, c) = m.forward(&x)?;
            let mut g = m.zeros_like();
            m.backward(&c, &w, &mut g);
            Ok((dot(&y, &w), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(max2(a.max_rel_err, b.max_rel_err))
}

fn elementwise(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let x = rand_off_zero(&[4, 5], &mut rng);
    let w = rand_t(&[4, 5], &mut rng);
    let r = grad_check(|x| Ok((dot(&ops::relu(x), &w), ops::relu_backward(x, &w))), &x, DEFAULT_EPS)?;
    worst = worst.max(r.max_rel_err);
    let key = seed;
    let r = grad_check(
        |x| {
            let (y, mask) = ops::dropout(x, 0.3, key, Mode::Train)?;
            Ok((dot(&y, &w), ops::mul(&w, &mask)))
        },
        &x,
        DEFAULT_EPS,
    )?;
    worst = worst.max(r.max_rel_err);
    for axis in [0, 1] {
        let r = grad_check(
            |x| {
                let y = ops::softmax(x, axis)?;
                Ok((dot(&y, &w), ops::softmax_backward(&y, &w, axis)?))
            },
            &x,
            DEFAULT_EPS,
        )?;
        worst = worst.max(r.max_rel_err);
        let r = grad_check(
            |x| {
                let y = ops::log_softmax(x, axis)?;
                Ok((dot(&y, &w), ops::log_softmax_backward(&y, &w, axis)?))
            },
            &x,
            DEFAULT_EPS,
        )?;
        worst = worst.max(r.max_rel_err);
    }
    let b = rand_t(&[4, 2], &mut rng);
    let wc = rand_t(&[4, 7], &mut rng);
    let r = grad_check(
        |x| {
            let y = ops::concat(x, &b, 1)?;
            Ok((dot(&y, &wc), ops::concat_backward(&wc, 5, 1)?.0))
        },
        &x,
        DEFAULT_EPS,
    )?;
    Ok(worst.max(r.max_rel_err))
}

fn linguistic(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = LinguisticEncoder::<f64>::new(6, 3, 2, 4, &mut rng);
    let ids = [0, 3, 2, 5, 3];
    let wk = rand_t(&[5, 4], &mut rng);
    let wv = rand_t(&[5, 4], &mut rng);
    let r = grad_check_params(
        &enc,
        |m| {
            let (k, v, c) = m.forward(&ids)?;
            let mut g = m.zeros_like();
            m.backward(&c, &wk, &wv, &mut g);
            Ok((dot(&k, &wk) + dot(&v, &wv), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(r.max_rel_err)
}

fn frame_encoder(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = FrameEncoder::<f64>::new(6, 2, geom(), 3, 2, &mut rng)?;
    let xs = vec![rand_t(&[8, 6], &mut rng), rand_t(&[6, 6], &mut rng)];
    let ws = vec![rand_t(&[2, 6], &mut rng), rand_t(&[2, 6], &mut rng)];
    let r = grad_check_params(
        &enc,
        |m| {
            let (ys, c) = m.forward(&xs, 0.2, seed, Mode::Train)?;
            let mut g = m.zeros_like();
            m.backward(&c, &ws, &mut g)?;
            Ok((ys.iter().zip(&ws).map(|(y, w)| dot(y, w)).sum(), g))
        },
        DEFAULT_EPS,
        1,
    )?;
    Ok(r.max_rel_err)
}

/// Decoder parameters and every decoder input, for all variants.
fn decoder(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for variant in Variant::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, n, e, c) = (5, 4, 3, 4);
        let q = if variant == Variant::Apl { 2 * e } else { e };
        let dec = Decoder::<f64>::new(variant, q, c, &mut rng);
        let ha = rand_t(&[t, e], &mut rng);
        let hp = rand_t(&[t, e], &mut rng);
        let k = rand_t(&[n, q], &mut rng);
        let v = rand_t(&[n, q], &mut rng);
        let w = rand_t(&[t, c], &mut rng);
        let att = variant.uses_attention();
        let (ka, va) = (att.then_some(&k), att.then_some(&v));
        let r = grad_check_params(
            &dec,
            |m| {
                let cache = m.forward(Some(&ha), Some(&hp), ka, va)?;
                let mut g = m.zeros_like();
                m.backward(&cache, &w, &mut g)?;
                Ok((dot(&cache.log_probs, &w), g))
            },
            DEFAULT_EPS,
            1,
        )?;
        worst = worst.max(r.max_rel_err);
        type Pick = fn(&apl_mdd::model::DecoderInputGrads<f64>) -> Option<Tensor<f64>>;
        let inputs: [(usize, Pick); 4] = [
            (0, |g| g.acoustic.clone()),
            (1, |g| g.phonetic.clone()),
            (2, |g| g.keys.clone()),
            (3, |g| g.values.clone()),
        ];
        for (slot, pick) in inputs {
            let mut args = [ha.clone(), hp.clone(), k.clone(), v.clone()];
            let used = match slot {
                0 => variant.uses_acoustic(),
                1 => variant.uses_phonetic(),
                _ => att,
            };
            if !used {
                continue;
            }
            let probe = args[slot].clone();
            let r = grad_check(
                |x| {
                    args[slot] = x.clone();
                    let cache = dec.forward(
                        Some(&args[0]),
                        Some(&args[1]),
                        att.then_some(&args[2]),
                        att.then_some(&args[3]),
                    )?;
                    let mut g = dec.zeros_like();
                    let gin = dec.backward(&cache, &w, &mut g)?;
                    Ok((dot(&cache.log_probs, &w), pick(&gin).expect("used input has a gradient")))
                },
                &probe,
                DEFAULT_EPS,
            )?;
            worst = worst.max(r.max_rel_err);
        }
    }
    Ok(worst)
}

pub fn tiny_config(variant: Variant, seed: u64) -> AplConfig {
    AplConfig {
        variant,
        acoustic_dim: 5,
        phonetic_dim: 4,
        classes: 4,
        conv_channels: 2,
        rnn_hidden: 3,
        n_rnn_acoustic: 2,
        n_rnn_phonetic: 1,
        embed_dim: 2,
        ling_hidden: 2,
        dropout: 0.1,
        seed,
        ..AplConfig::default()
    }
}

/// Mean CTC loss of a two-utterance batch through the whole model.
fn full_model(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for variant in Variant::ALL {
        let cfg = tiny_config(variant, seed);
        let model = AplModel::<f64>::new(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let batch: Vec<ModelInput<f64>> = [8usize, 6]
            .iter()
            .map(|&t| ModelInput {
                acoustic: Some(rand_t(&[t, cfg.acoustic_dim], &mut rng)),
                phonetic: Some(rand_t(&[t, cfg.phonetic_dim], &mut rng)),
                canonical: vec![0, 2, 1],
            })
            .collect();
        let targets: [&[usize]; 2] = [&[1, 2], &[0]];
        let r = grad_check_params(
            &model,
            |m| {
                let out = batch_loss(m, &batch, &targets, Mode::Train, seed)?;
                Ok((out.loss, out.grads))
            },
            DEFAULT_EPS,
            1,
        )?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(worst)
}

pub const COMPONENTS: [(&str, Check); 11] = [
    ("linear", linear),
    ("embedding", embedding),
    ("conv2d", conv),
    ("batchnorm", batchnorm),
    ("lstm", lstm),
    ("bilstm", bilstm),
    ("elementwise ops", elementwise),
    ("linguistic encoder", linguistic),
    ("frame encoder", frame_encoder),
    ("decoder", decoder),
    ("model + ctc", full_model),
];

/// Worst relative error per component over `seeds` seeds.
pub fn suite(seeds: u64) -> Vec<(&'static str, Result<f64>)> {
    COMPONENTS
        .iter()
        .map(|(name, check)| {
            let mut worst: f64 = 0.0;
            for s in 0..seeds {
                match check(s) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => return (*name, Err(e)),
                }
            }
            (*name, Ok(worst))
        })
        .collect()
}
