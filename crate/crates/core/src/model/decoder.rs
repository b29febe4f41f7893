//! Attention decoder: the per-frame query attends over the canonical keys,
//! the attended values are concatenated with the query, and a linear layer
//! plus log-softmax gives frame-wise log-posteriors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::ops::{concat, concat_backward, log_softmax, log_softmax_backward, softmax, softmax_backward};
use crate::numcore::params::join;
use crate::numcore::{matmul, Linear, ParamVisitor, ParamVisitorMut, Parameterized, Real, Tensor};

use super::config::Variant;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<F = f32> {
    pub variant: Variant,
    pub output: Linear<F>,
}

/// Intermediate values of one decoded utterance.
#[derive(Debug, Clone)]
pub struct DecoderCache<F> {
    pub query: Tensor<F>,
    pub keys: Option<Tensor<F>>,
    pub values: Option<Tensor<F>>,
    /// `[T', N]`, rows sum to one.
    pub alpha: Option<Tensor<F>>,
    /// `[T', key_dim]`
    pub context: Option<Tensor<F>>,
    /// Input of the output layer.
    pub joint: Tensor<F>,
    pub log_probs: Tensor<F>,
    split: usize,
}

/// Gradients with respect to the decoder inputs.
#[derive(Debug, Clone)]
pub struct DecoderInputGrads<F> {
    pub acoustic: Option<Tensor<F>>,
    pub phonetic: Option<Tensor<F>>,
    pub keys: Option<Tensor<F>>,
    pub values: Option<Tensor<F>>,
}

impl<F: Real> Decoder<F> {
    pub fn new<R: Rng>(variant: Variant, query_dim: usize, classes: usize, rng: &mut R) -> Self {
        let input = if variant.uses_attention() { 2 * query_dim } else { query_dim };
        Decoder {
            variant,
            output: Linear::new(input, classes, rng),
        }
    }

    fn query(&self, acoustic: Option<&Tensor<F>>, phonetic: Option<&Tensor<F>>) -> Result<(Tensor<F>, usize)> {
        match (self.variant, acoustic, phonetic) {
            (Variant::Apl, Some(a), Some(p)) => Ok((concat(a, p, 1)?, a.cols())),
            (Variant::Al | Variant::Baseline1, Some(a), _) => Ok((a.clone(), a.cols())),
            (Variant::Pl, _, Some(p)) => Ok((p.clone(), 0)),
            (v, _, _) => Err(Error::Data(format!("variant {v} is missing a required input stream"))),
        }
    }

    /// Frame-wise log-posteriors `[T', C]`.
    pub fn forward(
        &self,
        acoustic: Option<&Tensor<F>>,
        phonetic: Option<&Tensor<F>>,
        keys: Option<&Tensor<F>>,
        values: Option<&Tensor<F>>,
    ) -> Result<DecoderCache<F>> {
        let (query, split) = self.query(acoustic, phonetic)?;
        let (keys, values, alpha, context, joint) = if self.variant.uses_attention() {
            let (Some(k), Some(v)) = (keys, values) else {
                return Err(Error::Data(format!("variant {} needs keys and values", self.variant)));
            };
            if k.cols() != query.cols() || v.cols() != query.cols() || k.rows() != v.rows() {
                return Err(Error::Shape(format!(
                    "query width {} against keys {:?} and values {:?}",
                    query.cols(),
                    k.shape(),
                    v.shape()
                )));
            }
            let scores = matmul(&query, &k.transpose())?;
            let alpha = softmax(&scores, 1)?;
            let context = matmul(&alpha, v)?;
            let joint = concat(&context, &query, 1)?;
            (Some(k.clone()), Some(v.clone()), Some(alpha), Some(context), joint)
        } else {
            (None, None, None, None, query.clone())
        };
        if joint.cols() != self.output.input_dim() {
            return Err(Error::Shape(format!(
                "output layer expects width {}, got {}",
                self.output.input_dim(),
                joint.cols()
            )));
        }
        let log_probs = log_softmax(&self.output.forward(&joint)?, 1)?;
        Ok(DecoderCache {
            query,
            keys,
            values,
            alpha,
            context,
            joint,
            log_probs,
            split,
        })
    }

    /// `gy` is the gradient with respect to the log-posteriors.
    pub fn backward(&self, cache: &DecoderCache<F>, gy: &Tensor<F>, grads: &mut Self) -> Result<DecoderInputGrads<F>> {
        let g_logits = log_softmax_backward(&cache.log_probs, gy, 1)?;
        let g_joint = self.output.backward(&cache.joint, &g_logits, &mut grads.output);
        let (g_query, g_keys, g_values) = match (&cache.alpha, &cache.keys, &cache.values) {
            (Some(alpha), Some(k), Some(v)) => {
                let (g_ctx, mut g_query) = concat_backward(&g_joint, k.cols(), 1)?;
                let g_alpha = matmul(&g_ctx, &v.transpose())?;
                let g_values = matmul(&alpha.transpose(), &g_ctx)?;
                let g_scores = softmax_backward(alpha, &g_alpha, 1)?;
                g_query.add_assign(&matmul(&g_scores, k)?);
                let g_keys = matmul(&g_scores.transpose(), &cache.query)?;
                (g_query, Some(g_keys), Some(g_values))
            }
            _ => (g_joint, None, None),
        };
        let (acoustic, phonetic) = match self.variant {
            Variant::Apl => {
                let (a, p) = concat_backward(&g_query, cache.split, 1)?;
                (Some(a), Some(p))
            }
            Variant::Pl => (None, Some(g_query)),
            _ => (Some(g_query), None),
        };
        Ok(DecoderInputGrads {
            acoustic,
            phonetic,
            keys: g_keys,
            values: g_values,
        })
    }
}

impl<F: Real> Parameterized<F> for Decoder<F> {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.output.visit_params(&join(prefix, "output"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>) {
        self.output.visit_params_mut(&join(prefix, "output"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_attention_on_identical_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = Decoder::<f64>::new(Variant::Al, 3, 5, &mut rng);
        let ha = rand_t(4, 3, &mut rng);
        let row = rand_t(1, 3, &mut rng);
        let keys = Tensor::from_rows(&vec![row.row(0).to_vec(); 6]).unwrap();
        let values = rand_t(6, 3, &mut rng);
        let c = dec.forward(Some(&ha), None, Some(&keys), Some(&values)).unwrap();
        let alpha = c.alpha.unwrap();
        assert!(alpha.data().iter().all(|&a| (a - 1.0 / 6.0).abs() < 1e-12));
        for t in 0..4 {
            let s: f64 = c.log_probs.row(t).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_key_gives_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = Decoder::<f64>::new(Variant::Pl, 2, 4, &mut rng);
        let hp = rand_t(3, 2, &mut rng);
        let k = rand_t(1, 2, &mut rng);
        let v = rand_t(1, 2, &mut rng);
        let c = dec.forward(None, Some(&hp), Some(&k), Some(&v)).unwrap();
        assert!(c.alpha.unwrap().data().iter().all(|&a| a == 1.0));
        let ctx = c.context.unwrap();
        for t in 0..3 {
            assert_eq!(ctx.row(t), v.row(0));
        }
    }

    #[test]
    fn contract_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dec = Decoder::<f64>::new(Variant::Apl, 4, 4, &mut rng);
        let h = rand_t(3, 2, &mut rng);
        let k = rand_t(2, 3, &mut rng);
        assert!(dec.forward(Some(&h), Some(&h), Some(&k), Some(&k)).is_err());
        assert!(dec.forward(Some(&h), None, Some(&k), Some(&k)).is_err());
        let base = Decoder::<f64>::new(Variant::Baseline1, 2, 4, &mut rng);
        let c = base.forward(Some(&h), None, None, None).unwrap();
        assert!(c.alpha.is_none());
        assert_eq!(c.log_probs.shape(), [3, 4]);
    }
}
