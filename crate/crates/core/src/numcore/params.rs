use super::{Real, Tensor};

pub type ParamVisitor<'a, F> = dyn FnMut(&str, &Tensor<F>) + 'a;
pub type ParamVisitorMut<'a, F> = dyn FnMut(&str, &mut Tensor<F>) + 'a;

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything holding named tensors. Visiting order is fixed per type, which
/// gives checkpoints and optimizer state a stable layout.
pub trait Parameterized<F: Real> {
    /// Learnable tensors.
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor<'_, F>);
    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, F>);

    /// Non-learnable state, such as batchnorm running statistics.
    fn visit_buffers(&self, _prefix: &str, _f: &mut ParamVisitor<'_, F>) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut ParamVisitorMut<'_, F>) {}

    fn param_tensors(&self) -> Vec<Tensor<F>> {
        let mut out = Vec::new();
        self.visit_params("", &mut |_, t| out.push(t.clone()));
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, _| out.push(n.to_string()));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }

    /// Copy with every learnable tensor zeroed; used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut out = self.clone();
        out.visit_params_mut("", &mut |_, t| t.fill(F::zero()));
        out
    }

    /// `self += other` over learnable tensors.
    fn add_params(&mut self, other: &Self) {
        let others = other.param_tensors();
        let mut it = others.iter();
        self.visit_params_mut("", &mut |_, t| {
            t.add_assign(it.next().expect("same parameter layout"));
        });
    }

    fn scale_params(&mut self, s: F) {
        self.visit_params_mut("", &mut |_, t| t.scale(s));
    }

    /// Euclidean norm over all learnable tensors.
    fn param_norm(&self) -> F {
        let mut acc = F::zero();
        self.visit_params("", &mut |_, t| {
            acc = acc + t.data().iter().map(|&x| x * x).sum::<F>();
        });
        acc.sqrt()
    }
}
