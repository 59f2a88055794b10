/// A named, shaped view of one parameter buffer.
#[derive(Debug, Clone)]
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> ParamRef<'a> {
    pub fn new(name: String, shape: Vec<usize>, data: &'a [f64]) -> Self {
        Self { name, shape, data }
    }
}

/// Anything that exposes an ordered list of parameter buffers.
///
/// `params` and `params_mut` must enumerate the same buffers in the same
/// order; optimizers and checkpoints rely on it.
pub trait ParamSet {
    fn params(&self) -> Vec<ParamRef<'_>>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// All parameters concatenated in enumeration order.
    fn to_flat(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    fn max_abs(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Prefixes every parameter name of `inner` with `prefix.`.
pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<ParamRef<'a>>) -> Vec<ParamRef<'a>> {
    inner
        .into_iter()
        .map(|mut p| {
            p.name = format!("{prefix}.{}", p.name);
            p
        })
        .collect()
}
