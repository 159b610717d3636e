//! Parameter storage and the layer building blocks shared by the
//! segmentation, prior, and removal networks.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::graph::{Graph, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named, ordered parameter set for one network. Insertion order is the
/// canonical order used for binding, optimizer state, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, ArrayD<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].1
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    /// Sets every parameter to zero (used by the zero-init identity tests).
    pub fn zero_all(&mut self) {
        for (_, v) in &mut self.entries {
            v.fill(0.0);
        }
    }

    /// Binds every parameter as a gradient-tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|(_, v)| g.param(v.clone()))
            .collect();
        Binding { vars }
    }

    /// Binds every parameter as a constant leaf (inference: no gradient
    /// bookkeeping, cheaper backward pruning).
    pub fn bind_frozen(&self, g: &mut Graph) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|(_, v)| g.input(v.clone()))
            .collect();
        Binding { vars }
    }
}

/// Graph-bound view of a [`ParamStore`] for one forward pass.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collects per-parameter gradients in store order, substituting
    /// zeros for parameters the loss never touched.
    pub fn collect_grads(
        &self,
        store: &ParamStore,
        grads: &mut super::graph::Gradients,
    ) -> Vec<ArrayD<f64>> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| ArrayD::zeros(store.entries[i].1.raw_dim()))
            })
            .collect()
    }
}

pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

/// Kaiming-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-limit..limit))
}

/// Xavier-uniform: U(-sqrt(6/(fan_in+fan_out)), ...).
pub fn xavier_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> ArrayD<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-limit..limit))
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    He,
    Zero,
}

/// Square-kernel 2-D convolution with same-padding by default.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        init: Init,
    ) -> Self {
        let fan_in = cin * k * k;
        let w_val = match init {
            Init::He => he_uniform(&[cout, cin, k, k], fan_in, rng),
            Init::Zero => zeros(&[cout, cin, k, k]),
        };
        let w = store.add(format!("{name}.w"), w_val);
        let b = store.add(format!("{name}.b"), zeros(&[cout]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        g.conv2d(x, bind.var(self.w), Some(bind.var(self.b)), self.stride, self.pad)
    }
}

/// Per-sample, per-channel normalization over the spatial axes of a
/// `[C, H, W]` tensor with learned affine parameters. Batch statistics
/// are never used, so tiny desk-scale batches stay deterministic.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            ArrayD::from_elem(IxDyn(&[channels, 1, 1]), 1.0),
        );
        let beta = store.add(format!("{name}.beta"), zeros(&[channels, 1, 1]));
        Self {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let mu = g.mean_axes(x, &[1, 2]);
        let xc = g.sub(x, mu);
        let sq = g.mul(xc, xc);
        let var = g.mean_axes(sq, &[1, 2]);
        let veps = g.add_scalar(var, self.eps);
        let std = g.sqrt(veps);
        let xn = g.div(xc, std);
        let scaled = g.mul(xn, bind.var(self.gamma));
        g.add(scaled, bind.var(self.beta))
    }
}

/// Normalization over the last (feature) axis of `[T, D]` token arrays.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), ArrayD::from_elem(IxDyn(&[dim]), 1.0));
        let beta = store.add(format!("{name}.beta"), zeros(&[dim]));
        Self {
            gamma,
            beta,
            eps: 1e-6,
        }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let last = g.shape(x).len() - 1;
        let mu = g.mean_axes(x, &[last]);
        let xc = g.sub(x, mu);
        let sq = g.mul(xc, xc);
        let var = g.mean_axes(sq, &[last]);
        let veps = g.add_scalar(var, self.eps);
        let std = g.sqrt(veps);
        let xn = g.div(xc, std);
        let scaled = g.mul(xn, bind.var(self.gamma));
        g.add(scaled, bind.var(self.beta))
    }
}

/// Dense layer on `[T, D_in]` token arrays.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        din: usize,
        dout: usize,
        init: Init,
    ) -> Self {
        let w_val = match init {
            Init::He => xavier_uniform(&[din, dout], din, dout, rng),
            Init::Zero => zeros(&[din, dout]),
        };
        let w = store.add(format!("{name}.w"), w_val);
        let b = store.add(format!("{name}.b"), zeros(&[dout]));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let mm = g.matmul(x, bind.var(self.w));
        g.add(mm, bind.var(self.b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instance_norm_normalizes_and_grads_check() {
        let mut store = ParamStore::new();
        let norm = InstanceNorm::new(&mut store, "n", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ArrayD::from_shape_simple_fn(IxDyn(&[2, 4, 4]), || rng.random_range(-2.0..2.0));

        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let xv = g.input(x.clone());
        let y = norm.forward(&mut g, &bind, xv);
        let yv = g.value(y);
        for c in 0..2 {
            let ch = yv.index_axis(ndarray::Axis(0), c);
            let mean: f64 = ch.iter().sum::<f64>() / 16.0;
            let var: f64 = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }

        // gradient through input and affine parameters
        let gamma = store.value(norm.gamma).clone();
        let beta = store.value(norm.beta).clone();
        check_gradients(
            &[x, gamma, beta],
            |g, vars| {
                let mut s = ParamStore::new();
                let n = InstanceNorm {
                    gamma: s.add("g", ArrayD::zeros(IxDyn(&[2, 1, 1]))),
                    beta: s.add("b", ArrayD::zeros(IxDyn(&[2, 1, 1]))),
                    eps: 1e-5,
                };
                let bind = Binding {
                    vars: vec![vars[1], vars[2]],
                };
                let y = n.forward(g, &bind, vars[0]);
                let sq = g.mul(y, y);
                g.sum_all(sq)
            },
            1e-5,
            1e-4,
            48,
            9,
        )
        .unwrap();
    }

    #[test]
    fn linear_layer_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lin = Linear::new(&mut store, &mut rng, "fc", 5, 3, Init::He);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let x = g.input(ArrayD::from_elem(IxDyn(&[7, 5]), 0.5));
        let y = lin.forward(&mut g, &bind, x);
        assert_eq!(g.shape(y), &[7, 3]);
    }

    #[test]
    fn param_store_round_trip_and_zeroing() {
        let mut store = ParamStore::new();
        let id = store.add("a.w", ArrayD::from_elem(IxDyn(&[2, 2]), 3.0));
        assert_eq!(store.name(id), "a.w");
        assert_eq!(store.id_of("a.w"), Some(id));
        store.zero_all();
        assert!(store.value(id).iter().all(|&v| v == 0.0));
    }
}
