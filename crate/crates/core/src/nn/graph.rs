//! Tape-based reverse-mode autodiff.
//!
//! Every operation appends a node holding its value and the op that
//! produced it; nodes are created in topological order, so the backward
//! pass is a single reverse sweep. Values are kept in standard layout so
//! reshapes are free of surprises.

use ndarray::{ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Zip};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Sqrt(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    ClampUnit(usize),
    SumAll(usize),
    SumAxes(usize, Vec<usize>),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Slice {
        a: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    MatMul(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    UpsampleNearest2(usize),
    AvgPool2(usize),
    SoftmaxLastDim(usize),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn std_owned(view: ArrayViewD<'_, f64>) -> ArrayD<f64> {
    view.as_standard_layout().to_owned()
}

/// Right-aligned (numpy-style) broadcast shape of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sum-reduces `grad` down to `shape`, undoing broadcasting.
fn reduce_grad_to(grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && g.shape()[axis] != 1 {
            let summed = g.sum_axis(Axis(axis));
            g = summed.insert_axis(Axis(axis));
        }
    }
    g
}

fn binary_forward(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> ArrayD<f64> {
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("checked broadcast");
    let bv = b.broadcast(IxDyn(&shape)).expect("checked broadcast");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

const GELU_COEF: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 0-dim or single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().expect("non-empty")
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Leaf that does not require gradients (inputs, constants).
    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates gradients (parameters, or inputs under test).
    pub fn param(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = binary_forward(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(v, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = binary_forward(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = binary_forward(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(v, Op::Mul(a.0, b.0), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = binary_forward(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(v, Op::Div(a.0, b.0), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).mapv(|x| x + s);
        let rg = self.requires(a.0);
        self.push(v, Op::AddScalar(a.0), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).mapv(|x| x * s);
        let rg = self.requires(a.0);
        self.push(v, Op::MulScalar(a.0, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        let rg = self.requires(a.0);
        self.push(v, Op::Sqrt(a.0), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        let rg = self.requires(a.0);
        self.push(v, Op::Ln(a.0), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.requires(a.0);
        self.push(v, Op::Tanh(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid_scalar);
        let rg = self.requires(a.0);
        self.push(v, Op::Sigmoid(a.0), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu_scalar);
        let rg = self.requires(a.0);
        self.push(v, Op::Gelu(a.0), rg)
    }

    /// Clamp to `[0, 1]`; gradient passes through wherever the input
    /// already lies inside the closed interval.
    pub fn clamp_unit(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(0.0, 1.0));
        let rg = self.requires(a.0);
        self.push(v, Op::ClampUnit(a.0), rg)
    }

    /// Sum over all elements into a 0-dim array.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.requires(a.0);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::SumAll(a.0), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut v = self.value(a).clone();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        for &axis in sorted.iter().rev() {
            let summed = v.sum_axis(Axis(axis));
            v = summed.insert_axis(Axis(axis));
        }
        let rg = self.requires(a.0);
        self.push(v, Op::SumAxes(a.0, sorted), rg)
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let shape = self.shape(a).to_vec();
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        let s = self.sum_axes(a, axes);
        self.mul_scalar(s, 1.0 / count as f64)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape must preserve element count");
        let rg = self.requires(a.0);
        self.push(v, Op::Reshape(a.0), rg)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let v = std_owned(self.value(a).view().permuted_axes(IxDyn(perm)));
        let rg = self.requires(a.0);
        self.push(v, Op::Permute(a.0, perm.to_vec()), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat needs at least one part");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let rg = parts.iter().any(|p| self.requires(p.0));
        let idxs = parts.iter().map(|p| p.0).collect();
        self.push(std_owned(v.view()), Op::Concat(idxs, axis), rg)
    }

    pub fn slice_axis(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = std_owned(
            self.value(a)
                .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len)),
        );
        let rg = self.requires(a.0);
        self.push(
            v,
            Op::Slice {
                a: a.0,
                axis,
                start,
                len,
            },
            rg,
        )
    }

    /// 2-D matrix product `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
        let bv = self.value(b).view().into_dimensionality::<Ix2>().expect("matmul rhs 2-D");
        let v = av.dot(&bv).into_dyn();
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(v, Op::MatMul(a.0, b.0), rg)
    }

    /// 2-D convolution over `[C_in, H, W]` with kernel `[C_out, C_in, K, K]`,
    /// zero padding `pad` and stride `stride`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let v = conv2d_forward(self.value(x), self.value(w), b.map(|bb| self.value(bb)), stride, pad);
        let rg = self.requires(x.0)
            || self.requires(w.0)
            || b.map(|bb| self.requires(bb.0)).unwrap_or(false);
        self.push(
            v,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|bb| bb.0),
                stride,
                pad,
            },
            rg,
        )
    }

    /// Nearest-neighbor 2× upsampling of `[C, H, W]`.
    pub fn upsample_nearest2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (c, h, w) = dims3(x);
        let mut out = ArrayD::zeros(IxDyn(&[c, 2 * h, 2 * w]));
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x[[ci, y, xx]];
                    out[[ci, 2 * y, 2 * xx]] = v;
                    out[[ci, 2 * y, 2 * xx + 1]] = v;
                    out[[ci, 2 * y + 1, 2 * xx]] = v;
                    out[[ci, 2 * y + 1, 2 * xx + 1]] = v;
                }
            }
        }
        let rg = self.requires(a.0);
        self.push(out, Op::UpsampleNearest2(a.0), rg)
    }

    /// 2×2 average pooling of `[C, H, W]` (area downsampling).
    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (c, h, w) = dims3(x);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let mut out = ArrayD::zeros(IxDyn(&[c, h / 2, w / 2]));
        for ci in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    out[[ci, y, xx]] = (x[[ci, 2 * y, 2 * xx]]
                        + x[[ci, 2 * y, 2 * xx + 1]]
                        + x[[ci, 2 * y + 1, 2 * xx]]
                        + x[[ci, 2 * y + 1, 2 * xx + 1]])
                        / 4.0;
                }
            }
        }
        let rg = self.requires(a.0);
        self.push(out, Op::AvgPool2(a.0), rg)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let last = v.ndim() - 1;
        for mut lane in v.lanes_mut(Axis(last)) {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in lane.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            for e in lane.iter_mut() {
                *e /= sum;
            }
        }
        let rg = self.requires(a.0);
        self.push(v, Op::SoftmaxLastDim(a.0), rg)
    }

    /// Reverse sweep from a scalar node. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(
            self.nodes[loss.0].value.raw_dim(),
            1.0,
        ));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_parents(
        &self,
        idx: usize,
        g: &ArrayD<f64>,
        grads: &mut [Option<ArrayD<f64>>],
    ) {
        let node = &self.nodes[idx];
        let mut acc = |parent: usize, contrib: ArrayD<f64>| {
            if !self.nodes[parent].requires_grad {
                return;
            }
            match &mut grads[parent] {
                Some(existing) => *existing += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, reduce_grad_to(g.clone(), self.nodes[*a].value.shape()));
                acc(*b, reduce_grad_to(g.clone(), self.nodes[*b].value.shape()));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_grad_to(g.clone(), self.nodes[*a].value.shape()));
                acc(*b, reduce_grad_to(g.mapv(|v| -v), self.nodes[*b].value.shape()));
            }
            Op::Mul(a, b) => {
                let ga = binary_forward(g, &self.nodes[*b].value, |x, y| x * y);
                let gb = binary_forward(g, &self.nodes[*a].value, |x, y| x * y);
                acc(*a, reduce_grad_to(ga, self.nodes[*a].value.shape()));
                acc(*b, reduce_grad_to(gb, self.nodes[*b].value.shape()));
            }
            Op::Div(a, b) => {
                let ga = binary_forward(g, &self.nodes[*b].value, |x, y| x / y);
                acc(*a, reduce_grad_to(ga, self.nodes[*a].value.shape()));
                let aval = &self.nodes[*a].value;
                let bval = &self.nodes[*b].value;
                let ratio = binary_forward(aval, bval, |x, y| -x / (y * y));
                let gb = binary_forward(g, &ratio, |x, y| x * y);
                acc(*b, reduce_grad_to(gb, self.nodes[*b].value.shape()));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulScalar(a, s) => acc(*a, g.mapv(|v| v * s)),
            Op::Sqrt(a) => {
                let y = &node.value;
                let mut contrib = g.clone();
                Zip::from(&mut contrib).and(y).for_each(|c, &yy| *c *= 0.5 / yy);
                acc(*a, contrib);
            }
            Op::Ln(a) => {
                let x = &self.nodes[*a].value;
                let mut contrib = g.clone();
                Zip::from(&mut contrib).and(x).for_each(|c, &xx| *c /= xx);
                acc(*a, contrib);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let mut contrib = g.clone();
                Zip::from(&mut contrib).and(y).for_each(|c, &yy| *c *= 1.0 - yy * yy);
                acc(*a, contrib);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let mut contrib = g.clone();
                Zip::from(&mut contrib)
                    .and(y)
                    .for_each(|c, &yy| *c *= yy * (1.0 - yy));
                acc(*a, contrib);
            }
            Op::Gelu(a) => {
                let x = &self.nodes[*a].value;
                let mut contrib = g.clone();
                Zip::from(&mut contrib)
                    .and(x)
                    .for_each(|c, &xx| *c *= gelu_grad_scalar(xx));
                acc(*a, contrib);
            }
            Op::ClampUnit(a) => {
                let x = &self.nodes[*a].value;
                let mut contrib = g.clone();
                Zip::from(&mut contrib).and(x).for_each(|c, &xx| {
                    if !(0.0..=1.0).contains(&xx) {
                        *c = 0.0;
                    }
                });
                acc(*a, contrib);
            }
            Op::SumAll(a) => {
                let seed = g.iter().next().copied().unwrap_or(0.0);
                acc(
                    *a,
                    ArrayD::from_elem(self.nodes[*a].value.raw_dim(), seed),
                );
            }
            Op::SumAxes(a, _) => {
                let target = self.nodes[*a].value.shape();
                let expanded = g
                    .broadcast(IxDyn(target))
                    .expect("keepdims grad broadcast")
                    .to_owned();
                acc(*a, expanded);
            }
            Op::Reshape(a) => {
                let target = self.nodes[*a].value.raw_dim();
                acc(
                    *a,
                    g.clone()
                        .into_shape_with_order(target)
                        .expect("reshape grad"),
                );
            }
            Op::Permute(a, perm) => {
                let mut inverse = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                acc(*a, std_owned(g.view().permuted_axes(IxDyn(&inverse))));
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.shape()[*axis];
                    let piece = std_owned(
                        g.slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len)),
                    );
                    acc(p, piece);
                    offset += len;
                }
            }
            Op::Slice {
                a,
                axis,
                start,
                len,
            } => {
                let mut full = ArrayD::zeros(self.nodes[*a].value.raw_dim());
                full.slice_axis_mut(Axis(*axis), ndarray::Slice::from(*start..*start + *len))
                    .assign(g);
                acc(*a, full);
            }
            Op::MatMul(a, b) => {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("matmul grad 2-D");
                let av = self.nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
                let bv = self.nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
                acc(*a, g2.dot(&bv.t()).into_dyn());
                acc(*b, av.t().dot(&g2).into_dyn());
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (dx, dw, db) = conv2d_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    g,
                    *stride,
                    *pad,
                );
                acc(*x, dx);
                acc(*w, dw);
                if let Some(bi) = b {
                    acc(*bi, db);
                }
            }
            Op::UpsampleNearest2(a) => {
                let (c, h2, w2) = dims3(g);
                let (h, w) = (h2 / 2, w2 / 2);
                let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[[ci, y, xx]] = g[[ci, 2 * y, 2 * xx]]
                                + g[[ci, 2 * y, 2 * xx + 1]]
                                + g[[ci, 2 * y + 1, 2 * xx]]
                                + g[[ci, 2 * y + 1, 2 * xx + 1]];
                        }
                    }
                }
                acc(*a, dx);
            }
            Op::AvgPool2(a) => {
                let (c, h2, w2) = dims3(g);
                let mut dx = ArrayD::zeros(IxDyn(&[c, h2 * 2, w2 * 2]));
                for ci in 0..c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            let v = g[[ci, y, xx]] / 4.0;
                            dx[[ci, 2 * y, 2 * xx]] = v;
                            dx[[ci, 2 * y, 2 * xx + 1]] = v;
                            dx[[ci, 2 * y + 1, 2 * xx]] = v;
                            dx[[ci, 2 * y + 1, 2 * xx + 1]] = v;
                        }
                    }
                }
                acc(*a, dx);
            }
            Op::SoftmaxLastDim(a) => {
                let y = &node.value;
                let last = y.ndim() - 1;
                let mut dx = g.clone();
                // dx = y * (g - sum(g*y, last))
                let gy = binary_forward(g, y, |x, v| x * v);
                let dot = gy.sum_axis(Axis(last)).insert_axis(Axis(last));
                let dotb = dot.broadcast(y.raw_dim()).expect("softmax grad broadcast").to_owned();
                Zip::from(&mut dx)
                    .and(y)
                    .and(&dotb)
                    .for_each(|d, &yy, &dd| *d = yy * (*d - dd));
                acc(*a, dx);
            }
        }
    }
}

fn dims3(a: &ArrayD<f64>) -> (usize, usize, usize) {
    let s = a.shape();
    debug_assert_eq!(s.len(), 3, "expected a [C, H, W] array, got {s:?}");
    (s[0], s[1], s[2])
}

fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Gathers padded patches into a `[C_in*K*K, H_out*W_out]` matrix.
fn im2col(x: &ArrayD<f64>, k: usize, stride: usize, pad: usize) -> ndarray::Array2<f64> {
    let (c, h, w) = dims3(x);
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let mut cols = ndarray::Array2::<f64>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ci * k * k + ky * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * wo + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn conv2d_forward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    b: Option<&ArrayD<f64>>,
    stride: usize,
    pad: usize,
) -> ArrayD<f64> {
    let (ci, h, ww) = dims3(x);
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv kernel must be [Co, Ci, K, K]");
    let (co, wci, k) = (ws[0], ws[1], ws[2]);
    assert_eq!(ws[2], ws[3], "square kernels only");
    assert_eq!(ci, wci, "conv input channels mismatch");
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(ww, k, stride, pad);

    let cols = im2col(x, k, stride, pad);
    let w_mat = w
        .view()
        .into_shape_with_order((co, wci * k * k))
        .expect("kernel reshape");
    let mut out = w_mat.dot(&cols);
    if let Some(bias) = b {
        let bias = bias.view().into_dimensionality::<ndarray::Ix1>().expect("bias 1-D");
        for (mut row, &bv) in out.outer_iter_mut().zip(bias.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    out.into_shape_with_order(IxDyn(&[co, ho, wo])).expect("conv output reshape")
}

fn conv2d_backward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    g: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, ArrayD<f64>, ArrayD<f64>) {
    let (ci, h, ww) = dims3(x);
    let ws = w.shape();
    let (co, k) = (ws[0], ws[2]);
    let (gc, ho, wo) = dims3(g);
    debug_assert_eq!(gc, co);

    let cols = im2col(x, k, stride, pad);
    let g_mat = g
        .view()
        .into_shape_with_order((co, ho * wo))
        .expect("grad reshape");

    let dw = g_mat.dot(&cols.t());
    let dw = dw
        .into_shape_with_order(IxDyn(&[co, ci, k, k]))
        .expect("dw reshape");

    let db = g_mat.sum_axis(Axis(1)).into_dyn();

    let w_mat = w
        .view()
        .into_shape_with_order((co, ci * k * k))
        .expect("kernel reshape");
    let dcols = w_mat.t().dot(&g_mat);

    // col2im: scatter-add patches back onto the input grid.
    let mut dx = ArrayD::zeros(IxDyn(&[ci, h, ww]));
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = c * k * k + ky * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= ww as isize {
                            continue;
                        }
                        dx[[c, iy as usize, ix as usize]] += dcols[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
