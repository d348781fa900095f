//! A small reverse-mode automatic differentiation tape over `f64` tensors.
//!
//! Every forward operation appends a node to a [`Graph`]; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients. Nodes are never
//! removed, so a graph is built per optimization step and then dropped.
//!
//! Binary element-wise operations broadcast with numpy semantics, and their
//! gradients are summed back down to the operand shapes.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn, Zip};

pub type Tensor = ArrayD<f64>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    PowF(usize, f64),
    Exp(usize),
    Ln(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Elu(usize),
    Gelu(usize),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    SumAxes(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Gather(usize, Vec<usize>),
    TemporalConv(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `shape` when it did not influence the output.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.shape()),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a tensor as a leaf (a parameter or an input).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Leaf holding a constant; gradients are still tracked but usually ignored.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::from_elem(IxDyn(&[]), value))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from a scalar (or seeds with ones for non-scalar outputs).
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.id] = Some(Tensor::ones(nodes[output.id].value.raw_dim()));

        for id in (0..=output.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let val = |i: usize| &nodes[i].value;
            let mut contributions: Vec<(usize, Tensor)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(grad);
                    continue;
                }
                Op::Add(a, b) => {
                    contributions.push((*a, unbroadcast(&grad, val(*a).shape())));
                    contributions.push((*b, unbroadcast(&grad, val(*b).shape())));
                }
                Op::Sub(a, b) => {
                    contributions.push((*a, unbroadcast(&grad, val(*a).shape())));
                    contributions.push((*b, unbroadcast(&grad, val(*b).shape()).mapv(|v| -v)));
                }
                Op::Mul(a, b) => {
                    let ga = &grad * val(*b);
                    let gb = &grad * val(*a);
                    contributions.push((*a, unbroadcast(&ga, val(*a).shape())));
                    contributions.push((*b, unbroadcast(&gb, val(*b).shape())));
                }
                Op::Scale(a, c) => contributions.push((*a, grad.mapv(|g| g * c))),
                Op::AddScalar(a) => contributions.push((*a, grad)),
                Op::PowF(a, p) => {
                    let mut g = grad;
                    Zip::from(&mut g)
                        .and(val(*a))
                        .for_each(|g, &x| *g *= p * x.powf(p - 1.0));
                    contributions.push((*a, g));
                }
                Op::Exp(a) => contributions.push((*a, &grad * &node.value)),
                Op::Ln(a) => {
                    let mut g = grad;
                    Zip::from(&mut g).and(val(*a)).for_each(|g, &x| *g /= x);
                    contributions.push((*a, g));
                }
                Op::Sigmoid(a) => {
                    let mut g = grad;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    contributions.push((*a, g));
                }
                Op::LeakyRelu(a, slope) => {
                    let mut g = grad;
                    Zip::from(&mut g).and(val(*a)).for_each(|g, &x| {
                        if x < 0.0 {
                            *g *= slope
                        }
                    });
                    contributions.push((*a, g));
                }
                Op::Elu(a) => {
                    let mut g = grad;
                    Zip::from(&mut g).and(val(*a)).for_each(|g, &x| {
                        if x < 0.0 {
                            *g *= x.exp()
                        }
                    });
                    contributions.push((*a, g));
                }
                Op::Gelu(a) => {
                    let mut g = grad;
                    Zip::from(&mut g)
                        .and(val(*a))
                        .for_each(|g, &x| *g *= gelu_grad(x));
                    contributions.push((*a, g));
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = matmul_backward(val(*a), val(*b), &grad);
                    contributions.push((*a, ga));
                    contributions.push((*b, gb));
                }
                Op::Permute(a, axes) => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    let g = grad.permuted_axes(IxDyn(&inverse));
                    contributions.push((*a, g.as_standard_layout().into_owned()));
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    contributions.push((*a, reshape(grad, &shape)));
                }
                Op::SumAxes(a) => {
                    let g = grad
                        .broadcast(val(*a).raw_dim())
                        .expect("sum gradient broadcasts to input")
                        .to_owned();
                    contributions.push((*a, g));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = &grad * y;
                    let last = Axis(y.ndim() - 1);
                    let dot = gy.sum_axis(last).insert_axis(last);
                    let g = &gy - &(y * &dot);
                    contributions.push((*a, g));
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let last = Axis(y.ndim() - 1);
                    let total = grad.sum_axis(last).insert_axis(last);
                    let soft = y.mapv(f64::exp);
                    let g = &grad - &(&soft * &total);
                    contributions.push((*a, g));
                }
                Op::Gather(a, indices) => {
                    let mut g = Tensor::zeros(val(*a).raw_dim());
                    for (row, &idx) in indices.iter().enumerate() {
                        let mut dst = g.index_axis_mut(Axis(0), idx);
                        dst += &grad.index_axis(Axis(0), row);
                    }
                    contributions.push((*a, g));
                }
                Op::TemporalConv(x, w) => {
                    let (gx, gw) = temporal_conv_backward(val(*x), val(*w), &grad);
                    contributions.push((*x, gx));
                    contributions.push((*w, gw));
                }
            }
            for (target, g) in contributions {
                match &mut grads[target] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.with_value(self.id, |t| t.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_value(self.id, |t| t.shape().to_vec())
    }

    /// Value of a 0-d or single-element tensor.
    pub fn item(&self) -> f64 {
        self.graph.with_value(self.id, |t| {
            assert_eq!(t.len(), 1, "item() on tensor of shape {:?}", t.shape());
            *t.iter().next().unwrap()
        })
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'g> {
        let value = self.graph.with_value(self.id, f);
        self.graph.push(value, op)
    }

    fn binary(self, other: Var<'g>, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Tensor) -> Var<'g> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)
        };
        self.graph.push(value, op)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, c), |t| t.mapv(|v| v * c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |t| t.mapv(|v| v + c))
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.unary(Op::PowF(self.id, p), |t| t.mapv(|v| v.powf(p)))
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp(self.id), |t| t.mapv(f64::exp))
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(Op::Ln(self.id), |t| t.mapv(f64::ln))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), |t| t.mapv(sigmoid))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.unary(Op::LeakyRelu(self.id, slope), |t| {
            t.mapv(|v| if v < 0.0 { slope * v } else { v })
        })
    }

    pub fn elu(self) -> Var<'g> {
        self.unary(Op::Elu(self.id), |t| t.mapv(elu))
    }

    pub fn gelu(self) -> Var<'g> {
        self.unary(Op::Gelu(self.id), |t| t.mapv(gelu))
    }

    /// Matrix product over the last two axes.
    ///
    /// `rhs` is either 2-d (shared across all leading axes of `self`) or has
    /// the same leading axes as `self` (batched product).
    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::MatMul(self.id, rhs.id), matmul_forward)
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g> {
        let axes = axes.to_vec();
        self.unary(Op::Permute(self.id, axes.clone()), |t| {
            t.clone()
                .permuted_axes(IxDyn(&axes))
                .as_standard_layout()
                .into_owned()
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Var<'g> {
        let n = self.shape().len();
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let shape = shape.to_vec();
        self.unary(Op::Reshape(self.id), |t| reshape(t.clone(), &shape))
    }

    /// Sums over `axes`, keeping them as length-1 axes.
    pub fn sum_axes(self, axes: &[usize]) -> Var<'g> {
        let axes = axes.to_vec();
        self.unary(Op::SumAxes(self.id), |t| {
            let mut out = t.clone();
            for &ax in &axes {
                out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
            }
            out
        })
    }

    pub fn mean_axes(self, axes: &[usize]) -> Var<'g> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes).scale(1.0 / count as f64)
    }

    /// Sum of every element as a 0-d tensor.
    pub fn sum(self) -> Var<'g> {
        let n = self.shape().len();
        let axes: Vec<usize> = (0..n).collect();
        self.sum_axes(&axes).reshape(&[])
    }

    pub fn mean(self) -> Var<'g> {
        let count: usize = self.shape().iter().product();
        self.sum().scale(1.0 / count as f64)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'g> {
        self.unary(Op::Softmax(self.id), softmax_last)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'g> {
        self.unary(Op::LogSoftmax(self.id), log_softmax_last)
    }

    /// Selects rows of the leading axis: `out[b] = self[indices[b]]`.
    pub fn gather(self, indices: &[usize]) -> Var<'g> {
        let indices = indices.to_vec();
        self.unary(Op::Gather(self.id, indices.clone()), |t| {
            let views: Vec<_> = indices.iter().map(|&i| t.index_axis(Axis(0), i)).collect();
            ndarray::stack(Axis(0), &views).expect("gather rows share a shape")
        })
    }

    /// Valid 1-d convolution along the last axis.
    ///
    /// `self` is `[..., T]` and `kernel` is `[k, F]`; the result is
    /// `[..., T - k + 1, F]` with `out[.., t, f] = sum_j x[.., t + j] * kernel[j, f]`.
    pub fn temporal_conv(self, kernel: Var<'g>) -> Var<'g> {
        self.binary(kernel, Op::TemporalConv(self.id, kernel.id), temporal_conv_forward)
    }

    /// Layer normalization (no affine) over the given axes.
    pub fn layer_norm(self, axes: &[usize], eps: f64) -> Var<'g> {
        let mu = self.mean_axes(axes);
        let centered = self - mu;
        let var = (centered * centered).mean_axes(axes);
        centered * var.add_scalar(eps).powf(-0.5)
    }

    /// Scales each lane of the last axis to unit Euclidean norm.
    pub fn l2_normalize(self) -> Var<'g> {
        let last = self.shape().len() - 1;
        let sq = (self * self).sum_axes(&[last]);
        self * sq.add_scalar(1e-24).powf(-0.5)
    }
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| a + b)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| a - b)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| a * b)
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f64) -> f64 {
    if x < 0.0 {
        x.exp_m1()
    } else {
        x
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub(crate) fn reshape(t: Tensor, shape: &[usize]) -> Tensor {
    let t = if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    };
    t.into_shape_with_order(IxDyn(shape))
        .unwrap_or_else(|e| panic!("reshape to {shape:?}: {e}"))
}

/// Sums `grad` down to `shape` following numpy broadcasting rules.
fn unbroadcast(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &dim) in shape.iter().enumerate() {
        if dim == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn as_matrix(t: &Tensor, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    t.view()
        .into_shape_with_order((rows, cols))
        .expect("contiguous tensor views as a matrix")
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let ashape = a.shape();
    let bshape = b.shape();
    assert!(ashape.len() >= 2, "matmul lhs must be at least 2-d");
    let k = ashape[ashape.len() - 1];
    let m = ashape[ashape.len() - 2];
    assert_eq!(
        k,
        bshape[bshape.len() - 2],
        "matmul inner dims: {ashape:?} x {bshape:?}"
    );
    let n = bshape[bshape.len() - 1];
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let mut out_shape = ashape.to_vec();
    *out_shape.last_mut().unwrap() = n;
    if bshape.len() == 2 {
        let rows = a.len() / k;
        let prod = as_matrix_view(&a, rows, k).dot(&as_matrix_view(&b, k, n));
        return reshape(prod.into_dyn(), &out_shape);
    }
    assert_eq!(
        ashape[..ashape.len() - 2],
        bshape[..bshape.len() - 2],
        "batched matmul leading dims"
    );
    let batch = a.len() / (m * k);
    let a3 = a.view().into_shape_with_order((batch, m, k)).unwrap();
    let b3 = b.view().into_shape_with_order((batch, k, n)).unwrap();
    let mut out = ndarray::Array3::<f64>::zeros((batch, m, n));
    for i in 0..batch {
        out.slice_mut(s![i, .., ..])
            .assign(&a3.slice(s![i, .., ..]).dot(&b3.slice(s![i, .., ..])));
    }
    reshape(out.into_dyn(), &out_shape)
}

fn as_matrix_view<'a>(t: &'a ndarray::CowArray<'_, f64, IxDyn>, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    t.view()
        .into_shape_with_order((rows, cols))
        .expect("contiguous tensor views as a matrix")
}

fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let ashape = a.shape().to_vec();
    let bshape = b.shape().to_vec();
    let k = ashape[ashape.len() - 1];
    let m = ashape[ashape.len() - 2];
    let n = bshape[bshape.len() - 1];
    if bshape.len() == 2 {
        let rows = a.len() / k;
        let a2 = as_matrix(a, rows, k);
        let g2 = as_matrix(grad, rows, n);
        let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
        let ga = g2.dot(&b2.t());
        let gb = a2.t().dot(&g2);
        return (reshape(ga.into_dyn(), &ashape), gb.into_dyn());
    }
    let batch = a.len() / (m * k);
    let a3 = a.view().into_shape_with_order((batch, m, k)).unwrap();
    let b3 = b.view().into_shape_with_order((batch, k, n)).unwrap();
    let g3 = grad.view().into_shape_with_order((batch, m, n)).unwrap();
    let mut ga = ndarray::Array3::<f64>::zeros((batch, m, k));
    let mut gb = ndarray::Array3::<f64>::zeros((batch, k, n));
    for i in 0..batch {
        let gi = g3.slice(s![i, .., ..]);
        ga.slice_mut(s![i, .., ..])
            .assign(&gi.dot(&b3.slice(s![i, .., ..]).t()));
        gb.slice_mut(s![i, .., ..])
            .assign(&a3.slice(s![i, .., ..]).t().dot(&gi));
    }
    (
        reshape(ga.into_dyn(), &ashape),
        reshape(gb.into_dyn(), &bshape),
    )
}

fn softmax_last(t: &Tensor) -> Tensor {
    let mut out = t.as_standard_layout().into_owned();
    let last = Axis(out.ndim() - 1);
    for mut lane in out.lanes_mut(last) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - max).exp());
        let total = lane.sum();
        lane.mapv_inplace(|v| v / total);
    }
    out
}

fn log_softmax_last(t: &Tensor) -> Tensor {
    let mut out = t.as_standard_layout().into_owned();
    let last = Axis(out.ndim() - 1);
    for mut lane in out.lanes_mut(last) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + lane.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        lane.mapv_inplace(|v| v - lse);
    }
    out
}

/// Sliding windows of length `k` over the rows of `x2`: `[rows · (t − k + 1), k]`.
fn im2col(x2: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let (rows, t) = x2.dim();
    let out_t = t - k + 1;
    let mut cols = Array2::<f64>::zeros((rows * out_t, k));
    for r in 0..rows {
        let xr = x2.row(r);
        for start in 0..out_t {
            cols.row_mut(r * out_t + start)
                .assign(&xr.slice(s![start..start + k]));
        }
    }
    cols
}

fn temporal_conv_forward(x: &Tensor, w: &Tensor) -> Tensor {
    let xshape = x.shape();
    let t = xshape[xshape.len() - 1];
    let k = w.shape()[0];
    assert!(t >= k, "temporal conv: sequence {t} shorter than kernel {k}");
    let out_t = t - k + 1;
    let rows = x.len() / t;
    let x2 = x.as_standard_layout();
    let x2 = x2.view().into_shape_with_order((rows, t)).unwrap();
    let w2 = w.view().into_dimensionality::<Ix2>().unwrap();
    let out = im2col(x2, k).dot(&w2);
    let mut shape = xshape[..xshape.len() - 1].to_vec();
    shape.push(out_t);
    shape.push(w2.ncols());
    reshape(out.into_dyn(), &shape)
}

fn temporal_conv_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let xshape = x.shape().to_vec();
    let t = xshape[xshape.len() - 1];
    let (k, f) = (w.shape()[0], w.shape()[1]);
    let out_t = t - k + 1;
    let rows = x.len() / t;
    let x2 = x.as_standard_layout();
    let x2 = x2.view().into_shape_with_order((rows, t)).unwrap();
    let g = grad.as_standard_layout();
    let g2 = g.view().into_shape_with_order((rows * out_t, f)).unwrap();
    let w2 = w.view().into_dimensionality::<Ix2>().unwrap();
    let gw = im2col(x2, k).t().dot(&g2);
    let gcols = g2.dot(&w2.t());
    let mut gx = Array2::<f64>::zeros((rows, t));
    for r in 0..rows {
        let mut gr = gx.row_mut(r);
        for start in 0..out_t {
            let src = gcols.row(r * out_t + start);
            let mut dst = gr.slice_mut(s![start..start + k]);
            dst += &src;
        }
    }
    (reshape(gx.into_dyn(), &xshape), gw.into_dyn())
}
