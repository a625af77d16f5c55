//! Wengert-list reverse-mode differentiation over dense tensors.
//!
//! Every forward operation appends a node holding its value and operand ids,
//! so operands always precede their consumers. `backward` walks the list in
//! reverse, accumulating vector-Jacobian products into per-node adjoints.

use crate::error::{invalid, Error, Result};
use crate::numcore::tensor::{matmul_t, Tensor};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which axis the affine gain/bias of a row normalization runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAffine {
    /// One gain per column (layer norm over the features of each row).
    PerColumn,
    /// One gain per row (instance norm of each channel over its samples).
    PerRow,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddRowBias { x: NodeId, bias: NodeId },
    MulRows { x: NodeId, s: NodeId },
    Softmax(NodeId),
    RowNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        affine: NormAffine,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(NodeId),
    Transpose(NodeId),
    SliceCols { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Sum(NodeId),
    SumSquares(NodeId),
    Sqrt(NodeId),
    GridGradient { a: NodeId, h: usize, w: usize, dx: T, dy: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `id`, or `None` if the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of `id`, zero-filled with the given shape if it was never reached.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

pub(crate) const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub(crate) const GELU_CUBIC: f64 = 0.044715;

// 0.5 (1 + tanh(u)) = 1 / (1 + exp(-2u)); exp is much cheaper than tanh.
fn half_one_plus_tanh<T: Scalar>(x: T) -> T {
    let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_CUBIC) * x * x * x);
    T::one() / (T::one() + (-(u + u)).exp())
}

pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * half_one_plus_tanh(x)
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let k = T::of(GELU_CUBIC);
    let s = half_one_plus_tanh(x);
    s + T::of(2.0) * x * s * (T::one() - s) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// Stencil of the grid derivative at position `i` of an axis with `n >= 2` points,
/// as `(index, coefficient)` pairs in units of `1/spacing`.
fn diff_stencil<T: Scalar>(i: usize, n: usize) -> [(usize, T); 2] {
    if i == 0 {
        [(1, T::one()), (0, -T::one())]
    } else if i == n - 1 {
        [(n - 1, T::one()), (n - 2, -T::one())]
    } else {
        let half = T::of(0.5);
        [(i + 1, half), (i - 1, -half)]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn dims2(&self, id: NodeId) -> Result<(usize, usize)> {
        self.value(id).dims2()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` with optional transposition of each operand.
    pub fn matmul_t(&mut self, a: NodeId, ta: bool, b: NodeId, tb: bool) -> Result<NodeId> {
        let value = matmul_t(self.value(a), ta, self.value(b), tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let value = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `y[r, k] = x[r, k] + bias[r]`.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x)?;
        if self.value(bias).len() != r {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: vec![r, c],
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(xd[i * c..(i + 1) * c].iter().map(|&v| v + b[i]));
        }
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddRowBias { x, bias }, rg))
    }

    /// `y[r, k] = x[r, k] * s[r]`.
    pub fn mul_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x)?;
        if self.value(s).len() != r {
            return Err(Error::ShapeMismatch {
                op: "mul_rows",
                left: vec![r, c],
                right: self.shape(s).to_vec(),
            });
        }
        let sd = self.value(s).data();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(xd[i * c..(i + 1) * c].iter().map(|&v| v * sd[i]));
        }
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, Op::MulRows { x, s }, rg))
    }

    /// Row-wise softmax stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = softmax_rows(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Standardize each row over its columns, then apply gain and bias along `affine`.
    pub fn row_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: T,
        affine: NormAffine,
    ) -> Result<NodeId> {
        if eps <= T::zero() {
            return Err(invalid("eps", "must be positive"));
        }
        let (r, c) = self.dims2(x)?;
        if c < 2 {
            return Err(invalid("norm width", format!("need at least 2 entries per row, got {c}")));
        }
        let expected = match affine {
            NormAffine::PerColumn => c,
            NormAffine::PerRow => r,
        };
        for p in [gain, bias] {
            if self.value(p).len() != expected {
                return Err(Error::ShapeMismatch {
                    op: "row_norm",
                    left: vec![r, c],
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let xd = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let cf = T::of(c as f64);
        let mut mean = Vec::with_capacity(r);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mu = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cf;
            let rs = T::one() / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                let xhat = (v - mu) * rs;
                let (gg, bb) = match affine {
                    NormAffine::PerColumn => (g[j], b[j]),
                    NormAffine::PerRow => (g[i], b[i]),
                };
                out.push(xhat * gg + bb);
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::RowNorm {
                x,
                gain,
                bias,
                affine,
                mean,
                rstd,
            },
            rg,
        ))
    }

    /// Layer norm: each row standardized over its columns, per-column gain/bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        self.row_norm(x, gain, bias, eps, NormAffine::PerColumn)
    }

    /// Instance norm: each channel (row) standardized over its samples, per-row gain/bias.
    pub fn instance_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: T,
    ) -> Result<NodeId> {
        self.row_norm(x, gain, bias, eps, NormAffine::PerRow)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(gelu_scalar);
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a)?;
        if len == 0 || start + len > c {
            return Err(invalid(
                "column slice",
                format!("[{start}, {}) out of {c} columns", start + len),
            ));
        }
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols { a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| invalid("concat", "no operands"))?;
        let (r, _) = self.dims2(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: vec![pr, pc],
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![r, total], out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().map(|&x| x * x).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x.sqrt());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sqrt(a), rg)
    }

    /// Finite-difference gradient of each row viewed as an `h x w` grid
    /// (row-major, first axis spacing `dx`, second `dy`): central differences
    /// in the interior, one-sided at the edges. Output is `rows x 2hw` with the
    /// first-axis derivative followed by the second.
    pub fn grid_gradient(&mut self, a: NodeId, h: usize, w: usize, dx: T, dy: T) -> Result<NodeId> {
        let (r, c) = self.dims2(a)?;
        if h < 2 || w < 2 || h * w != c {
            return Err(invalid(
                "grid",
                format!("{h}x{w} grid does not match {c} columns (need h, w >= 2)"),
            ));
        }
        let d = self.value(a).data();
        let mut out = vec![T::zero(); r * 2 * c];
        for row in 0..r {
            let u = &d[row * c..(row + 1) * c];
            let o = &mut out[row * 2 * c..(row + 1) * 2 * c];
            for i in 0..h {
                for j in 0..w {
                    let mut gx = T::zero();
                    for (ii, coef) in diff_stencil::<T>(i, h) {
                        gx += coef * u[ii * w + j];
                    }
                    let mut gy = T::zero();
                    for (jj, coef) in diff_stencil::<T>(j, w) {
                        gy += coef * u[i * w + jj];
                    }
                    o[i * w + j] = gx / dx;
                    o[c + i * w + j] = gy / dy;
                }
            }
        }
        let value = Tensor::new(vec![r, 2 * c], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GridGradient { a, h, w, dx, dy }, rg))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut adj)?;
            }
            adj[idx] = Some(g);
        }

        let grads = adj
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("adjoint shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], adj: &mut [Option<Vec<T>>]) -> Result<()> {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let zeros = |id: NodeId| vec![T::zero(); self.nodes[id.0].value.len()];
        macro_rules! slot {
            ($id:expr) => {
                adj[$id.0].get_or_insert_with(|| zeros($id))
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (ar, ac) = av.dims2()?;
                let (br, bc) = bv.dims2()?;
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                // strides of op(a) and op(b) as stored
                let sa = if *ta { (1, ac) } else { (ac, 1) };
                let sb = if *tb { (1, bc) } else { (bc, 1) };
                if needs(*a) {
                    let buf = slot!(*a);
                    // d op(a) = g * op(b)^T  (m x k); scatter into a's storage layout
                    let out_strides = if *ta { (1, ac) } else { (ac, 1) };
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        (n, 1),
                        bv.data(),
                        (sb.1, sb.0),
                        T::one(),
                        buf,
                        out_strides,
                    );
                }
                if needs(*b) {
                    let buf = slot!(*b);
                    // d op(b) = op(a)^T * g  (k x n)
                    let out_strides = if *tb { (1, bc) } else { (bc, 1) };
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        av.data(),
                        (sa.1, sa.0),
                        g,
                        (n, 1),
                        T::one(),
                        buf,
                        out_strides,
                    );
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if needs(id) {
                        axpy(slot!(id), g, T::one());
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    axpy(slot!(*a), g, T::one());
                }
                if needs(*b) {
                    axpy(slot!(*b), g, -T::one());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bd = self.value(*b).data();
                    for ((s, &gi), &bi) in slot!(*a).iter_mut().zip(g).zip(bd) {
                        *s += gi * bi;
                    }
                }
                if needs(*b) {
                    let ad = self.value(*a).data();
                    for ((s, &gi), &ai) in slot!(*b).iter_mut().zip(g).zip(ad) {
                        *s += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    axpy(slot!(*a), g, *s);
                }
            }
            Op::AddRowBias { x, bias } => {
                let (r, c) = self.dims2(*x)?;
                if needs(*x) {
                    axpy(slot!(*x), g, T::one());
                }
                if needs(*bias) {
                    let buf = slot!(*bias);
                    for i in 0..r {
                        buf[i] += g[i * c..(i + 1) * c].iter().copied().sum::<T>();
                    }
                }
            }
            Op::MulRows { x, s } => {
                let (r, c) = self.dims2(*x)?;
                if needs(*x) {
                    let sd = self.value(*s).data();
                    let buf = slot!(*x);
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[i * c + j] * sd[i];
                        }
                    }
                }
                if needs(*s) {
                    let xd = self.value(*x).data();
                    let buf = slot!(*s);
                    for i in 0..r {
                        let mut acc = T::zero();
                        for j in 0..c {
                            acc += g[i * c + j] * xd[i * c + j];
                        }
                        buf[i] += acc;
                    }
                }
            }
            Op::Softmax(a) => {
                if needs(*a) {
                    let (r, c) = node.value.dims2()?;
                    let y = node.value.data();
                    let buf = slot!(*a);
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&yy, &gg)| yy * gg).sum();
                        for j in 0..c {
                            buf[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::RowNorm {
                x,
                gain,
                bias,
                affine,
                mean,
                rstd,
            } => {
                let (r, c) = self.dims2(*x)?;
                let xd = self.value(*x).data();
                let gd = self.value(*gain).data();
                let cf = T::of(c as f64);
                let xhat = |i: usize, j: usize| (xd[i * c + j] - mean[i]) * rstd[i];
                let gain_at = |i: usize, j: usize| match affine {
                    NormAffine::PerColumn => gd[j],
                    NormAffine::PerRow => gd[i],
                };
                if needs(*gain) {
                    let buf = slot!(*gain);
                    for i in 0..r {
                        for j in 0..c {
                            let k = if *affine == NormAffine::PerColumn { j } else { i };
                            buf[k] += g[i * c + j] * xhat(i, j);
                        }
                    }
                }
                if needs(*bias) {
                    let buf = slot!(*bias);
                    for i in 0..r {
                        for j in 0..c {
                            let k = if *affine == NormAffine::PerColumn { j } else { i };
                            buf[k] += g[i * c + j];
                        }
                    }
                }
                if needs(*x) {
                    let buf = slot!(*x);
                    let mut dxhat = vec![T::zero(); c];
                    for i in 0..r {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..c {
                            dxhat[j] = g[i * c + j] * gain_at(i, j);
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat(i, j);
                        }
                        mean_d /= cf;
                        mean_dx /= cf;
                        for j in 0..c {
                            buf[i * c + j] += rstd[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if needs(*a) {
                    let ad = self.value(*a).data();
                    for ((s, &gi), &xi) in slot!(*a).iter_mut().zip(g).zip(ad) {
                        *s += gi * gelu_derivative(xi);
                    }
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let (r, c) = self.dims2(*a)?;
                    let buf = slot!(*a);
                    // value is c x r; g[j * r + i] is the adjoint of a[i, j]
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if needs(*a) {
                    let (r, c) = self.dims2(*a)?;
                    let len = node.value.cols();
                    let buf = slot!(*a);
                    for i in 0..r {
                        axpy(
                            &mut buf[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                            T::one(),
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if needs(p) {
                        let buf = slot!(p);
                        for i in 0..r {
                            axpy(
                                &mut buf[i * w..(i + 1) * w],
                                &g[i * total + offset..i * total + offset + w],
                                T::one(),
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let g0 = g[0];
                    slot!(*a).iter_mut().for_each(|s| *s += g0);
                }
            }
            Op::SumSquares(a) => {
                if needs(*a) {
                    let two_g = T::of(2.0) * g[0];
                    let ad = self.value(*a).data();
                    for (s, &x) in slot!(*a).iter_mut().zip(ad) {
                        *s += two_g * x;
                    }
                }
            }
            Op::Sqrt(a) => {
                if needs(*a) {
                    let y = node.value.data();
                    let half = T::of(0.5);
                    for ((s, &gi), &yi) in slot!(*a).iter_mut().zip(g).zip(y) {
                        // subgradient 0 at the kink
                        if yi > T::zero() {
                            *s += gi * half / yi;
                        }
                    }
                }
            }
            Op::GridGradient { a, h, w, dx, dy } => {
                if needs(*a) {
                    let (h, w) = (*h, *w);
                    let c = h * w;
                    let r = self.value(*a).rows();
                    let buf = slot!(*a);
                    for row in 0..r {
                        let go = &g[row * 2 * c..(row + 1) * 2 * c];
                        let b = &mut buf[row * c..(row + 1) * c];
                        for i in 0..h {
                            for j in 0..w {
                                let gx = go[i * w + j] / *dx;
                                let gy = go[c + i * w + j] / *dy;
                                for (ii, coef) in diff_stencil::<T>(i, h) {
                                    b[ii * w + j] += coef * gx;
                                }
                                for (jj, coef) in diff_stencil::<T>(j, w) {
                                    b[i * w + jj] += coef * gy;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = w.dims2()?;
    let d = w.data();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = &d[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&x| (x - max).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|x| *x /= z);
    }
    Tensor::new(vec![r, c], out)
}
