use super::{gemm, shape_err, Scalar, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        /// `b` is shared across the batch (2D weight).
        shared_b: bool,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        /// Normalized input `x̂` and per-row `1/σ`.
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    Silu {
        a: Var,
    },
    Slice {
        a: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    RepeatRows {
        a: Var,
        repeats: usize,
    },
    Mean {
        a: Var,
    },
    SumSquares {
        a: Var,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Single-owner; build one per forward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient for `v`; zero when no path connects `v` to the loss.
    pub fn get(&self, v: Var) -> Tensor<F> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

/// `tanh` through a single `exp`; saturates cleanly to ±1.
#[inline]
fn tanh_exp<F: Scalar>(x: F) -> F {
    let two = F::one() + F::one();
    F::one() - two / ((two * x).exp() + F::one())
}

fn suffix_of(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn permuted_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// out[idx] = x[perm-mapped idx]; out axis `i` is input axis `perm[i]`.
fn permute_data<F: Copy>(x: &[F], shape: &[usize], perm: &[usize]) -> (Vec<F>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = permuted_strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    if rank > 0 && src_strides[rank - 1] == 1 && !x.is_empty() {
        // innermost axis stays contiguous: copy whole rows
        let row = out_shape[rank - 1];
        let mut idx = vec![0usize; rank - 1];
        for _ in 0..x.len() / row {
            let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            out.extend_from_slice(&x[off..off + row]);
            for ax in (0..rank - 1).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        return (out, out_shape);
    }
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(x[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFiniteValue { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf tensor; `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// `a[..., m, k] · b`, where `b` is either a shared `k×n` matrix or has
    /// the same leading batch shape `[..., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes of `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let shared_b = sb.len() == 2;
        let batch_shape = &sa[..sa.len() - 2];
        if !shared_b && sb[..sb.len() - 2] != *batch_shape {
            return Err(shape_err("matmul", format!("batch dims {sa:?} x {sb:?}")));
        }
        let batch: usize = batch_shape.iter().product();
        let mut out_shape = batch_shape.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![F::zero(); batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if shared_b {
                gemm(batch * m, k, n, av, false, bv, trans_b, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        false,
                        &bv[i * k * n..(i + 1) * k * n],
                        trans_b,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let rg = self.req(a) || self.req(b);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
                trans_b,
            },
            rg,
            "matmul",
        )
    }

    /// Elementwise sum; `b` may also match a trailing suffix of `a`'s shape
    /// (bias / positional-embedding broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if !suffix_of(sb, sa) {
            return Err(shape_err("add", format!("{sa:?} + {sb:?}")));
        }
        let shape = sa.to_vec();
        let bv = self.value(b).data();
        let nb = bv.len();
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(av.len());
        for chunk in av.chunks(nb.max(1)) {
            out.extend(chunk.iter().zip(bv).map(|(&x, &y)| x + y));
        }
        let rg = self.req(a) || self.req(b);
        self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("sub", format!("{:?} - {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a) || self.req(b);
        self.push(Tensor::new(shape, out)?, Op::Sub { a, b }, rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", format!("{:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a) || self.req(b);
        self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let cf = F::from_f64(c);
        let out: Vec<F> = self.value(a).data().iter().map(|&x| x * cf).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(Tensor::new(shape, out)?, Op::Scale { a, c }, rg, "scale")
    }

    /// Layer normalization over the last axis with optional affine gain and
    /// bias (each of shape `[d]`), `eps = 1e-5`.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err("layer_norm", "rank 0 input"))?;
        for p in [gain, bias].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(shape_err("layer_norm", format!("affine {:?} vs d={d}", self.shape(p))));
            }
        }
        let xv = self.value(x).data();
        let rows = xv.len() / d.max(1);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            xhat.extend(row.iter().map(|v| (v.as_f64() - mean) * rs));
        }
        let g = gain.map(|g| self.value(g).to_f64_vec());
        let b = bias.map(|b| self.value(b).to_f64_vec());
        let out: Vec<F> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let j = i % d;
                let y = h * g.as_ref().map_or(1.0, |g| g[j]) + b.as_ref().map_or(0.0, |b| b[j]);
                F::from_f64(y)
            })
            .collect();
        let rg = self.req(x) || gain.is_some_and(|g| self.req(g)) || bias.is_some_and(|b| self.req(b));
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
            "layer_norm",
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err("softmax", "rank 0 input"))?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let rg = self.req(a);
        self.push(Tensor::new(shape, out)?, Op::Softmax { a }, rg, "softmax")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let c = F::from_f64(GELU_C);
        let k = F::from_f64(GELU_A);
        let half = F::from_f64(0.5);
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| half * x * (F::one() + tanh_exp(c * (x + k * x * x * x))))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(Tensor::new(shape, out)?, Op::Gelu { a }, rg, "gelu")
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x / (F::one() + (-x).exp()))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(Tensor::new(shape, out)?, Op::Silu { a }, rg, "silu")
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("slice", format!("{shape:?} axis {axis} [{start}, +{len})")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.req(a);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::Slice {
                a,
                outer,
                axis_len,
                inner,
                start,
                len,
            },
            rg,
            "slice",
        )
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(shape_err("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
            lens.push((p, s[axis]));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, l) in &lens {
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.req(p));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: lens,
                outer,
                inner,
            },
            rg,
            "concat",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.req(a);
        self.push(Tensor::new(shape.to_vec(), data)?, Op::Reshape { a }, rg, "reshape")
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{perm:?} for {shape:?}")));
        }
        let (out, out_shape) = permute_data(self.value(a).data(), &shape, perm);
        let rg = self.req(a);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            rg,
            "permute",
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(shape_err("transpose", format!("{:?}", self.shape(a))));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    /// Embedding lookup: rows of a `[V, d]` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || indices.iter().any(|&i| i >= s[0]) {
            return Err(shape_err("gather_rows", format!("table {s:?}, indices {indices:?}")));
        }
        let d = s[1];
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.req(table);
        self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    /// `[B, d] → [B, repeats, d]`.
    pub fn repeat_rows(&mut self, a: Var, repeats: usize) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("repeat_rows", format!("{s:?}")));
        }
        let (b, d) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * repeats * d);
        for i in 0..b {
            for _ in 0..repeats {
                out.extend_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        let rg = self.req(a);
        self.push(
            Tensor::new(vec![b, repeats, d], out)?,
            Op::RepeatRows { a, repeats },
            rg,
            "repeat_rows",
        )
    }

    /// Mean of all elements (scalar).
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).data();
        if v.is_empty() {
            return Err(shape_err("mean", "empty tensor"));
        }
        let s = v.iter().fold(F::zero(), |acc, &x| acc + x) / F::from_f64(v.len() as f64);
        let rg = self.req(a);
        self.push(Tensor::scalar(s), Op::Mean { a }, rg, "mean")
    }

    /// Sum of squared elements (scalar).
    pub fn sum_of_squares(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().fold(F::zero(), |acc, &x| acc + x * x);
        let rg = self.req(a);
        self.push(Tensor::scalar(s), Op::SumSquares { a }, rg, "sum_of_squares")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, TensorError> {
        let ls = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let numel = |v: Var| self.nodes[v.0].value.numel();
        // Returns the accumulation buffer for `v`, creating zeros on first use.
        fn slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut Vec<F> {
            grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
        }

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
                trans_b,
            } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                if needs(a) {
                    let ga = slot(grads, a, numel(a));
                    if shared_b {
                        // dA = dC · op(B)ᵀ
                        gemm(batch * m, n, k, g, false, bv, !trans_b, ga, true);
                    } else {
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &bv[i * k * n..(i + 1) * k * n],
                                !trans_b,
                                &mut ga[i * m * k..(i + 1) * m * k],
                                true,
                            );
                        }
                    }
                }
                if needs(b) {
                    let gb = slot(grads, b, numel(b));
                    let (rows, span) = if shared_b { (batch * m, 1) } else { (m, batch) };
                    for i in 0..span {
                        let gi = &g[i * rows * n..(i + 1) * rows * n];
                        let ai = &av[i * rows * k..(i + 1) * rows * k];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            // B stored n×k: dB = dCᵀ · A
                            gemm(n, rows, k, gi, true, ai, false, gbi, true);
                        } else {
                            // dB = Aᵀ · dC
                            gemm(k, rows, n, ai, true, gi, false, gbi, true);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                if needs(a) {
                    let ga = slot(grads, a, numel(a));
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                }
                if needs(b) {
                    let nb = numel(b);
                    let gb = slot(grads, b, nb);
                    for chunk in g.chunks(nb.max(1)) {
                        for (x, &y) in gb.iter_mut().zip(chunk) {
                            *x = *x + y;
                        }
                    }
                }
            }
            &Op::Sub { a, b } => {
                if needs(a) {
                    let ga = slot(grads, a, numel(a));
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                }
                if needs(b) {
                    let gb = slot(grads, b, numel(b));
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x = *x - y;
                    }
                }
            }
            &Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                if needs(a) {
                    let ga = slot(grads, a, numel(a));
                    for ((x, &y), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + y * w;
                    }
                }
                if needs(b) {
                    let gb = slot(grads, b, numel(b));
                    for ((x, &y), &w) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + y * w;
                    }
                }
            }
            &Op::Scale { a, c } => {
                let cf = F::from_f64(c);
                let ga = slot(grads, a, numel(a));
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x = *x + y * cf;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.value.shape().last().expect("rank >= 1");
                let gv = gain.map(|p| self.nodes[p.0].value.to_f64_vec());
                if let Some(p) = gain.filter(|&p| needs(p)) {
                    let gg = slot(grads, p, d);
                    for (i, (&y, &h)) in g.iter().zip(xhat).enumerate() {
                        gg[i % d] = gg[i % d] + F::from_f64(y.as_f64() * h);
                    }
                }
                if let Some(p) = bias.filter(|&p| needs(p)) {
                    let gb = slot(grads, p, d);
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % d] = gb[i % d] + y;
                    }
                }
                if needs(*x) {
                    let gx = slot(grads, *x, numel(*x));
                    let mut dh = vec![0.0; d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let hr = &xhat[span.clone()];
                        for j in 0..d {
                            dh[j] = g[r * d + j].as_f64() * gv.as_ref().map_or(1.0, |w| w[j]);
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (j, out) in gx[span].iter_mut().enumerate() {
                            *out = *out + F::from_f64(rs * (dh[j] - mean_dh - hr[j] * mean_dh_h));
                        }
                    }
                }
            }
            &Op::Softmax { a } => {
                let y = node.value.data();
                let d = *node.value.shape().last().expect("rank >= 1");
                let ga = slot(grads, a, numel(a));
                for ((yr, gr), out) in y.chunks(d).zip(g.chunks(d)).zip(ga.chunks_mut(d)) {
                    let dot = yr.iter().zip(gr).fold(F::zero(), |acc, (&p, &q)| acc + p * q);
                    for ((o, &p), &q) in out.iter_mut().zip(yr).zip(gr) {
                        *o = *o + p * (q - dot);
                    }
                }
            }
            &Op::Gelu { a } => {
                let xv = self.nodes[a.0].value.data();
                let ga = slot(grads, a, numel(a));
                let (c, k, half) = (F::from_f64(GELU_C), F::from_f64(GELU_A), F::from_f64(0.5));
                let three = F::from_f64(3.0);
                for ((o, &x), &y) in ga.iter_mut().zip(xv).zip(g) {
                    let th = tanh_exp(c * (x + k * x * x * x));
                    let dydx = half * (F::one() + th)
                        + half * x * (F::one() - th * th) * c * (F::one() + three * k * x * x);
                    *o = *o + y * dydx;
                }
            }
            &Op::Silu { a } => {
                let xv = self.nodes[a.0].value.data();
                let ga = slot(grads, a, numel(a));
                for ((o, &x), &y) in ga.iter_mut().zip(xv).zip(g) {
                    let s = F::one() / (F::one() + (-x).exp());
                    *o = *o + y * s * (F::one() + x * (F::one() - s));
                }
            }
            &Op::Slice {
                a,
                outer,
                axis_len,
                inner,
                start,
                len,
            } => {
                let ga = slot(grads, a, numel(a));
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        ga[dst + i] = ga[dst + i] + g[src + i];
                    }
                }
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, l) in parts {
                    if needs(p) {
                        let gp = slot(grads, p, numel(p));
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * l * inner;
                            for i in 0..l * inner {
                                gp[dst + i] = gp[dst + i] + g[src + i];
                            }
                        }
                    }
                    offset += l;
                }
            }
            &Op::Reshape { a } => {
                let ga = slot(grads, a, numel(a));
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x = *x + y;
                }
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inv);
                let ga = slot(grads, *a, numel(*a));
                for (x, y) in ga.iter_mut().zip(back) {
                    *x = *x + y;
                }
            }
            Op::Gather { table, indices } => {
                let d = node.value.shape()[1];
                let gt = slot(grads, *table, numel(*table));
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] = gt[i * d + j] + g[r * d + j];
                    }
                }
            }
            &Op::RepeatRows { a, repeats } => {
                let d = node.value.shape()[2];
                let ga = slot(grads, a, numel(a));
                for (row, chunk) in g.chunks(repeats * d).enumerate() {
                    for rep in chunk.chunks(d) {
                        for j in 0..d {
                            ga[row * d + j] = ga[row * d + j] + rep[j];
                        }
                    }
                }
            }
            &Op::Mean { a } => {
                let n = numel(a);
                let share = g[0] / F::from_f64(n as f64);
                let ga = slot(grads, a, n);
                for x in ga.iter_mut() {
                    *x = *x + share;
                }
            }
            &Op::SumSquares { a } => {
                let av = self.nodes[a.0].value.data();
                let two = F::from_f64(2.0) * g[0];
                let ga = slot(grads, a, numel(a));
                for (x, &v) in ga.iter_mut().zip(av) {
                    *x = *x + two * v;
                }
            }
        }
    }
}
