use super::kernels::{
    gelu, gelu_grad, log_sum_exp, matmul_nt_into, matmul_tn_into, softmax_group,
    transpose,
};
use super::{as_matrix, axis_split, Tensor, NORMALIZE_EPS};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Exp(Var),
    Gelu(Var),
    Transpose(Var),
    Softmax {
        x: Var,
        axis: usize,
        temperature: f64,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        axis: usize,
        norms: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SelectRows {
        x: Var,
        indices: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    CausalAttention {
        qkv: Var,
        segments: Vec<(usize, usize)>,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `x[m×n] + bias[n]`, the bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.numel() != n {
            return Err(Error::Shape {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    /// `x * s` for a one-element tensor `s` that may itself be trainable.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.numel() != 1 {
            return Err(Error::Shape {
                op: "mul_scalar",
                lhs: self.value(x).shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let c = ts.item();
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::MulScalar(x, s), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v.exp()).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Exp(x), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| gelu(v)).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Gelu(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Softmax of `x / temperature` along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "softmax temperature must be > 0, got {temperature}"
            )));
        }
        let tx = self.value(x);
        let (outer, len, inner) = axis_split(tx.shape(), axis)?;
        let mut out = vec![0.0; tx.numel()];
        for o in 0..outer {
            for j in 0..inner {
                softmax_group(tx.data(), &mut out, o * len * inner + j, len, inner, temperature);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Softmax {
                x,
                axis,
                temperature,
            },
            rg,
        ))
    }

    /// Layer normalization over the last axis followed by `gain * x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        for p in [gain, bias] {
            if self.value(p).numel() != n {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: tx.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = tx.numel() / n.max(1);
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..n {
                let xh = (row[j] - mean) * istd;
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Unit L2 norm along `axis`; zero vectors stay zero.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (outer, len, inner) = axis_split(tx.shape(), axis)?;
        let mut out = tx.data().to_vec();
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let norm = (0..len)
                    .map(|i| tx.data()[base + i * inner].powi(2))
                    .sum::<f64>()
                    .sqrt();
                let denom = norm.max(NORMALIZE_EPS);
                for i in 0..len {
                    out[base + i * inner] /= denom;
                }
                norms.push(norm);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, axis, norms }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, c) = as_matrix(t, "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if b == 0 {
            return Err(Error::Contract("cross_entropy over an empty batch".into()));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::Index {
                    what: "cross_entropy label",
                    index: label,
                    size: c,
                });
            }
            let row = &t.data()[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            loss += lse - row[label];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / b as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Gathers rows of a matrix; also serves as embedding lookup.
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = as_matrix(t, "select_rows")?;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::Index {
                    what: "row",
                    index: i,
                    size: m,
                });
            }
            data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
        }
        let out = Tensor::matrix(indices.len(), n, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        let n = as_matrix(self.value(first), "concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (m, c) = as_matrix(t, "concat_rows")?;
            if c != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += m;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Column means of a matrix, as a `[1×n]` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = as_matrix(t, "mean_rows")?;
        if m == 0 {
            return Err(Error::Contract("mean over zero rows".into()));
        }
        let mut data = vec![0.0; n];
        for row in t.data().chunks(n) {
            for (o, v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut data {
            *o /= m as f64;
        }
        let out = Tensor::matrix(1, n, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Mean(x), rg))
    }

    /// Multi-head causal self-attention over packed sequences.
    ///
    /// `qkv` is `[T × 3d]` with query, key and value blocks side by side;
    /// `segments` lists `(first_row, len)` for each sequence packed into the
    /// `T` rows. Attention never crosses segment boundaries and position `i`
    /// sees only positions `≤ i` of its own segment. Output is `[T × d]`.
    pub fn causal_attention(
        &mut self,
        qkv: Var,
        segments: &[(usize, usize)],
        heads: usize,
    ) -> Result<Var> {
        let t = self.value(qkv);
        let (rows, width) = as_matrix(t, "causal_attention")?;
        if heads == 0 || width % (3 * heads) != 0 {
            return Err(Error::Parameter(format!(
                "qkv width {width} not divisible into 3 x {heads} heads"
            )));
        }
        if let Some(&(s, l)) = segments.iter().find(|&&(s, l)| s + l > rows) {
            return Err(Error::Index {
                what: "attention segment end",
                index: s + l,
                size: rows,
            });
        }
        let d = width / 3;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let src = t.data();
        let mut out = vec![0.0; rows * d];
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments {
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                let mut p = vec![0.0; len * len];
                for i in 0..len {
                    let qi = &src[(start + i) * width + qo..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        let kj = &src[(start + j) * width + ko..][..dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[i * len + j] = s;
                        max = max.max(s);
                    }
                    let mut total = 0.0;
                    for j in 0..=i {
                        let e = (p[i * len + j] - max).exp();
                        p[i * len + j] = e;
                        total += e;
                    }
                    let orow = &mut out[(start + i) * d + h * dh..][..dh];
                    for j in 0..=i {
                        p[i * len + j] /= total;
                        let w = p[i * len + j];
                        let vj = &src[(start + j) * width + vo..][..dh];
                        for (o, v) in orow.iter_mut().zip(vj) {
                            *o += w * v;
                        }
                    }
                }
                probs.push(p);
            }
        }
        let out = Tensor::matrix(rows, d, out)?;
        let rg = self.rg(&[qkv]);
        Ok(self.push(
            out,
            Op::CausalAttention {
                qkv,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Visits every node at or before `loss` exactly once, newest first, and
    /// accumulates gradient contributions additively across fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = as_matrix(ta, "matmul").expect("checked in forward");
                let n = tb.cols();
                acc(*a, &mut |da| matmul_nt_into(g, tb.data(), da, m, n, k));
                acc(*b, &mut |db| matmul_tn_into(ta.data(), g, db, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * tb[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * ta[i];
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let n = self.value(*bias).numel();
                acc(*x, &mut |dx| add_into(dx, g));
                acc(*bias, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |dx| {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)
            }),
            Op::MulScalar(x, s) => {
                let c = self.value(*s).item();
                let tx = self.value(*x).data();
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
                acc(*s, &mut |ds| ds[0] += tx.iter().zip(g).map(|(x, g)| x * g).sum::<f64>());
            }
            Op::Exp(x) => {
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += y[i] * g[i];
                    }
                });
            }
            Op::Gelu(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gelu_grad(tx[i]) * g[i];
                    }
                });
            }
            Op::Transpose(x) => {
                let (m, n) = as_matrix(self.value(*x), "transpose").expect("checked in forward");
                let gt = transpose(g, n, m);
                acc(*x, &mut |dx| add_into(dx, &gt));
            }
            Op::Softmax {
                x,
                axis,
                temperature,
            } => {
                let y = node.value.data();
                let (outer, len, inner) =
                    axis_split(node.value.shape(), *axis).expect("checked in forward");
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let base = o * len * inner + j;
                            let dot: f64 = (0..len)
                                .map(|i| y[base + i * inner] * g[base + i * inner])
                                .sum();
                            for i in 0..len {
                                let k = base + i * inner;
                                dx[k] += y[k] * (g[k] - dot) / temperature;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gd = self.value(*gain).data();
                let n = gd.len();
                acc(*x, &mut |dx| {
                    for (r, &istd) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let xr = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gd[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        for j in 0..n {
                            let d = gr[j] * gd[j];
                            dx[r * n + j] +=
                                istd / n as f64 * (n as f64 * d - sum_d - xr[j] * sum_dx);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(n) {
                        add_into(db, gr);
                    }
                });
            }
            Op::L2Normalize { x, axis, norms } => {
                let y = node.value.data();
                let (outer, len, inner) =
                    axis_split(node.value.shape(), *axis).expect("checked in forward");
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let base = o * len * inner + j;
                            let norm = norms[o * inner + j];
                            if norm > NORMALIZE_EPS {
                                let dot: f64 = (0..len)
                                    .map(|i| y[base + i * inner] * g[base + i * inner])
                                    .sum();
                                for i in 0..len {
                                    let k = base + i * inner;
                                    dx[k] += (g[k] - y[k] * dot) / norm;
                                }
                            } else {
                                for i in 0..len {
                                    let k = base + i * inner;
                                    dx[k] += g[k] / NORMALIZE_EPS;
                                }
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                acc(*logits, &mut |dl| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let q = if j == label { 1.0 } else { 0.0 };
                            dl[r * c + j] += scale * (probs[r * c + j] - q);
                        }
                    }
                });
            }
            Op::SelectRows { x, indices } => {
                let n = node.value.cols();
                acc(*x, &mut |dx| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut dx[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    let slice = &g[offset..offset + len];
                    acc(*p, &mut |dp| add_into(dp, slice));
                    offset += len;
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = as_matrix(self.value(*x), "mean_rows").expect("checked in forward");
                acc(*x, &mut |dx| {
                    for row in dx.chunks_mut(n) {
                        for j in 0..n {
                            row[j] += g[j] / m as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::CausalAttention {
                qkv,
                segments,
                heads,
                probs,
            } => {
                let src = self.value(*qkv).data();
                let width = self.value(*qkv).cols();
                let d = width / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                acc(*qkv, &mut |dq| {
                    let mut probs = probs.iter();
                    for &(start, len) in segments {
                        for h in 0..*heads {
                            let p = probs.next().expect("one prob matrix per segment head");
                            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                            let grow = |i: usize| &g[(start + i) * d + h * dh..][..dh];
                            let row = |i: usize, off: usize| &src[(start + i) * width + off..][..dh];
                            for i in 0..len {
                                let go = grow(i);
                                // dP_ij = dO_i · V_j, then through the row softmax.
                                let mut dp = vec![0.0; i + 1];
                                let mut dot = 0.0;
                                for j in 0..=i {
                                    let v = go.iter().zip(row(j, vo)).map(|(a, b)| a * b).sum::<f64>();
                                    dp[j] = v;
                                    dot += p[i * len + j] * v;
                                }
                                for j in 0..=i {
                                    let pij = p[i * len + j];
                                    let ds = pij * (dp[j] - dot) * scale;
                                    let vrow = (start + j) * width + vo;
                                    for c in 0..dh {
                                        dq[vrow + c] += pij * go[c];
                                    }
                                    if ds != 0.0 {
                                        let qrow = (start + i) * width + qo;
                                        let krow = (start + j) * width + ko;
                                        for c in 0..dh {
                                            dq[qrow + c] += ds * src[krow + c];
                                            dq[krow + c] += ds * src[qrow + c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
