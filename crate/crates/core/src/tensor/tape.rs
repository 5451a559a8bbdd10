use rand::Rng;

use super::kernels;
use super::{axis_split, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    PoolRows {
        x: Var,
        stride: usize,
    },
    Rows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records forward ops in execution order; `backward` replays them in
/// reverse, visiting each op once.
///
/// Gradients of leaf values accumulate across `backward` calls until
/// [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Var>>,
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

    /// Records a leaf; it participates in differentiation iff the tensor
    /// requires grad.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor.detached(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Binds a stored parameter, reusing the same leaf on repeated calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.params.get(id.0) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone());
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a leaf, if it requires grad and was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound parameter reached by `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().enumerate().filter_map(|(i, v)| {
            let v = (*v)?;
            self.grad(v).map(|g| (ParamId(i), g))
        })
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn make(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op produced inconsistent shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let t = Self::make(self.shape(a).to_vec(), data);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// `x[..., D] + b[D]`, broadcasting `b` over every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(b) != [d] {
            return Err(Error::dim("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.data(b);
        let data = self
            .data(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(bias).map(|(v, c)| v + c))
            .collect();
        let t = Self::make(self.shape(x).to_vec(), data);
        Ok(self.push(t, Op::AddRow(x, b), &[x, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let t = Self::make(self.shape(a).to_vec(), data);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let t = Self::make(self.shape(a).to_vec(), data);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let t = Self::make(vec![m, n], data);
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[0, 0]));
        }
        let (r, c) = (s[0], s[1]);
        let data = kernels::transpose(self.data(a), r, c);
        let t = Self::make(vec![c, r], data);
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(Error::dim("softmax", s, &[axis]));
        }
        let (outer, n, inner) = axis_split(s, axis);
        let data = kernels::softmax(self.data(x), outer, n, inner);
        let t = Self::make(s.to_vec(), data);
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Normalizes each row over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let rows = self.value(x).len() / d;
        let mut xhat = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for row in self.data(x).chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Self::make(self.shape(x).to_vec(), out);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(t, op, &[x, gain, bias]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| kernels::gelu(v)).collect();
        let t = Self::make(self.shape(x).to_vec(), data);
        self.push(t, Op::Gelu(x), &[x])
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Self::make(self.shape(x).to_vec(), data);
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let block = n * inner;
                data.extend_from_slice(&self.data(p)[o * block..(o + 1) * block]);
            }
        }
        let t = Self::make(shape, data);
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Mean along `axis`; the axis is kept with extent 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("mean", &s, &[axis]));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let src = self.data(x);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let row = &src[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= n as f64);
        let mut shape = s;
        shape[axis] = 1;
        let t = Self::make(shape, data);
        Ok(self.push(t, Op::Mean { x, axis }, &[x]))
    }

    /// Strided mean pooling over the rows of a 2-D `L×D` tensor. Output has
    /// `⌈L/stride⌉` rows; the last window may be partial.
    pub fn mean_pool_rows(&mut self, x: Var, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || stride == 0 {
            return Err(Error::dim("mean_pool_rows", &s, &[stride]));
        }
        if stride == 1 {
            return Ok(x);
        }
        let (l, d) = (s[0], s[1]);
        let out_rows = l.div_ceil(stride);
        let src = self.data(x);
        let mut data = vec![0.0; out_rows * d];
        for r in 0..out_rows {
            let lo = r * stride;
            let hi = (lo + stride).min(l);
            let dst = &mut data[r * d..(r + 1) * d];
            for i in lo..hi {
                for (o, v) in dst.iter_mut().zip(&src[i * d..(i + 1) * d]) {
                    *o += v;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Self::make(vec![out_rows, d], data);
        Ok(self.push(t, Op::PoolRows { x, stride }, &[x]))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(Error::dim("rows", &s, &[start, end]));
        }
        let d = s[1];
        let data = self.data(x)[start * d..end * d].to_vec();
        let t = Self::make(vec![end - start, d], data);
        Ok(self.push(t, Op::Rows { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.data(x).iter().sum());
        self.push(t, Op::Sum(x), &[x])
    }

    /// `x·W (+ b)` for `x[L×in]`, `W[in×out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[B×K]`, computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim("cross_entropy", &s, &[labels.len()]));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = Vec::with_capacity(s[0] * k);
        let mut loss = 0.0;
        for (row, &y) in self.data(logits).chunks(k).zip(labels) {
            let lse = kernels::log_sum_exp(row);
            loss += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let t = Tensor::scalar(loss / labels.len() as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(t, op, &[logits]))
    }

    /// Reverse pass from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss was not recorded on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let nodes = &self.nodes;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        if self.grads.len() < nodes.len() {
            self.grads.resize(nodes.len(), None);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let val = |v: Var| nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {
                    let dst = self.grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    add_into(dst, &g);
                }
                Op::Add(a, b) => {
                    if let Some(ga) = slot(&mut adj, nodes, *a) {
                        add_into(ga, &g);
                    }
                    if let Some(gb) = slot(&mut adj, nodes, *b) {
                        add_into(gb, &g);
                    }
                }
                Op::AddRow(x, b) => {
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        add_into(gx, &g);
                    }
                    if let Some(gb) = slot(&mut adj, nodes, *b) {
                        let d = gb.len();
                        for row in g.chunks(d) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(ga) = slot(&mut adj, nodes, *a) {
                        for ((o, gv), bv) in ga.iter_mut().zip(&g).zip(val(*b)) {
                            *o += gv * bv;
                        }
                    }
                    if let Some(gb) = slot(&mut adj, nodes, *b) {
                        for ((o, gv), av) in gb.iter_mut().zip(&g).zip(val(*a)) {
                            *o += gv * av;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(ga) = slot(&mut adj, nodes, *a) {
                        for (o, gv) in ga.iter_mut().zip(&g) {
                            *o += c * gv;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let sa = nodes[a.0].value.shape();
                    let (m, k, n) = (sa[0], sa[1], nodes[b.0].value.shape()[1]);
                    if let Some(ga) = slot(&mut adj, nodes, *a) {
                        kernels::matmul_add_bt(&g, val(*b), m, k, n, ga);
                    }
                    if let Some(gb) = slot(&mut adj, nodes, *b) {
                        kernels::matmul_add_at(val(*a), &g, m, k, n, gb);
                    }
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    if let Some(ga) = slot(&mut adj, nodes, *a) {
                        add_into(ga, &kernels::transpose(&g, s[0], s[1]));
                    }
                }
                Op::Reshape(a) => {
                    if let Some(ga) = slot(&mut adj, nodes, *a) {
                        add_into(ga, &g);
                    }
                }
                Op::Softmax { x, axis } => {
                    let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                    let y = node.value.data();
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        for o in 0..outer {
                            for j in 0..inner {
                                let idx = |t: usize| (o * n + t) * inner + j;
                                let s: f64 = (0..n).map(|t| g[idx(t)] * y[idx(t)]).sum();
                                for t in 0..n {
                                    gx[idx(t)] += y[idx(t)] * (g[idx(t)] - s);
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = xhat.len() / inv_std.len();
                    if let Some(gb) = slot(&mut adj, nodes, *bias) {
                        for row in g.chunks(d) {
                            add_into(gb, row);
                        }
                    }
                    if let Some(gg) = slot(&mut adj, nodes, *gain) {
                        for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                            for ((o, gv), h) in gg.iter_mut().zip(grow).zip(hrow) {
                                *o += gv * h;
                            }
                        }
                    }
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        let gain = val(*gain);
                        let mut dh = vec![0.0; d];
                        for r in 0..inv_std.len() {
                            let grow = &g[r * d..(r + 1) * d];
                            let hrow = &xhat[r * d..(r + 1) * d];
                            for j in 0..d {
                                dh[j] = grow[j] * gain[j];
                            }
                            let sum_dh: f64 = dh.iter().sum();
                            let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                            let scale = inv_std[r] / d as f64;
                            for j in 0..d {
                                gx[r * d + j] +=
                                    scale * (d as f64 * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                            }
                        }
                    }
                }
                Op::Gelu(x) => {
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        for ((o, gv), xv) in gx.iter_mut().zip(&g).zip(val(*x)) {
                            *o += gv * kernels::gelu_grad(*xv);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        for ((o, gv), m) in gx.iter_mut().zip(&g).zip(mask) {
                            *o += gv * m;
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let n = nodes[p.0].value.shape()[*axis];
                        if let Some(gp) = slot(&mut adj, nodes, p) {
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..][..n * inner];
                                add_into(&mut gp[o * n * inner..(o + 1) * n * inner], src);
                            }
                        }
                        offset += n;
                    }
                }
                Op::Mean { x, axis } => {
                    let (outer, n, inner) = axis_split(nodes[x.0].value.shape(), *axis);
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        let inv = 1.0 / n as f64;
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for t in 0..n {
                                let dst = &mut gx[(o * n + t) * inner..(o * n + t + 1) * inner];
                                for (dv, sv) in dst.iter_mut().zip(src) {
                                    *dv += sv * inv;
                                }
                            }
                        }
                    }
                }
                Op::PoolRows { x, stride } => {
                    let s = nodes[x.0].value.shape();
                    let (l, d) = (s[0], s[1]);
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        for (r, grow) in g.chunks(d).enumerate() {
                            let lo = r * stride;
                            let hi = (lo + stride).min(l);
                            let inv = 1.0 / (hi - lo) as f64;
                            for i in lo..hi {
                                for (o, gv) in gx[i * d..(i + 1) * d].iter_mut().zip(grow) {
                                    *o += gv * inv;
                                }
                            }
                        }
                    }
                }
                Op::Rows { x, start } => {
                    let d = node.value.shape()[1];
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        add_into(&mut gx[start * d..start * d + g.len()], &g);
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = slot(&mut adj, nodes, *x) {
                        gx.iter_mut().for_each(|o| *o += g[0]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let k = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f64;
                    if let Some(gl) = slot(&mut adj, nodes, *logits) {
                        for (r, &y) in labels.iter().enumerate() {
                            for j in 0..k {
                                let onehot = if j == y { 1.0 } else { 0.0 };
                                gl[r * k + j] += scale * (probs[r * k + j] - onehot);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
