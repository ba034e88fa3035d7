use std::sync::Arc;

use super::ops::{gelu, gelu_derivative, gemm, layer_norm, normalize_rows, softmax_lastdim};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBroadcast { x: Var, b: Var },
    MulBroadcast { x: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu { x: Var },
    Gather { x: Var, index: Arc<[usize]> },
    Concat { parts: Vec<Var>, axis: usize },
    Sum { x: Var },
    MeanTokens { x: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, smoothing: f64, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    label: &'static str,
}

/// Records forward operations so gradients can be pulled back from a scalar.
///
/// A tape is single-use and single-threaded: build one per training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
}

/// Result of [`Tape::backward`]; unreached values report exact zeros.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Gradient of the parameter registered under `id`, if it was bound.
    pub fn param(&self, id: usize) -> Option<Tensor> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|&(_, v)| self.wrt(v))
    }

    pub fn params(&self) -> impl Iterator<Item = (usize, Tensor)> + '_ {
        self.params.iter().map(|&(id, v)| (id, self.wrt(v)))
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn label(&self, v: Var) -> &'static str {
        self.nodes[v.0].label
    }

    fn push(&mut self, value: Tensor, op: Op, label: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{label} (tape node {})",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { value, op, label });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf value (input data or constant). Gradients are still collected.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            label: "input",
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf registered under a parameter id so [`Gradients::param`] finds it.
    pub fn param(&mut self, id: usize, value: Tensor) -> Var {
        let v = self.input(value);
        self.nodes[v.0].label = "param";
        self.params.push((id, v));
        v
    }

    /// `a[..., K] x b[K, P]`, leading axes of `a` flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, "matmul")
    }

    /// Batched product over the leading axis: `[B, M, K] x [B, K, N]`, or
    /// `[B, M, K] x [B, N, K]^T` when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(shape_err("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let b_strides = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..],
                (k as isize, 1),
                &bv[i * k * n..],
                b_strides,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.push(
            Tensor::new(vec![batch, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            "batch_matmul",
        )
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(data, Op::Add { a, b }, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(data, Op::Mul { a, b }, "mul")
    }

    fn check_suffix(&self, op: &str, x: Var, b: Var) -> Result<usize> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(shape_err(op, format!("{sb:?} is not a suffix of {sx:?}")));
        }
        Ok(self.value(b).numel())
    }

    /// `x + b` where `b`'s shape is a trailing suffix of `x`'s shape.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let width = self.check_suffix("add_broadcast", x, b)?;
        let mut out = self.value(x).clone();
        let bv = self.value(b).data();
        for chunk in out.data_mut().chunks_mut(width) {
            for (o, &v) in chunk.iter_mut().zip(bv) {
                *o += v;
            }
        }
        self.push(out, Op::AddBroadcast { x, b }, "add_broadcast")
    }

    /// `x * b` with the same broadcasting rule as [`Tape::add_broadcast`].
    pub fn mul_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let width = self.check_suffix("mul_broadcast", x, b)?;
        let mut out = self.value(x).clone();
        let bv = self.value(b).data();
        for chunk in out.data_mut().chunks_mut(width) {
            for (o, &v) in chunk.iter_mut().zip(bv) {
                *o *= v;
            }
        }
        self.push(out, Op::MulBroadcast { x, b }, "mul_broadcast")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, "scale")
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax_lastdim(self.value(x))?;
        self.push(out, Op::Softmax { x }, "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let out = layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let (xhat, rstd) = normalize_rows(self.value(x), eps);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            "layer_norm",
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = gelu(self.value(x));
        self.push(out, Op::Gelu { x }, "gelu")
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`. Covers every pure data
    /// movement: slicing, permutation, patch extraction and replication.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(x).data();
        if shape.iter().product::<usize>() != index.len() {
            return Err(shape_err(
                "gather",
                format!("{} indices for shape {shape:?}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err(
                "gather",
                format!("index {bad} out of range {}", src.len()),
            ));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        self.push(Tensor::new(shape, data)?, Op::Gather { x, index }, "gather")
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&1);
        if start + len > width {
            return Err(shape_err(
                "slice_last",
                format!("[{start}, {}) outside width {width}", start + len),
            ));
        }
        let rows = self.value(x).numel() / width.max(1);
        let index: Arc<[usize]> = (0..rows)
            .flat_map(|r| (start..start + len).map(move |c| r * width + c))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        self.gather(x, index, out_shape)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} on {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(shape_err("concat", format!("{s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * total * first[axis + 1..].iter().product::<usize>());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.numel() / outer.max(1);
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, "sum")
    }

    /// Mean over the token axis: `[B, N, C] -> [B, C]`.
    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] == 0 {
            return Err(shape_err("mean_tokens", format!("{s:?}")));
        }
        let (b, n, c) = (s[0], s[1], s[2]);
        let v = self.value(x).data();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for t in 0..n {
                let row = &v[(bi * n + t) * c..(bi * n + t + 1) * c];
                for (o, &r) in out[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += r;
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::new(vec![b, c], out)?, Op::MeanTokens { x }, "mean_tokens")
    }

    /// Mean cross-entropy of `[B, S]` logits against class targets, with
    /// label smoothing `smoothing` spread uniformly over all classes.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("{s:?} for {} targets", targets.len()),
            ));
        }
        let classes = s[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::contract(format!("target {t} >= {classes} classes")));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::contract("label smoothing must lie in [0, 1)"));
        }
        let probs = softmax_lastdim(self.value(logits))?;
        let off = smoothing / classes as f64;
        let mut loss = 0.0;
        for (row, (&t, p)) in self
            .value(logits)
            .data()
            .chunks(classes)
            .zip(targets.iter().zip(probs.data().chunks(classes)))
        {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (c, &z) in row.iter().enumerate() {
                let q = off + if c == t { 1.0 - smoothing } else { 0.0 };
                if q > 0.0 {
                    loss -= q * (z - lse);
                }
            }
            debug_assert_eq!(p.len(), classes);
        }
        loss /= targets.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs: probs.into_data(),
            },
            "cross_entropy",
        )
    }

    /// First recorded value containing NaN or infinity, by tape order.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.label))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, delta: Vec<f64>| accumulate(lower, &self.nodes, v, delta);
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (k, n) = (bv.shape()[0], bv.shape()[1]);
                    let m = av.numel() / k.max(1);
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), 0.0, &mut da);
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), 0.0, &mut db);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let n = g.shape()[2];
                    let mut da = vec![0.0; batch * m * k];
                    let mut db = vec![0.0; batch * k * n];
                    for bi in 0..batch {
                        let ga = &g.data()[bi * m * n..];
                        let ab = &av.data()[bi * m * k..];
                        let bb = &bv.data()[bi * k * n..];
                        let da_b = &mut da[bi * m * k..(bi + 1) * m * k];
                        let db_b = &mut db[bi * k * n..(bi + 1) * k * n];
                        if *transpose_b {
                            // b is [N, K]: dA = g b, db = g^T a
                            gemm(m, n, k, ga, (n as isize, 1), bb, (k as isize, 1), 0.0, da_b);
                            gemm(n, m, k, ga, (1, n as isize), ab, (k as isize, 1), 0.0, db_b);
                        } else {
                            gemm(m, n, k, ga, (n as isize, 1), bb, (1, n as isize), 0.0, da_b);
                            gemm(k, m, n, ab, (1, k as isize), ga, (n as isize, 1), 0.0, db_b);
                        }
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Add { a, b } => {
                    acc(*a, g.data().to_vec());
                    acc(*b, g.data().to_vec());
                }
                Op::Mul { a, b } => {
                    let da = zip_vec(g.data(), self.value(*b).data(), |x, y| x * y);
                    let db = zip_vec(g.data(), self.value(*a).data(), |x, y| x * y);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::AddBroadcast { x, b } => {
                    let width = self.value(*b).numel();
                    let mut db = vec![0.0; width];
                    for chunk in g.data().chunks(width) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    acc(*x, g.data().to_vec());
                    acc(*b, db);
                }
                Op::MulBroadcast { x, b } => {
                    let bv = self.value(*b).data();
                    let xv = self.value(*x).data();
                    let width = bv.len();
                    let mut dx = g.data().to_vec();
                    let mut db = vec![0.0; width];
                    for (gc, (dc, xc)) in g
                        .data()
                        .chunks(width)
                        .zip(dx.chunks_mut(width).zip(xv.chunks(width)))
                    {
                        for j in 0..width {
                            dc[j] = gc[j] * bv[j];
                            db[j] += gc[j] * xc[j];
                        }
                    }
                    acc(*x, dx);
                    acc(*b, db);
                }
                Op::Scale { x, factor } => {
                    acc(*x, g.data().iter().map(|v| v * factor).collect());
                }
                Op::Softmax { x } => {
                    let y = node.value.data();
                    let d = node.value.last_dim();
                    let mut dx = vec![0.0; y.len()];
                    for ((yr, gr), dr) in y.chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let d = gv.len();
                    let mut dx = vec![0.0; xhat.len()];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for (r, ((gr, xr), dr)) in g
                        .data()
                        .chunks(d)
                        .zip(xhat.chunks(d))
                        .zip(dx.chunks_mut(d))
                        .enumerate()
                    {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xr[j];
                            dgain[j] += gr[j] * xr[j];
                            dbias[j] += gr[j];
                        }
                        let scale = rstd[r] / d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            dr[j] = scale * (d as f64 * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                        }
                    }
                    acc(*x, dx);
                    acc(*gain, dgain);
                    acc(*bias, dbias);
                }
                Op::Gelu { x } => {
                    let dx = zip_vec(g.data(), self.value(*x).data(), |gv, xv| gv * gelu_derivative(xv));
                    acc(*x, dx);
                }
                Op::Gather { x, index } => {
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (&src, &gv) in index.iter().zip(g.data()) {
                        dx[src] += gv;
                    }
                    acc(*x, dx);
                }
                Op::Concat { parts, axis } => {
                    let outer: usize = g.shape()[..*axis].iter().product();
                    let chunks: Vec<usize> = parts
                        .iter()
                        .map(|&p| self.value(p).numel() / outer.max(1))
                        .collect();
                    let mut pieces: Vec<Vec<f64>> = chunks
                        .iter()
                        .map(|&c| Vec::with_capacity(c * outer))
                        .collect();
                    let mut offset = 0;
                    for _ in 0..outer {
                        for (piece, &c) in pieces.iter_mut().zip(&chunks) {
                            piece.extend_from_slice(&g.data()[offset..offset + c]);
                            offset += c;
                        }
                    }
                    for (&p, piece) in parts.iter().zip(pieces) {
                        acc(p, piece);
                    }
                }
                Op::Sum { x } => {
                    acc(*x, vec![g.data()[0]; self.value(*x).numel()]);
                }
                Op::MeanTokens { x } => {
                    let s = self.shape(*x);
                    let (b, n, c) = (s[0], s[1], s[2]);
                    let inv = 1.0 / n as f64;
                    let mut dx = vec![0.0; b * n * c];
                    for bi in 0..b {
                        let gr = &g.data()[bi * c..(bi + 1) * c];
                        for t in 0..n {
                            for (d, &gv) in dx[(bi * n + t) * c..(bi * n + t + 1) * c].iter_mut().zip(gr) {
                                *d = gv * inv;
                            }
                        }
                    }
                    acc(*x, dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    smoothing,
                    probs,
                } => {
                    let classes = self.shape(*logits)[1];
                    let scale = g.data()[0] / targets.len() as f64;
                    let off = smoothing / classes as f64;
                    let mut dx = probs.clone();
                    for (row, &t) in dx.chunks_mut(classes).zip(targets) {
                        for (c, v) in row.iter_mut().enumerate() {
                            let q = off + if c == t { 1.0 - smoothing } else { 0.0 };
                            *v = (*v - q) * scale;
                        }
                    }
                    acc(*logits, dx);
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => {
            let shape = nodes[v.0].value.shape().to_vec();
            *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
        }
    }
}

fn zip_vec(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), zip_vec(a.data(), b.data(), f)).expect("same shape")
}
