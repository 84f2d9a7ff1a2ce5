//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] walks the
//! record once in reverse, accumulating gradients into the [`ParamStore`].
//! Nodes reference their parents by index, so the record is topologically
//! ordered by construction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<S> {
    Leaf,
    Reshape { x: NodeId },
    MatMul { a: NodeId, b: NodeId },
    Bmm { a: NodeId, b: NodeId, transpose_b: bool },
    Add { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Mul { a: NodeId, b: NodeId },
    Affine { x: NodeId, mul: S, #[allow(dead_code)] add: S },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Softplus { x: NodeId },
    SoftmaxLast { x: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: S },
    Conv1d { x: NodeId, kernel: NodeId, bias: NodeId },
    Dropout { x: NodeId, mask: Vec<S> },
    TimeSlice { x: NodeId, t: usize },
    StackTime { xs: Vec<NodeId> },
    Sum { x: NodeId },
    Bce { p: NodeId, y: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// A single-use record of forward operations.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_binds: Vec<(ParamId, NodeId)>,
    param_cache: BTreeMap<usize, NodeId>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_binds: Vec::new(),
            param_cache: BTreeMap::new(),
            consumed: false,
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Record a parameter leaf. Repeated requests for the same parameter
    /// return the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_cache.get(&id.0) {
            return node;
        }
        let node = self.push(store.get(id).value.clone(), Op::Leaf);
        self.param_binds.push((id, node));
        self.param_cache.insert(id.0, node);
        node
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { x }))
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    /// Batched matrix product on rank-3 tensors. With `transpose_b`,
    /// computes `a[i] * b[i]^T` per batch index.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (sa, sb) = (
            self.value(a).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::ShapeMismatch(format!("bmm {sa:?} x {sb:?}")));
        }
        let batch = sa[0];
        let (m, k) = (sa[1], sa[2]);
        let n = if transpose_b {
            if sb[2] != k {
                return Err(Error::ShapeMismatch(format!("bmm_nt {sa:?} x {sb:?}")));
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(Error::ShapeMismatch(format!("bmm {sa:?} x {sb:?}")));
            }
            sb[2]
        };
        let mut out = Tensor::zeros(&[batch, m, n]);
        for i in 0..batch {
            let av = &self.value(a).data()[i * m * k..(i + 1) * m * k];
            let bv = &self.value(b).data()[i * sb[1] * sb[2]..(i + 1) * sb[1] * sb[2]];
            let ov = &mut out.data_mut()[i * m * n..(i + 1) * m * n];
            if transpose_b {
                matmul_nt(av, bv, ov, m, k, n);
            } else {
                matmul_nn(av, bv, ov, m, k, n);
            }
        }
        Ok(self.push(out, Op::Bmm { a, b, transpose_b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Broadcast a rank-1 bias over the last axis.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let d = self.value(x).last_dim();
        if self.value(bias).shape() != [d] {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} against last dim {}",
                self.value(bias).shape(),
                d
            )));
        }
        let mut out = self.value(x).clone();
        let bv = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(&bv) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "mul {:?} * {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul { a, b }))
    }

    /// Elementwise `mul * x + add` with scalar constants.
    pub fn affine(&mut self, x: NodeId, mul: S, add: S) -> NodeId {
        let out = self.value(x).map(|v| mul * v + add);
        self.push(out, Op::Affine { x, mul, add })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(out, Op::Relu { x })
    }

    /// Smooth rectifier `ln(1 + e^x)`, computed stably for large |x|.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(softplus_scalar);
        self.push(out, Op::Softplus { x })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let d = self.value(x).last_dim();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            let max = row
                .iter()
                .cloned()
                .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
            let mut sum = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push(out, Op::SoftmaxLast { x })
    }

    /// Normalize the last axis to zero mean / unit population variance,
    /// then apply the learned affine `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: S) -> Result<NodeId> {
        let d = self.value(x).last_dim();
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm affine params for width {d}"
            )));
        }
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            let (mean, var) = row_mean_var(row);
            let denom = (var + eps).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                *v = gv[i] * ((*v - mean) / denom) + bv[i];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Temporal cross-correlation with zero same-padding.
    /// `x: [batch, T, c_in]`, `kernel: [k, c_in, c_out]`, `bias: [c_out]`.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        if sx.len() != 3 || sk.len() != 3 {
            return Err(Error::ShapeMismatch(format!("conv1d {sx:?} * {sk:?}")));
        }
        let (batch, t_len, c_in) = (sx[0], sx[1], sx[2]);
        let (k, kc_in, c_out) = (sk[0], sk[1], sk[2]);
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if kc_in != c_in || self.value(bias).shape() != [c_out] {
            return Err(Error::ShapeMismatch(format!(
                "conv1d channels {sx:?} * {sk:?}"
            )));
        }
        let pad = (k - 1) / 2;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = Tensor::zeros(&[batch, t_len, c_out]);
        {
            let od = out.data_mut();
            for b in 0..batch {
                for t in 0..t_len {
                    let o_base = (b * t_len + t) * c_out;
                    od[o_base..o_base + c_out].copy_from_slice(bd);
                    for dt in 0..k {
                        let src = t as isize + dt as isize - pad as isize;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let x_base = (b * t_len + src as usize) * c_in;
                        for ci in 0..c_in {
                            let xv = xd[x_base + ci];
                            if xv == S::zero() {
                                continue;
                            }
                            let k_base = (dt * c_in + ci) * c_out;
                            for co in 0..c_out {
                                od[o_base + co] += xv * kd[k_base + co];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Conv1d { x, kernel, bias }))
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by
    /// `1/(1-rate)`; zeros drop the unit.
    pub fn dropout(&mut self, x: NodeId, mask: Vec<S>) -> Result<NodeId> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::ShapeMismatch("dropout mask length".into()));
        }
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Select timestep `t` from `[batch, T, d] -> [batch, d]`.
    pub fn time_slice(&mut self, x: NodeId, t: usize) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(Error::ShapeMismatch(format!("time_slice t={t} from {s:?}")));
        }
        let (batch, t_len, d) = (s[0], s[1], s[2]);
        let xd = self.value(x).data();
        let mut out = Tensor::zeros(&[batch, d]);
        for b in 0..batch {
            let src = (b * t_len + t) * d;
            out.data_mut()[b * d..(b + 1) * d].copy_from_slice(&xd[src..src + d]);
        }
        Ok(self.push(out, Op::TimeSlice { x, t }))
    }

    /// Stack per-timestep `[batch, d]` tensors into `[batch, T, d]`.
    pub fn stack_time(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::ShapeMismatch("stack_time of zero steps".into()));
        }
        let s0 = self.value(xs[0]).shape().to_vec();
        if s0.len() != 2 {
            return Err(Error::ShapeMismatch(format!("stack_time of {s0:?}")));
        }
        let (batch, d) = (s0[0], s0[1]);
        let t_len = xs.len();
        let mut out = Tensor::zeros(&[batch, t_len, d]);
        for (t, &xid) in xs.iter().enumerate() {
            if self.value(xid).shape() != s0.as_slice() {
                return Err(Error::ShapeMismatch("stack_time ragged steps".into()));
            }
            let xd = self.value(xid).data();
            for b in 0..batch {
                let dst = (b * t_len + t) * d;
                out.data_mut()[dst..dst + d].copy_from_slice(&xd[b * d..(b + 1) * d]);
            }
        }
        Ok(self.push(out, Op::StackTime { xs: xs.to_vec() }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().cloned().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels, with
    /// probabilities clamped to `[1e-7, 1-1e-7]`.
    pub fn bce_loss(&mut self, p: NodeId, labels: &[S]) -> Result<NodeId> {
        let n = self.value(p).numel();
        if labels.len() != n || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "bce: {n} probabilities vs {} labels",
                labels.len()
            )));
        }
        let lo = S::from_f64_c(BCE_CLAMP);
        let hi = S::one() - lo;
        let mut total = S::zero();
        for (&pv, &yv) in self.value(p).data().iter().zip(labels) {
            let pc = clamp(pv, lo, hi);
            total += -(yv * pc.ln() + (S::one() - yv) * (S::one() - pc).ln());
        }
        let loss = total / S::from_f64_c(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                y: labels.to_vec(),
            },
        ))
    }

    /// Run reverse-mode accumulation from a scalar loss node, adding each
    /// parameter's gradient into the store. Consumes the tape: a second
    /// call fails with [`Error::TapeReuse`].
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamStore<S>) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeReuse);
        }
        self.consumed = true;
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch(
                "backward requires a scalar loss".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop(idx, &gout, &mut grads);
            // leaves keep their gradient for parameter binding
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(gout);
            }
        }
        for &(pid, nid) in &self.param_binds {
            if let Some(g) = &grads[nid.0] {
                let p = params.get_mut(pid);
                if p.trainable {
                    p.grad.add_in_place(g);
                }
            }
        }
        Ok(())
    }

    fn backprop(&self, idx: usize, gout: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Reshape { x } => {
                let g = gout
                    .reshaped(self.value(*x).shape().to_vec())
                    .expect("reshape grad");
                acc(grads, *x, g);
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut ga = Tensor::zeros(sa);
                matmul_nt(gout.data(), self.value(*b).data(), ga.data_mut(), m, n, k);
                let mut gb = Tensor::zeros(sb);
                matmul_tn(self.value(*a).data(), gout.data(), gb.data_mut(), m, k, n);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Bmm { a, b, transpose_b } => {
                let sa = self.value(*a).shape().to_vec();
                let sb = self.value(*b).shape().to_vec();
                let batch = sa[0];
                let (m, k) = (sa[1], sa[2]);
                let n = if *transpose_b { sb[1] } else { sb[2] };
                let mut ga = Tensor::zeros(&sa);
                let mut gb = Tensor::zeros(&sb);
                for i in 0..batch {
                    let g_i = &gout.data()[i * m * n..(i + 1) * m * n];
                    let a_i = &self.value(*a).data()[i * m * k..(i + 1) * m * k];
                    let b_i = &self.value(*b).data()[i * sb[1] * sb[2]..(i + 1) * sb[1] * sb[2]];
                    let ga_i = &mut ga.data_mut()[i * m * k..(i + 1) * m * k];
                    if *transpose_b {
                        // y = a b^T : da = g b ; db = g^T a
                        matmul_nn(g_i, b_i, ga_i, m, n, k);
                        let gb_i = &mut gb.data_mut()[i * n * k..(i + 1) * n * k];
                        matmul_tn(g_i, a_i, gb_i, m, n, k);
                    } else {
                        // y = a b : da = g b^T ; db = a^T g
                        matmul_nt(g_i, b_i, ga_i, m, n, k);
                        let gb_i = &mut gb.data_mut()[i * k * n..(i + 1) * k * n];
                        matmul_tn(a_i, g_i, gb_i, m, k, n);
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Add { a, b } => {
                acc(grads, *a, gout.clone());
                acc(grads, *b, gout.clone());
            }
            Op::AddBias { x, bias } => {
                acc(grads, *x, gout.clone());
                let d = self.value(*bias).numel();
                let mut gb = Tensor::zeros(&[d]);
                for row in gout.data().chunks(d) {
                    for (g, &r) in gb.data_mut().iter_mut().zip(row) {
                        *g += r;
                    }
                }
                acc(grads, *bias, gb);
            }
            Op::Mul { a, b } => {
                let ga = gout.zip_map(self.value(*b), |g, v| g * v);
                let gb = gout.zip_map(self.value(*a), |g, v| g * v);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Affine { x, mul, .. } => {
                let m = *mul;
                acc(grads, *x, gout.map(|g| g * m));
            }
            Op::Sigmoid { x } => {
                let g = gout.zip_map(&node.value, |g, y| g * y * (S::one() - y));
                acc(grads, *x, g);
            }
            Op::Tanh { x } => {
                let g = gout.zip_map(&node.value, |g, y| g * (S::one() - y * y));
                acc(grads, *x, g);
            }
            Op::Relu { x } => {
                let g = gout.zip_map(self.value(*x), |g, v| {
                    if v > S::zero() {
                        g
                    } else {
                        S::zero()
                    }
                });
                acc(grads, *x, g);
            }
            Op::Softplus { x } => {
                let g = gout.zip_map(self.value(*x), |g, v| g * sigmoid_scalar(v));
                acc(grads, *x, g);
            }
            Op::SoftmaxLast { x } => {
                let d = node.value.last_dim();
                let mut g = gout.clone();
                {
                    let yv = node.value.data();
                    let gd = g.data_mut();
                    for (row_idx, row) in gd.chunks_mut(d).enumerate() {
                        let y_row = &yv[row_idx * d..(row_idx + 1) * d];
                        let mut dot = S::zero();
                        for (gv, &y) in row.iter().zip(y_row) {
                            dot += *gv * y;
                        }
                        for (gv, &y) in row.iter_mut().zip(y_row) {
                            *gv = y * (*gv - dot);
                        }
                    }
                }
                acc(grads, *x, g);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let d = node.value.last_dim();
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let mut gx = Tensor::zeros(self.value(*x).shape());
                let mut ggamma = Tensor::zeros(&[d]);
                let mut gbeta = Tensor::zeros(&[d]);
                let inv_d = S::one() / S::from_f64_c(d as f64);
                for (row_idx, grow) in gout.data().chunks(d).enumerate() {
                    let x_row = &xv[row_idx * d..(row_idx + 1) * d];
                    let (mean, var) = row_mean_var(x_row);
                    let denom = (var + *eps).sqrt();
                    let mut mean_gxhat = S::zero();
                    let mut mean_gxhat_xhat = S::zero();
                    let mut xhat = vec![S::zero(); d];
                    for i in 0..d {
                        xhat[i] = (x_row[i] - mean) / denom;
                        let gxh = grow[i] * gv[i];
                        mean_gxhat += gxh;
                        mean_gxhat_xhat += gxh * xhat[i];
                        ggamma.data_mut()[i] += grow[i] * xhat[i];
                        gbeta.data_mut()[i] += grow[i];
                    }
                    mean_gxhat *= inv_d;
                    mean_gxhat_xhat *= inv_d;
                    let gx_row = &mut gx.data_mut()[row_idx * d..(row_idx + 1) * d];
                    for i in 0..d {
                        let gxh = grow[i] * gv[i];
                        gx_row[i] = (gxh - mean_gxhat - xhat[i] * mean_gxhat_xhat) / denom;
                    }
                }
                acc(grads, *x, gx);
                acc(grads, *gamma, ggamma);
                acc(grads, *beta, gbeta);
            }
            Op::Conv1d { x, kernel, bias } => {
                let sx = self.value(*x).shape().to_vec();
                let sk = self.value(*kernel).shape().to_vec();
                let (batch, t_len, c_in) = (sx[0], sx[1], sx[2]);
                let (k, _, c_out) = (sk[0], sk[1], sk[2]);
                let pad = (k - 1) / 2;
                let xd = self.value(*x).data();
                let kd = self.value(*kernel).data();
                let mut gx = Tensor::zeros(&sx);
                let mut gk = Tensor::zeros(&sk);
                let mut gb = Tensor::zeros(&[c_out]);
                for b in 0..batch {
                    for t in 0..t_len {
                        let g_base = (b * t_len + t) * c_out;
                        let g_row = &gout.data()[g_base..g_base + c_out];
                        for (gbv, &g) in gb.data_mut().iter_mut().zip(g_row) {
                            *gbv += g;
                        }
                        for dt in 0..k {
                            let src = t as isize + dt as isize - pad as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let x_base = (b * t_len + src as usize) * c_in;
                            for ci in 0..c_in {
                                let k_base = (dt * c_in + ci) * c_out;
                                let mut gx_acc = S::zero();
                                for co in 0..c_out {
                                    gx_acc += kd[k_base + co] * g_row[co];
                                    gk.data_mut()[k_base + co] += xd[x_base + ci] * g_row[co];
                                }
                                gx.data_mut()[x_base + ci] += gx_acc;
                            }
                        }
                    }
                }
                acc(grads, *x, gx);
                acc(grads, *kernel, gk);
                acc(grads, *bias, gb);
            }
            Op::Dropout { x, mask } => {
                let mut g = gout.clone();
                for (gv, &m) in g.data_mut().iter_mut().zip(mask) {
                    *gv = *gv * m;
                }
                acc(grads, *x, g);
            }
            Op::TimeSlice { x, t } => {
                let s = self.value(*x).shape().to_vec();
                let (batch, t_len, d) = (s[0], s[1], s[2]);
                let mut g = Tensor::zeros(&s);
                for b in 0..batch {
                    let dst = (b * t_len + t) * d;
                    g.data_mut()[dst..dst + d].copy_from_slice(&gout.data()[b * d..(b + 1) * d]);
                }
                acc(grads, *x, g);
            }
            Op::StackTime { xs } => {
                let t_len = xs.len();
                let s0 = self.value(xs[0]).shape().to_vec();
                let (batch, d) = (s0[0], s0[1]);
                for (t, &xid) in xs.iter().enumerate() {
                    let mut g = Tensor::zeros(&s0);
                    for b in 0..batch {
                        let src = (b * t_len + t) * d;
                        g.data_mut()[b * d..(b + 1) * d]
                            .copy_from_slice(&gout.data()[src..src + d]);
                    }
                    acc(grads, xid, g);
                }
            }
            Op::Sum { x } => {
                let g = gout.item();
                acc(grads, *x, Tensor::filled(self.value(*x).shape(), g));
            }
            Op::Bce { p, y } => {
                let n = y.len();
                let lo = S::from_f64_c(BCE_CLAMP);
                let hi = S::one() - lo;
                let scale = gout.item() / S::from_f64_c(n as f64);
                let mut g = Tensor::zeros(self.value(*p).shape());
                for (i, (gv, &pv)) in g
                    .data_mut()
                    .iter_mut()
                    .zip(self.value(*p).data())
                    .enumerate()
                {
                    // gradient is zero where the clamp is active
                    if pv <= lo || pv >= hi {
                        continue;
                    }
                    *gv = scale * (pv - y[i]) / (pv * (S::one() - pv));
                }
                acc(grads, *p, g);
            }
        }
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_in_place(&g),
        slot @ None => *slot = Some(g),
    }
}

fn clamp<S: Scalar>(v: S, lo: S, hi: S) -> S {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

pub fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub fn softplus_scalar<S: Scalar>(v: S) -> S {
    if v > S::from_f64_c(30.0) {
        v
    } else if v < S::from_f64_c(-30.0) {
        v.exp()
    } else {
        (S::one() + v.exp()).ln()
    }
}

fn row_mean_var<S: Scalar>(row: &[S]) -> (S, S) {
    let n = S::from_f64_c(row.len() as f64);
    let mut mean = S::zero();
    for &v in row {
        mean += v;
    }
    mean = mean / n;
    let mut var = S::zero();
    for &v in row {
        var += (v - mean) * (v - mean);
    }
    (mean, var / n)
}
