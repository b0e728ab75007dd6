//! Differentiable operator set.
//!
//! Elementwise binary ops broadcast over leading axes: operands must have
//! identical shapes, or one operand's shape must be a suffix of the other's
//! (it is then tiled across the leading axes), or one operand is a single
//! element. Gradients of a broadcast operand are summed over the tiled axes.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::{el, Element, Tensor};
use crate::error::{Error, Result};

/// How the smaller operand of a binary op maps onto the larger one.
#[derive(Clone, Copy, PartialEq)]
enum Bcast {
    /// Identical shapes.
    Same,
    /// Right operand tiles over the left's leading axes (or is a scalar).
    Right,
    /// Left operand tiles over the right's leading axes (or is a scalar).
    Left,
}

fn broadcast_plan(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    if a == b {
        return Ok(Bcast::Same);
    }
    let is_suffix = |small: &[usize], big: &[usize]| big.len() > small.len() && big.ends_with(small);
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if numel(b) == 1 || is_suffix(b, a) {
        return Ok(Bcast::Right);
    }
    if numel(a) == 1 || is_suffix(a, b) {
        return Ok(Bcast::Left);
    }
    Err(Error::Shape { op, left: a.to_vec(), right: b.to_vec() })
}

impl<E: Element> Tensor<E> {
    fn binary(
        &self,
        other: &Tensor<E>,
        op: &'static str,
        fwd: fn(E, E) -> E,
        // (a, b, out_grad) -> (da, db)
        bwd: fn(E, E, E) -> (E, E),
    ) -> Result<Tensor<E>> {
        let plan = broadcast_plan(op, self.shape(), other.shape())?;
        let (big, small, shape) = match plan {
            Bcast::Same | Bcast::Right => (self, other, self.shape().to_vec()),
            Bcast::Left => (other, self, other.shape().to_vec()),
        };
        let bd = big.data();
        let sd = small.data();
        let sl = sd.len();
        let data: Vec<E> = match plan {
            Bcast::Same | Bcast::Right => {
                bd.iter().enumerate().map(|(i, &a)| fwd(a, sd[i % sl])).collect()
            }
            Bcast::Left => bd.iter().enumerate().map(|(i, &b)| fwd(sd[i % sl], b)).collect(),
        };
        drop(bd);
        drop(sd);
        let (a_t, b_t) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ad = a_t.data();
                let bdv = b_t.data();
                let (al, bl) = (ad.len(), bdv.len());
                let mut ga = vec![E::zero(); al];
                let mut gb = vec![E::zero(); bl];
                for (i, &go) in g.iter().enumerate() {
                    let av = ad[i % al];
                    let bv = bdv[i % bl];
                    let (da, db) = bwd(av, bv, go);
                    ga[i % al] = ga[i % al] + da;
                    gb[i % bl] = gb[i % bl] + db;
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| (g, E::zero() - g))
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(other, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(other, "div", |a, b| a / b, |a, b, g| (g / b, E::zero() - g * a / (b * b)))
    }

    fn unary(&self, fwd: impl Fn(E) -> E, bwd: impl Fn(E) -> E + 'static) -> Tensor<E> {
        let data: Vec<E> = self.data().iter().map(|&x| fwd(x)).collect();
        let input = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let xd = input.data();
                vec![Some(g.iter().zip(xd.iter()).map(|(&go, &x)| go * bwd(x)).collect())]
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<E> {
        let cv = el::<E>(c);
        self.unary(move |x| x + cv, |_| E::one())
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<E> {
        let cv = el::<E>(c);
        self.unary(move |x| x * cv, move |_| cv)
    }

    pub fn relu(&self) -> Tensor<E> {
        self.unary(
            |x| if x > E::zero() { x } else { E::zero() },
            |x| if x > E::zero() { E::one() } else { E::zero() },
        )
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&self) -> Tensor<E> {
        self.unary(gelu_value, gelu_slope)
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        self.unary(sigmoid_value, |x| {
            let s = sigmoid_value(x);
            s * (E::one() - s)
        })
    }

    pub fn tanh_act(&self) -> Tensor<E> {
        self.unary(|x| x.tanh(), |x| {
            let t = x.tanh();
            E::one() - t * t
        })
    }

    /// `ln(1 + e^x)`, evaluated stably; output is strictly positive.
    pub fn softplus(&self) -> Tensor<E> {
        self.unary(softplus_value, sigmoid_value)
    }

    /// Natural logarithm; inputs must be positive.
    pub fn ln(&self) -> Tensor<E> {
        self.unary(|x| x.ln(), |x| E::one() / x)
    }

    /// Matrix product `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::Shape { op: "matmul", left: a_shape.to_vec(), right: b_shape.to_vec() });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let mut out = vec![E::zero(); m * n];
        gemm_rowmajor(m, k, n, &self.data(), false, &other.data(), false, &mut out);
        let (a_t, b_t) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let mut ga = vec![E::zero(); m * k];
                let mut gb = vec![E::zero(); k * n];
                gemm_rowmajor(m, n, k, g, false, &b_t.data(), true, &mut ga);
                gemm_rowmajor(k, m, n, &a_t.data(), true, g, false, &mut gb);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Shape { op: "transpose", left: s.to_vec(), right: vec![] });
        }
        let (m, n) = (s[0], s[1]);
        let d = self.data();
        let mut out = vec![E::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        gi[i * n + j] = g[j * m + i];
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::Shape { op: "reshape", left: self.shape().to_vec(), right: shape.to_vec() });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.to_vec())]),
        ))
    }

    /// Concatenate along `axis`; all other dimensions must match.
    pub fn concat(tensors: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Domain("concat: need at least one tensor".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::Shape { op: "concat", left: first.shape().to_vec(), right: vec![axis] });
        }
        let mut axis_total = 0;
        for t in tensors {
            let s = t.shape();
            if s.len() != rank
                || s[..axis] != first.shape()[..axis]
                || s[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::Shape { op: "concat", left: first.shape().to_vec(), right: s.to_vec() });
            }
            axis_total += s[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = axis_total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for t in tensors {
                let a_len = t.shape()[axis];
                let d = t.data();
                out.extend_from_slice(&d[o * a_len * inner..(o + 1) * a_len * inner]);
            }
        }
        let axis_lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        Ok(Tensor::from_op(
            shape,
            out,
            tensors.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<E>> =
                    axis_lens.iter().map(|&a| Vec::with_capacity(outer * a * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gi, &a_len) in grads.iter_mut().zip(&axis_lens) {
                        gi.extend_from_slice(&g[pos..pos + a_len * inner]);
                        pos += a_len * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Shape { op: "slice", left: s.to_vec(), right: vec![axis, start, len] });
        }
        let outer: usize = s[..axis].iter().product();
        let axis_len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let mut shape = s.to_vec();
        shape[axis] = len;
        let d = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        drop(d);
        let full_len = self.len();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); full_len];
                for o in 0..outer {
                    let base = (o * axis_len + start) * inner;
                    gi[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Sum of all entries (fixed sequential order).
    pub fn sum(&self) -> Tensor<E> {
        let total = self.data().iter().fold(E::zero(), |acc, &x| acc + x);
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Mean of all entries.
    pub fn mean(&self) -> Tensor<E> {
        let n = self.len();
        let inv = el::<E>(1.0 / n as f64);
        let total = self.data().iter().fold(E::zero(), |acc, &x| acc + x);
        Tensor::from_op(
            vec![1],
            vec![total * inv],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Sum along `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<E>> {
        self.reduce_axis(axis, false)
    }

    /// Mean along `axis`, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<E>> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, take_mean: bool) -> Result<Tensor<E>> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::Shape { op: "reduce_axis", left: s.to_vec(), right: vec![axis] });
        }
        let outer: usize = s[..axis].iter().product();
        let axis_len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let scale = if take_mean { el::<E>(1.0 / axis_len as f64) } else { E::one() };
        let d = self.data();
        let mut out = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + d[base + i];
                }
            }
        }
        for x in out.iter_mut() {
            *x = *x * scale;
        }
        drop(d);
        let mut shape: Vec<usize> = s.to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); outer * axis_len * inner];
                for o in 0..outer {
                    for a in 0..axis_len {
                        let base = (o * axis_len + a) * inner;
                        for i in 0..inner {
                            gi[base + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let lanes = LaneIter::new(self.shape(), axis, "softmax")?;
        let d = self.data();
        let mut out = vec![E::zero(); d.len()];
        for lane in lanes.clone() {
            softmax_lane(&d, &mut out, &lane);
        }
        drop(d);
        let y = out.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); g.len()];
                for lane in lanes.clone() {
                    let mut dot = E::zero();
                    for idx in lane.iter() {
                        dot = dot + g[idx] * y[idx];
                    }
                    for idx in lane.iter() {
                        gi[idx] = y[idx] * (g[idx] - dot);
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let lanes = LaneIter::new(self.shape(), axis, "log_softmax")?;
        let d = self.data();
        let mut out = vec![E::zero(); d.len()];
        for lane in lanes.clone() {
            let max = lane.iter().map(|i| d[i]).fold(E::neg_infinity(), E::max);
            let logsum = lane
                .iter()
                .map(|i| (d[i] - max).exp())
                .fold(E::zero(), |a, b| a + b)
                .ln()
                + max;
            for idx in lane.iter() {
                out[idx] = d[idx] - logsum;
            }
        }
        drop(d);
        let y = out.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); g.len()];
                for lane in lanes.clone() {
                    let gsum = lane.iter().map(|i| g[i]).fold(E::zero(), |a, b| a + b);
                    for idx in lane.iter() {
                        gi[idx] = g[idx] - y[idx].exp() * gsum;
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Layer normalization over the last axis with learnable scale/shift.
    pub fn layer_norm(&self, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        let s = self.shape();
        let d = *s.last().ok_or(Error::Shape { op: "layer_norm", left: vec![], right: vec![] })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::Shape { op: "layer_norm", left: s.to_vec(), right: gamma.shape().to_vec() });
        }
        let rows = self.len() / d;
        let x = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let mut out = vec![E::zero(); x.len()];
        let mut x_hat = vec![E::zero(); x.len()];
        let mut inv_std = vec![E::zero(); rows];
        let inv_d = el::<E>(1.0 / d as f64);
        let eps_e = el::<E>(eps);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().fold(E::zero(), |a, &b| a + b) * inv_d;
            let var = row.iter().fold(E::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_d;
            let istd = E::one() / (var + eps_e).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                x_hat[r * d + j] = xh;
                out[r * d + j] = gm[j] * xh + bt[j];
            }
        }
        drop(x);
        drop(gm);
        drop(bt);
        let gamma_t = gamma.clone();
        Ok(Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let gm = gamma_t.data();
                let mut gx = vec![E::zero(); rows * d];
                let mut ggamma = vec![E::zero(); d];
                let mut gbeta = vec![E::zero(); d];
                for r in 0..rows {
                    let istd = inv_std[r];
                    // dxh = g * gamma; dx = istd * (dxh - mean(dxh) - xh * mean(dxh * xh))
                    let mut mean_dxh = E::zero();
                    let mut mean_dxh_xh = E::zero();
                    for j in 0..d {
                        let idx = r * d + j;
                        let dxh = g[idx] * gm[j];
                        mean_dxh = mean_dxh + dxh;
                        mean_dxh_xh = mean_dxh_xh + dxh * x_hat[idx];
                    }
                    mean_dxh = mean_dxh * inv_d;
                    mean_dxh_xh = mean_dxh_xh * inv_d;
                    for j in 0..d {
                        let idx = r * d + j;
                        let dxh = g[idx] * gm[j];
                        gx[idx] = istd * (dxh - mean_dxh - x_hat[idx] * mean_dxh_xh);
                        ggamma[j] = ggamma[j] + g[idx] * x_hat[idx];
                        gbeta[j] = gbeta[j] + g[idx];
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            }),
        ))
    }

    /// Row lookup: `table[indices[i], :]` stacked into `[len(indices), d]`.
    pub fn embedding_lookup(table: &Tensor<E>, indices: &[usize]) -> Result<Tensor<E>> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(Error::Shape { op: "embedding_lookup", left: s.to_vec(), right: vec![] });
        }
        let (vocab, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Domain(format!(
                "embedding_lookup: index {bad} out of range 0..{vocab}"
            )));
        }
        let td = table.data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        drop(td);
        let idx: Vec<usize> = indices.to_vec();
        Ok(Tensor::from_op(
            vec![indices.len(), d],
            out,
            vec![table.clone()],
            Box::new(move |g| {
                let mut gt = vec![E::zero(); vocab * d];
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] = gt[i * d + j] + g[row * d + j];
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&self, p: f64, rng: &mut ChaCha8Rng, train: bool) -> Result<Tensor<E>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout: p {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = el::<E>(1.0 / (1.0 - p));
        let mask: Vec<E> = (0..self.len())
            .map(|_| if rng.random::<f64>() < p { E::zero() } else { keep_scale })
            .collect();
        let data: Vec<E> = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().zip(&mask).map(|(&go, &m)| go * m).collect())]),
        ))
    }

    /// Normalize each row (last axis) to unit L2 norm.
    pub fn l2_normalize_rows(&self) -> Result<Tensor<E>> {
        let s = self.shape();
        let d = *s.last().ok_or(Error::Shape { op: "l2_normalize_rows", left: vec![], right: vec![] })?;
        let rows = self.len() / d;
        let x = self.data();
        let mut out = vec![E::zero(); x.len()];
        let mut inv_norm = vec![E::zero(); rows];
        let floor = el::<E>(1e-12);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let norm = row.iter().fold(E::zero(), |a, &b| a + b * b).sqrt().max(floor);
            let inv = E::one() / norm;
            inv_norm[r] = inv;
            for j in 0..d {
                out[r * d + j] = row[j] * inv;
            }
        }
        drop(x);
        let y = out.clone();
        Ok(Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = (g - y * (g . y)) / ||x|| per row
                let mut gx = vec![E::zero(); y.len()];
                for r in 0..rows {
                    let mut dot = E::zero();
                    for j in 0..d {
                        dot = dot + g[r * d + j] * y[r * d + j];
                    }
                    for j in 0..d {
                        let idx = r * d + j;
                        gx[idx] = (g[idx] - y[idx] * dot) * inv_norm[r];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Multi-head scaled-dot-product attention with an exact causal mask:
    /// position `i` attends to positions `0..=i` only (masked entries are
    /// never touched, not just suppressed). Inputs are `[B, T, D]` q/k/v
    /// after projection; `D` must divide evenly into `n_heads`.
    pub fn causal_attention(
        q: &Tensor<E>,
        k: &Tensor<E>,
        v: &Tensor<E>,
        n_heads: usize,
    ) -> Result<Tensor<E>> {
        let s = q.shape().to_vec();
        if s.len() != 3 || k.shape() != s.as_slice() || v.shape() != s.as_slice() {
            return Err(Error::Shape { op: "causal_attention", left: s, right: k.shape().to_vec() });
        }
        let (b, t, dim) = (s[0], s[1], s[2]);
        if n_heads == 0 || dim % n_heads != 0 {
            return Err(Error::Config(format!(
                "causal_attention: d_model {dim} not divisible by n_heads {n_heads}"
            )));
        }
        let dh = dim / n_heads;
        let scale = el::<E>(1.0 / (dh as f64).sqrt());
        let qd = q.data();
        let kd = k.data();
        let vd = v.data();
        let mut out = vec![E::zero(); b * t * dim];
        // attn[b][h] is a T×T row-major matrix; rows are softmax over 0..=i.
        let mut attn = vec![E::zero(); b * n_heads * t * t];
        for bi in 0..b {
            for h in 0..n_heads {
                let col = h * dh;
                let amat = &mut attn[(bi * n_heads + h) * t * t..(bi * n_heads + h + 1) * t * t];
                for i in 0..t {
                    let qrow = &qd[(bi * t + i) * dim + col..(bi * t + i) * dim + col + dh];
                    // scores over the causal prefix
                    let mut max = E::neg_infinity();
                    for j in 0..=i {
                        let krow = &kd[(bi * t + j) * dim + col..(bi * t + j) * dim + col + dh];
                        let mut dot = E::zero();
                        for x in 0..dh {
                            dot = dot + qrow[x] * krow[x];
                        }
                        let sc = dot * scale;
                        amat[i * t + j] = sc;
                        max = max.max(sc);
                    }
                    let mut denom = E::zero();
                    for j in 0..=i {
                        let e = (amat[i * t + j] - max).exp();
                        amat[i * t + j] = e;
                        denom = denom + e;
                    }
                    let inv = E::one() / denom;
                    for j in 0..=i {
                        amat[i * t + j] = amat[i * t + j] * inv;
                    }
                    // context = A · V over the prefix
                    for j in 0..=i {
                        let a = amat[i * t + j];
                        let vrow = &vd[(bi * t + j) * dim + col..(bi * t + j) * dim + col + dh];
                        let orow = &mut out[(bi * t + i) * dim + col..(bi * t + i) * dim + col + dh];
                        for x in 0..dh {
                            orow[x] = orow[x] + a * vrow[x];
                        }
                    }
                }
            }
        }
        drop(qd);
        drop(kd);
        drop(vd);
        let (qt, kt, vt) = (q.clone(), k.clone(), v.clone());
        Ok(Tensor::from_op(
            vec![b, t, dim],
            out,
            vec![q.clone(), k.clone(), v.clone()],
            Box::new(move |g| {
                let qd = qt.data();
                let kd = kt.data();
                let vd = vt.data();
                let mut gq = vec![E::zero(); qd.len()];
                let mut gk = vec![E::zero(); kd.len()];
                let mut gv = vec![E::zero(); vd.len()];
                let mut da = vec![E::zero(); t]; // per-row dA over prefix
                for bi in 0..b {
                    for h in 0..n_heads {
                        let col = h * dh;
                        let amat = &attn[(bi * n_heads + h) * t * t..(bi * n_heads + h + 1) * t * t];
                        for i in 0..t {
                            let grow = &g[(bi * t + i) * dim + col..(bi * t + i) * dim + col + dh];
                            // dV_j += A_ij * dO_i ; dA_ij = dO_i . V_j
                            for j in 0..=i {
                                let a = amat[i * t + j];
                                let vrow = &vd[(bi * t + j) * dim + col..(bi * t + j) * dim + col + dh];
                                let gvrow = &mut gv[(bi * t + j) * dim + col..(bi * t + j) * dim + col + dh];
                                let mut dot = E::zero();
                                for x in 0..dh {
                                    gvrow[x] = gvrow[x] + a * grow[x];
                                    dot = dot + grow[x] * vrow[x];
                                }
                                da[j] = dot;
                            }
                            // softmax backward within the prefix
                            let mut inner = E::zero();
                            for j in 0..=i {
                                inner = inner + da[j] * amat[i * t + j];
                            }
                            for j in 0..=i {
                                let ds = amat[i * t + j] * (da[j] - inner) * scale;
                                let krow = &kd[(bi * t + j) * dim + col..(bi * t + j) * dim + col + dh];
                                let qrow = &qd[(bi * t + i) * dim + col..(bi * t + i) * dim + col + dh];
                                let gqrow = &mut gq[(bi * t + i) * dim + col..(bi * t + i) * dim + col + dh];
                                for x in 0..dh {
                                    gqrow[x] = gqrow[x] + ds * krow[x];
                                }
                                let gkrow = &mut gk[(bi * t + j) * dim + col..(bi * t + j) * dim + col + dh];
                                for x in 0..dh {
                                    gkrow[x] = gkrow[x] + ds * qrow[x];
                                }
                            }
                        }
                    }
                }
                vec![Some(gq), Some(gk), Some(gv)]
            }),
        ))
    }

    /// Mean over the batch of `-log_softmax(logits)[label]`.
    pub fn cross_entropy(logits: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>> {
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Shape { op: "cross_entropy", left: s.to_vec(), right: vec![labels.len()] });
        }
        let (bsz, classes) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::Domain(format!(
                "cross_entropy: label {bad} out of range 0..{classes}"
            )));
        }
        let d = logits.data();
        let mut probs = vec![E::zero(); bsz * classes];
        let mut loss = E::zero();
        for i in 0..bsz {
            let row = &d[i * classes..(i + 1) * classes];
            let max = row.iter().fold(E::neg_infinity(), |a, &b| a.max(b));
            let mut denom = E::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                probs[i * classes + j] = e;
                denom = denom + e;
            }
            let inv = E::one() / denom;
            for j in 0..classes {
                probs[i * classes + j] = probs[i * classes + j] * inv;
            }
            loss = loss - (row[labels[i]] - max - denom.ln());
        }
        loss = loss * el::<E>(1.0 / bsz as f64);
        drop(d);
        let lbl = labels.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![logits.clone()],
            Box::new(move |g| {
                let g0 = g[0] * el::<E>(1.0 / bsz as f64);
                let mut gl = vec![E::zero(); bsz * classes];
                for i in 0..bsz {
                    for j in 0..classes {
                        let onehot = if lbl[i] == j { E::one() } else { E::zero() };
                        gl[i * classes + j] = (probs[i * classes + j] - onehot) * g0;
                    }
                }
                vec![Some(gl)]
            }),
        ))
    }
}

/// Result of [`nmse`]: the scalar loss plus how many zero-norm target
/// samples were excluded from the mean.
#[derive(Debug)]
pub struct Nmse<E: Element> {
    pub loss: Tensor<E>,
    pub excluded: usize,
}

/// Normalized mean squared error: per sample (first axis)
/// `‖pred − target‖² / ‖target‖²`, averaged over samples after the ratio.
/// Samples with zero-norm targets are excluded and counted.
pub fn nmse<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<Nmse<E>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "nmse",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let samples = pred.shape()[0];
    let per = pred.len() / samples.max(1);
    if samples == 0 || per == 0 {
        return Err(Error::Shape { op: "nmse", left: pred.shape().to_vec(), right: vec![] });
    }
    let pd = pred.data();
    let td = target.data();
    let mut denom = vec![E::zero(); samples];
    let mut num = vec![E::zero(); samples];
    let mut valid = 0usize;
    let mut total = E::zero();
    for s in 0..samples {
        let mut d2 = E::zero();
        let mut n2 = E::zero();
        for j in 0..per {
            let idx = s * per + j;
            let t = td[idx];
            let diff = pd[idx] - t;
            d2 = d2 + t * t;
            n2 = n2 + diff * diff;
        }
        denom[s] = d2;
        num[s] = n2;
        if d2 > E::zero() {
            valid += 1;
            total = total + n2 / d2;
        }
    }
    drop(pd);
    drop(td);
    if valid == 0 {
        return Err(Error::Numeric("nmse: every target sample has zero norm".into()));
    }
    let excluded = samples - valid;
    let loss_val = total * el::<E>(1.0 / valid as f64);
    let (pt, tt) = (pred.clone(), target.clone());
    let loss = Tensor::from_op(
        vec![1],
        vec![loss_val],
        vec![pred.clone(), target.clone()],
        Box::new(move |g| {
            let pd = pt.data();
            let td = tt.data();
            let g0 = g[0] * el::<E>(1.0 / valid as f64);
            let mut gp = vec![E::zero(); pd.len()];
            let mut gt = vec![E::zero(); td.len()];
            let two = el::<E>(2.0);
            for s in 0..samples {
                if denom[s] <= E::zero() {
                    continue;
                }
                let inv_d = E::one() / denom[s];
                let ratio = num[s] * inv_d;
                for j in 0..per {
                    let idx = s * per + j;
                    let diff = pd[idx] - td[idx];
                    gp[idx] = g0 * two * diff * inv_d;
                    // d/dt [num/den] = (-2*diff*den - num*2t) / den^2
                    gt[idx] = g0 * (E::zero() - two) * (diff + ratio * td[idx]) * inv_d;
                }
            }
            vec![Some(gp), Some(gt)]
        }),
    );
    Ok(Nmse { loss, excluded })
}

// ── scalar math helpers ─────────────────────────────────────────────────────

fn sigmoid_value<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (E::zero() - x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

fn softplus_value<E: Element>(x: E) -> E {
    // max(x, 0) + ln(1 + exp(-|x|))
    x.max(E::zero()) + (E::one() + (E::zero() - x.abs()).exp()).ln()
}

fn gelu_value<E: Element>(x: E) -> E {
    let c = el::<E>(0.7978845608028654); // sqrt(2/pi)
    let a = el::<E>(0.044715);
    let half = el::<E>(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (E::one() + u.tanh())
}

fn gelu_slope<E: Element>(x: E) -> E {
    let c = el::<E>(0.7978845608028654);
    let a = el::<E>(0.044715);
    let half = el::<E>(0.5);
    let three = el::<E>(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = E::one() - t * t;
    half * (E::one() + t) + half * x * sech2 * c * (E::one() + three * a * x * x)
}

/// Row-major GEMM wrapper; `trans_*` selects the transposed view by stride
/// swapping (no copies).
fn gemm_rowmajor<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    trans_a: bool,
    b: &[E],
    trans_b: bool,
    out: &mut [E],
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        E::gemm(
            m,
            k,
            n,
            E::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            E::zero(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Iterates the index lanes of an axis reduction: each lane visits
/// `shape[axis]` elements at stride `inner`.
#[derive(Clone)]
struct LaneIter {
    outer: usize,
    axis_len: usize,
    inner: usize,
    next: usize,
}

struct Lane {
    base: usize,
    axis_len: usize,
    inner: usize,
}

impl Lane {
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.axis_len).map(move |a| self.base + a * self.inner)
    }
}

impl LaneIter {
    fn new(shape: &[usize], axis: usize, op: &'static str) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::Shape { op, left: shape.to_vec(), right: vec![axis] });
        }
        Ok(LaneIter {
            outer: shape[..axis].iter().product(),
            axis_len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
            next: 0,
        })
    }
}

impl Iterator for LaneIter {
    type Item = Lane;

    fn next(&mut self) -> Option<Lane> {
        if self.next >= self.outer * self.inner {
            return None;
        }
        let o = self.next / self.inner;
        let i = self.next % self.inner;
        self.next += 1;
        Some(Lane { base: o * self.axis_len * self.inner + i, axis_len: self.axis_len, inner: self.inner })
    }
}

fn softmax_lane<E: Element>(d: &[E], out: &mut [E], lane: &Lane) {
    let max = lane.iter().map(|i| d[i]).fold(E::neg_infinity(), E::max);
    let mut denom = E::zero();
    for idx in lane.iter() {
        let e = (d[idx] - max).exp();
        out[idx] = e;
        denom = denom + e;
    }
    let inv = E::one() / denom;
    for idx in lane.iter() {
        out[idx] = out[idx] * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::RngExt;

    fn randn(seed: u64, name: &str, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed, name);
        (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn p64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::param(shape, data).unwrap()
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let (m, k, n) = (7, 5, 9);
        let a = randn(11, "a", m * k);
        let b = randn(11, "b", k * n);
        let c = t64(&[m, k], a.clone()).matmul(&t64(&[k, n], b.clone())).unwrap();
        let got = c.to_vec();
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for x in 0..k {
                    acc += a[i * k + x] * b[x * n + j];
                }
                assert!((got[i * n + j] - acc).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_dim_mismatch() {
        let a = t64(&[2, 3], vec![0.0; 6]);
        let b = t64(&[4, 2], vec![0.0; 8]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn matmul_gradients_match_formula() {
        // loss = sum(A·B) gives dA = 1·Bᵀ row-broadcast, dB = Aᵀ·1.
        let a = p64(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = p64(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        a.matmul(&b).unwrap().sum().backward().unwrap();
        let ga = a.grad().unwrap();
        let gb = b.grad().unwrap();
        // dA[i,x] = sum_j B[x,j]
        assert_eq!(ga, vec![15.0, 19.0, 23.0, 15.0, 19.0, 23.0]);
        // dB[x,j] = sum_i A[i,x]
        assert_eq!(gb, vec![5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn broadcast_add_bias_folds_gradient_over_batch() {
        let x = p64(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bias = p64(&[2], vec![10.0, 20.0]);
        let y = x.add(&bias).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 22.0, 13.0, 24.0, 15.0, 26.0]);
        y.sum().backward().unwrap();
        assert_eq!(bias.grad().unwrap(), vec![3.0, 3.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn broadcast_rejects_non_suffix_shapes() {
        let a = t64(&[4], vec![0.0; 4]);
        let b = t64(&[2], vec![0.0; 2]);
        let err = a.add(&b).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn scalar_broadcast_works_both_ways() {
        let a = t64(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let s = t64(&[1], vec![10.0]);
        assert_eq!(a.mul(&s).unwrap().to_vec(), vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(s.sub(&a).unwrap().to_vec(), vec![9.0, 8.0, 7.0, 6.0]);
    }

    #[test]
    fn div_gradients() {
        let a = p64(&[2], vec![6.0, 8.0]);
        let b = p64(&[2], vec![2.0, 4.0]);
        let y = a.div(&b).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5, 0.25]);
        assert_eq!(b.grad().unwrap(), vec![-1.5, -0.5]);
    }

    #[test]
    fn softmax_of_uniform_row_is_one_over_n() {
        let x = t64(&[1, 64], vec![0.7; 64]);
        let y = x.softmax(1).unwrap().to_vec();
        for v in y {
            assert!((v - 1.0 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_log_softmax() {
        let x = t64(&[3, 5], randn(3, "sm", 15));
        let sm = x.softmax(1).unwrap().to_vec();
        let lsm = x.log_softmax(1).unwrap().to_vec();
        for r in 0..3 {
            let s: f64 = sm[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for (a, b) in sm.iter().zip(lsm.iter()) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_under_large_offsets() {
        let x = t64(&[1, 3], vec![1000.0, 1001.0, 1002.0]);
        let y = x.softmax(1).unwrap().to_vec();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(y[2] > y[1] && y[1] > y[0]);
    }

    #[test]
    fn layer_norm_unit_gamma_zero_beta_normalizes_rows() {
        let d = 8;
        let x = t64(&[4, d], randn(5, "ln", 4 * d));
        let gamma = t64(&[d], vec![1.0; d]);
        let beta = t64(&[d], vec![0.0; d]);
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap().to_vec();
        for r in 0..4 {
            let row = &y[r * d..(r + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shifts var slightly below 1
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_n_classes() {
        let x = t64(&[2, 64], vec![0.25; 128]);
        let loss = Tensor::cross_entropy(&x, &[5, 40]).unwrap();
        assert!((loss.item() - 64.0_f64.ln()).abs() < 1e-12);
        assert!((loss.item() - 4.158883083359672).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_logit_is_near_zero() {
        let mut row = vec![0.0; 10];
        row[3] = 50.0;
        let loss = Tensor::cross_entropy(&t64(&[1, 10], row), &[3]).unwrap();
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot_over_batch() {
        let x = p64(&[2, 3], vec![0.0; 6]);
        let loss = Tensor::cross_entropy(&x, &[0, 2]).unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        let third = 1.0 / 3.0;
        let expect = [
            (third - 1.0) / 2.0, third / 2.0, third / 2.0,
            third / 2.0, third / 2.0, (third - 1.0) / 2.0,
        ];
        for (a, e) in g.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let x = t64(&[1, 4], vec![0.0; 4]);
        let err = Tensor::cross_entropy(&x, &[4]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn nmse_fixed_points() {
        let t = t64(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // perfect prediction
        let z = nmse(&t, &t).unwrap();
        assert_eq!(z.loss.item(), 0.0);
        assert_eq!(z.excluded, 0);
        // all-zero prediction: ratio is exactly 1 per sample
        let zero = t64(&[2, 3], vec![0.0; 6]);
        let o = nmse(&zero, &t).unwrap();
        assert!((o.loss.item() - 1.0).abs() < 1e-15);
        // doubling the target also gives ratio 1
        let double = t64(&[2, 3], vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        let d = nmse(&double, &t).unwrap();
        assert!((d.loss.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nmse_excludes_zero_norm_samples() {
        let pred = t64(&[2, 2], vec![1.0, 1.0, 5.0, 5.0]);
        let target = t64(&[2, 2], vec![0.0, 0.0, 5.0, 5.0]);
        let r = nmse(&pred, &target).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.loss.item(), 0.0); // the surviving sample is exact

        let all_zero = t64(&[1, 2], vec![0.0, 0.0]);
        let err = nmse(&t64(&[1, 2], vec![1.0, 1.0]), &all_zero).unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let a = t64(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t64(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let a2 = c.slice(1, 0, 2).unwrap();
        let b2 = c.slice(1, 2, 3).unwrap();
        assert_eq!(a2.to_vec(), a.to_vec());
        assert_eq!(b2.to_vec(), b.to_vec());
    }

    #[test]
    fn concat_routes_gradients_back_to_inputs() {
        let a = p64(&[1, 2], vec![1.0, 2.0]);
        let b = p64(&[1, 1], vec![3.0]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        c.mul(&c).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 4.0]);
        assert_eq!(b.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn slice_gradient_scatters_into_place() {
        let x = p64(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        x.slice(1, 1, 2).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn axis_reductions_match_manual_sums() {
        let x = t64(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(x.sum_axis(0).unwrap().to_vec(), vec![5.0, 7.0, 9.0]);
        assert_eq!(x.sum_axis(1).unwrap().to_vec(), vec![6.0, 15.0]);
        assert_eq!(x.mean_axis(1).unwrap().to_vec(), vec![2.0, 5.0]);
        assert_eq!(x.sum_axis(0).unwrap().shape(), &[3]);
        assert_eq!(x.mean().item(), 3.5);
    }

    #[test]
    fn transpose_round_trips_and_routes_grads() {
        let x = p64(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let xt = x.transpose().unwrap();
        assert_eq!(xt.shape(), &[3, 2]);
        assert_eq!(xt.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(xt.transpose().unwrap().to_vec(), x.to_vec());
        let w = t64(&[3, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        xt.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn activation_values_at_known_points() {
        let x = t64(&[5], vec![-2.0, -0.5, 0.0, 0.5, 2.0]);
        let relu = x.relu().to_vec();
        assert_eq!(relu, vec![0.0, 0.0, 0.0, 0.5, 2.0]);
        let sig = x.sigmoid().to_vec();
        assert!((sig[2] - 0.5).abs() < 1e-15);
        assert!((sig[0] + sig[4] - 1.0).abs() < 1e-12); // sigmoid symmetry
        let sp = x.softplus().to_vec();
        assert!((sp[2] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(sp.iter().all(|&v| v > 0.0));
        let g = x.gelu().to_vec();
        assert_eq!(g[2], 0.0);
        assert!((g[4] - 1.954597694087775).abs() < 1e-12); // tanh-approx value at x = 2
        let th = x.tanh_act().to_vec();
        assert!((th[4] - 2.0_f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let x = t64(&[2], vec![800.0, -800.0]);
        let y = x.softplus().to_vec();
        assert!((y[0] - 800.0).abs() < 1e-9);
        assert_eq!(y[1], 0.0);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ln_gradient_is_reciprocal() {
        let x = p64(&[2], vec![2.0, 4.0]);
        x.ln().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5, 0.25]);
    }

    #[test]
    fn embedding_lookup_selects_rows_and_accumulates_grads() {
        let table = p64(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = Tensor::embedding_lookup(&table, &[2, 0, 2]).unwrap();
        assert_eq!(out.shape(), &[3, 2]);
        assert_eq!(out.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        out.sum().backward().unwrap();
        // row 2 was used twice
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(Tensor::embedding_lookup(&table, &[3]).is_err());
    }

    #[test]
    fn dropout_identity_and_masking() {
        let x = p64(&[1, 100], randn(7, "x", 100));
        let mut r = rng::stream(7, "dropout");
        // eval mode and p = 0 are exact identities (same node, no copy)
        let same = x.dropout(0.5, &mut r, false).unwrap();
        assert_eq!(same.to_vec(), x.to_vec());
        let same2 = x.dropout(0.0, &mut r, true).unwrap();
        assert_eq!(same2.to_vec(), x.to_vec());

        // training mode: survivors are scaled by 1/(1-p), the rest are zero
        let p = 0.25;
        let mut r1 = rng::stream(7, "dropout");
        let y = x.dropout(p, &mut r1, true).unwrap();
        let xv = x.to_vec();
        let yv = y.to_vec();
        let mut dropped = 0;
        for (a, b) in xv.iter().zip(yv.iter()) {
            if *b == 0.0 {
                dropped += 1;
            } else {
                assert!((b - a / (1.0 - p)).abs() < 1e-12);
            }
        }
        assert!(dropped > 5 && dropped < 60, "implausible drop count {dropped}");

        // same stream, same mask
        let mut r2 = rng::stream(7, "dropout");
        let y2 = x.dropout(p, &mut r2, true).unwrap();
        assert_eq!(yv, y2.to_vec());

        // gradient passes through the same mask
        y.sum().backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, b) in g.iter().zip(yv.iter()) {
            if *b == 0.0 {
                assert_eq!(*gi, 0.0);
            } else {
                assert!((gi - 1.0 / (1.0 - p)).abs() < 1e-12);
            }
        }

        assert!(x.dropout(1.0, &mut r2, true).is_err());
    }

    #[test]
    fn l2_normalize_rows_gives_unit_norms() {
        let x = t64(&[2, 3], vec![3.0, 0.0, 4.0, 1.0, 1.0, 1.0]);
        let y = x.l2_normalize_rows().unwrap().to_vec();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[2] - 0.8).abs() < 1e-15);
        for r in 0..2 {
            let n: f64 = y[r * 3..(r + 1) * 3].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_gradient_is_orthogonal_to_output() {
        // A direction's own scale does not change its normalization, so the
        // gradient must be orthogonal to the normalized vector.
        let x = p64(&[1, 4], randn(9, "l2", 4));
        let y = x.l2_normalize_rows().unwrap();
        let w = t64(&[1, 4], randn(9, "w", 4));
        y.mul(&w).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        let yv = y.to_vec();
        let dot: f64 = g.iter().zip(yv.iter()).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12, "grad not orthogonal: {dot}");
    }

    #[test]
    fn causal_attention_single_step_returns_value_row() {
        let q = t64(&[1, 1, 4], randn(21, "q", 4));
        let k = t64(&[1, 1, 4], randn(21, "k", 4));
        let v = t64(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let out = Tensor::causal_attention(&q, &k, &v, 2).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn causal_attention_ignores_future_positions() {
        let (b, t, d) = (1, 4, 8);
        let q = randn(31, "q", b * t * d);
        let k = randn(31, "k", b * t * d);
        let mut v = randn(31, "v", b * t * d);
        let base = Tensor::causal_attention(
            &t64(&[b, t, d], q.clone()),
            &t64(&[b, t, d], k.clone()),
            &t64(&[b, t, d], v.clone()),
            4,
        )
        .unwrap()
        .to_vec();
        // perturb the last position's key and value
        let mut k2 = k.clone();
        for j in 0..d {
            k2[(t - 1) * d + j] += 5.0;
            v[(t - 1) * d + j] -= 3.0;
        }
        let moved = Tensor::causal_attention(
            &t64(&[b, t, d], q),
            &t64(&[b, t, d], k2),
            &t64(&[b, t, d], v),
            4,
        )
        .unwrap()
        .to_vec();
        // positions 0..t-1 are bitwise unchanged; the last one moves
        assert_eq!(base[..(t - 1) * d], moved[..(t - 1) * d]);
        assert!(base[(t - 1) * d..] != moved[(t - 1) * d..]);
    }

    #[test]
    fn causal_attention_uniform_keys_average_prefix_values() {
        // identical keys make attention uniform over the causal prefix
        let (b, t, d) = (1, 3, 2);
        let q = t64(&[b, t, d], vec![0.3; b * t * d]);
        let k = t64(&[b, t, d], vec![0.7; b * t * d]);
        let v = t64(&[b, t, d], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        let out = Tensor::causal_attention(&q, &k, &v, 1).unwrap().to_vec();
        let expect = [1.0, 10.0, 1.5, 15.0, 2.0, 20.0];
        for (a, e) in out.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_attention_validates_heads_and_shapes() {
        let x = t64(&[1, 2, 6], vec![0.0; 12]);
        assert!(Tensor::causal_attention(&x, &x, &x, 4).is_err());
        let y = t64(&[1, 3, 6], vec![0.0; 18]);
        assert!(Tensor::causal_attention(&x, &y, &x, 2).is_err());
    }

    #[test]
    fn reshape_preserves_data_and_grads() {
        let x = p64(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.reshape(&[3, 2]).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert!(x.reshape(&[4, 2]).is_err());
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }
}

