//! Central finite-difference gradient verification.
//!
//! Every differentiable operator is checked in f64 against central
//! differences with step [`FD_STEP`]. The comparison is relative with an
//! absolute floor: near-zero gradients are compared at a fixed scale instead
//! of blowing up the ratio.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ops::nmse;
use crate::autodiff::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Central-difference step. f64 only; too coarse for f32.
pub const FD_STEP: f64 = 1e-3;

/// Maximum allowed relative error between analytic and numeric gradients.
pub const REL_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero pairs compare sanely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Verify analytic gradients of `f` (a scalar function of `params`) against
/// central finite differences, perturbing every element of every parameter.
/// Returns the worst relative error observed.
///
/// `f` is re-evaluated many times; it must be a pure function of the current
/// parameter data (any randomness inside must be re-seeded per call).
pub fn check_grads(
    params: &[Tensor<f64>],
    f: &dyn Fn() -> Result<Tensor<f64>>,
) -> Result<f64> {
    for p in params {
        if !p.requires_grad() {
            return Err(Error::Domain("check_grads: all inputs must be parameters".into()));
        }
        p.zero_grad();
    }
    let loss = f()?;
    if loss.len() != 1 {
        return Err(Error::Shape { op: "check_grads", left: loss.shape().to_vec(), right: vec![1] });
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> =
        params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()])).collect();

    let mut worst = 0.0_f64;
    for (p, an) in params.iter().zip(&analytic) {
        for i in 0..p.len() {
            let orig = p.data()[i];
            let eval = |x: f64| -> Result<f64> {
                p.with_data_mut(|d| d[i] = x);
                Ok(no_grad(|| f())?.item())
            };
            // five-point central stencil: the h^2 truncation term cancels,
            // which matters for deep composites with large third derivatives
            let p1 = eval(orig + FD_STEP)?;
            let m1 = eval(orig - FD_STEP)?;
            let p2 = eval(orig + 2.0 * FD_STEP)?;
            let m2 = eval(orig - 2.0 * FD_STEP)?;
            p.with_data_mut(|d| d[i] = orig);
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP);
            worst = worst.max(rel_err(an[i], fd));
        }
    }
    Ok(worst)
}

/// Outcome of the randomized sweep for one operator.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

fn rand_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Random values bounded away from zero (for kinked or singular points).
fn rand_vec_off_zero(r: &mut ChaCha8Rng, n: usize, min_abs: f64, max_abs: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = r.random_range(min_abs..max_abs);
            if r.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn param(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::param(shape, rand_vec(r, n, lo, hi)).expect("shape/data agree")
}

fn weights(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rand_vec(r, n, -1.0, 1.0)).expect("shape/data agree")
}

/// Reduce an op output to a scalar through fixed random weights so every
/// output element receives a distinct upstream gradient.
fn weighted(out: &Tensor<f64>, w: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(out.mul(w)?.sum())
}

/// Run the randomized finite-difference sweep over every registered
/// operator, `instances` random cases each. Shapes vary per instance.
pub fn check_all_ops(seed: u64, instances: usize) -> Result<Vec<OpReport>> {
    let mut reports = Vec::new();
    let mut run = |op: &'static str,
                   f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>|
     -> Result<()> {
        let mut worst = 0.0_f64;
        for k in 0..instances {
            let mut r = rng::stream_indexed(seed, op, k as u64);
            worst = worst.max(f(&mut r)?);
        }
        reports.push(OpReport { op, instances, max_rel_err: worst });
        Ok(())
    };

    run("add", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let n = 2 + (r.random::<u32>() % 3) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let b = param(r, &[m, n], -2.0, 2.0);
        let w = weights(r, &[m, n]);
        check_grads(&[a.clone(), b.clone()], &|| weighted(&a.add(&b)?, &w))
    })?;

    run("add_broadcast", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let n = 2 + (r.random::<u32>() % 3) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let b = param(r, &[n], -2.0, 2.0);
        let w = weights(r, &[m, n]);
        check_grads(&[a.clone(), b.clone()], &|| weighted(&a.add(&b)?, &w))
    })?;

    run("sub", &mut |r| {
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -2.0, 2.0);
        let b = param(r, &[n], -2.0, 2.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone(), b.clone()], &|| weighted(&a.sub(&b)?, &w))
    })?;

    run("mul", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let a = param(r, &[m, 3], -2.0, 2.0);
        let b = param(r, &[3], -2.0, 2.0);
        let w = weights(r, &[m, 3]);
        check_grads(&[a.clone(), b.clone()], &|| weighted(&a.mul(&b)?, &w))
    })?;

    run("div", &mut |r| {
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -2.0, 2.0);
        let b = Tensor::param(&[n], rand_vec_off_zero(r, n, 0.5, 2.0))?;
        let w = weights(r, &[n]);
        check_grads(&[a.clone(), b.clone()], &|| weighted(&a.div(&b)?, &w))
    })?;

    run("add_scalar", &mut |r| {
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let c: f64 = r.random_range(-2.0..2.0);
        let a = param(r, &[n], -2.0, 2.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.add_scalar(c), &w))
    })?;

    run("mul_scalar", &mut |r| {
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let c: f64 = r.random_range(-2.0..2.0);
        let a = param(r, &[n], -2.0, 2.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.mul_scalar(c), &w))
    })?;

    run("matmul", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let k = 2 + (r.random::<u32>() % 3) as usize;
        let n = 2 + (r.random::<u32>() % 3) as usize;
        let a = param(r, &[m, k], -1.0, 1.0);
        let b = param(r, &[k, n], -1.0, 1.0);
        let w = weights(r, &[m, n]);
        check_grads(&[a.clone(), b.clone()], &|| weighted(&a.matmul(&b)?, &w))
    })?;

    run("transpose", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let n = 2 + (r.random::<u32>() % 3) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let w = weights(r, &[n, m]);
        check_grads(&[a.clone()], &|| weighted(&a.transpose()?, &w))
    })?;

    run("reshape", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let a = param(r, &[m, 6], -2.0, 2.0);
        let w = weights(r, &[m * 2, 3]);
        check_grads(&[a.clone()], &|| weighted(&a.reshape(&[m * 2, 3])?, &w))
    })?;

    run("concat", &mut |r| {
        let m = 2 + (r.random::<u32>() % 2) as usize;
        let a = param(r, &[m, 2], -2.0, 2.0);
        let b = param(r, &[m, 3], -2.0, 2.0);
        let c = param(r, &[m, 1], -2.0, 2.0);
        let w = weights(r, &[m, 6]);
        check_grads(&[a.clone(), b.clone(), c.clone()], &|| {
            weighted(&Tensor::concat(&[a.clone(), b.clone(), c.clone()], 1)?, &w)
        })
    })?;

    run("slice", &mut |r| {
        let n = 5 + (r.random::<u32>() % 3) as usize;
        let start = (r.random::<u32>() % 2) as usize;
        let len = 2 + (r.random::<u32>() % 2) as usize;
        let a = param(r, &[2, n], -2.0, 2.0);
        let w = weights(r, &[2, len]);
        check_grads(&[a.clone()], &|| weighted(&a.slice(1, start, len)?, &w))
    })?;

    run("sum", &mut |r| {
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -2.0, 2.0);
        check_grads(&[a.clone()], &|| Ok(a.sum()))
    })?;

    run("mean", &mut |r| {
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[2, n], -2.0, 2.0);
        check_grads(&[a.clone()], &|| Ok(a.mean()))
    })?;

    run("sum_axis", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let n = 2 + (r.random::<u32>() % 3) as usize;
        let axis = (r.random::<u32>() % 2) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let w = weights(r, &[if axis == 0 { n } else { m }]);
        check_grads(&[a.clone()], &|| weighted(&a.sum_axis(axis)?, &w))
    })?;

    run("mean_axis", &mut |r| {
        let m = 2 + (r.random::<u32>() % 3) as usize;
        let n = 2 + (r.random::<u32>() % 3) as usize;
        let axis = (r.random::<u32>() % 2) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let w = weights(r, &[if axis == 0 { n } else { m }]);
        check_grads(&[a.clone()], &|| weighted(&a.mean_axis(axis)?, &w))
    })?;

    run("relu", &mut |r| {
        let n = 4 + (r.random::<u32>() % 4) as usize;
        // keep inputs away from the kink so the FD stencil stays one-sided
        let a = Tensor::param(&[n], rand_vec_off_zero(r, n, 0.05, 2.0))?;
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.relu(), &w))
    })?;

    run("gelu", &mut |r| {
        let n = 4 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -2.0, 2.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.gelu(), &w))
    })?;

    run("sigmoid", &mut |r| {
        let n = 4 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -3.0, 3.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.sigmoid(), &w))
    })?;

    run("tanh", &mut |r| {
        let n = 4 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -3.0, 3.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.tanh_act(), &w))
    })?;

    run("softplus", &mut |r| {
        let n = 4 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], -3.0, 3.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.softplus(), &w))
    })?;

    run("ln", &mut |r| {
        let n = 4 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[n], 0.2, 3.0);
        let w = weights(r, &[n]);
        check_grads(&[a.clone()], &|| weighted(&a.ln(), &w))
    })?;

    run("softmax", &mut |r| {
        let m = 2 + (r.random::<u32>() % 2) as usize;
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let w = weights(r, &[m, n]);
        check_grads(&[a.clone()], &|| weighted(&a.softmax(1)?, &w))
    })?;

    run("log_softmax", &mut |r| {
        let m = 2 + (r.random::<u32>() % 2) as usize;
        let n = 3 + (r.random::<u32>() % 4) as usize;
        let a = param(r, &[m, n], -2.0, 2.0);
        let w = weights(r, &[m, n]);
        check_grads(&[a.clone()], &|| weighted(&a.log_softmax(1)?, &w))
    })?;

    run("layer_norm", &mut |r| {
        let m = 2 + (r.random::<u32>() % 2) as usize;
        let d = 4 + (r.random::<u32>() % 3) as usize;
        let x = param(r, &[m, d], -2.0, 2.0);
        let gamma = param(r, &[d], 0.5, 1.5);
        let beta = param(r, &[d], -0.5, 0.5);
        let w = weights(r, &[m, d]);
        check_grads(&[x.clone(), gamma.clone(), beta.clone()], &|| {
            weighted(&x.layer_norm(&gamma, &beta, 1e-5)?, &w)
        })
    })?;

    run("embedding_lookup", &mut |r| {
        let vocab = 5 + (r.random::<u32>() % 4) as usize;
        let d = 3 + (r.random::<u32>() % 3) as usize;
        let table = param(r, &[vocab, d], -1.0, 1.0);
        let idx: Vec<usize> =
            (0..4).map(|_| (r.random::<u32>() as usize) % vocab).collect();
        let w = weights(r, &[4, d]);
        check_grads(&[table.clone()], &|| {
            weighted(&Tensor::embedding_lookup(&table, &idx)?, &w)
        })
    })?;

    run("dropout", &mut |r| {
        let n = 6 + (r.random::<u32>() % 4) as usize;
        let mask_seed: u64 = r.random();
        let a = param(r, &[n], -2.0, 2.0);
        let w = weights(r, &[n]);
        // re-seed per evaluation so FD re-runs see the identical mask
        check_grads(&[a.clone()], &|| {
            let mut mr = rng::stream(mask_seed, "gradcheck-dropout");
            weighted(&a.dropout(0.3, &mut mr, true)?, &w)
        })
    })?;

    run("l2_normalize_rows", &mut |r| {
        let m = 2 + (r.random::<u32>() % 2) as usize;
        let d = 3 + (r.random::<u32>() % 4) as usize;
        let x = Tensor::param(&[m, d], rand_vec_off_zero(r, m * d, 0.3, 2.0))?;
        let w = weights(r, &[m, d]);
        check_grads(&[x.clone()], &|| weighted(&x.l2_normalize_rows()?, &w))
    })?;

    run("causal_attention", &mut |r| {
        let t = 2 + (r.random::<u32>() % 3) as usize;
        let heads = 1 + (r.random::<u32>() % 2) as usize;
        let d = heads * (2 + (r.random::<u32>() % 2) as usize);
        let q = param(r, &[1, t, d], -1.0, 1.0);
        let k = param(r, &[1, t, d], -1.0, 1.0);
        let v = param(r, &[1, t, d], -1.0, 1.0);
        let w = weights(r, &[1, t, d]);
        check_grads(&[q.clone(), k.clone(), v.clone()], &|| {
            weighted(&Tensor::causal_attention(&q, &k, &v, heads)?, &w)
        })
    })?;

    run("cross_entropy", &mut |r| {
        let b = 2 + (r.random::<u32>() % 3) as usize;
        let c = 3 + (r.random::<u32>() % 4) as usize;
        let logits = param(r, &[b, c], -2.0, 2.0);
        let labels: Vec<usize> = (0..b).map(|_| (r.random::<u32>() as usize) % c).collect();
        check_grads(&[logits.clone()], &|| Tensor::cross_entropy(&logits, &labels))
    })?;

    run("nmse", &mut |r| {
        let s = 2 + (r.random::<u32>() % 3) as usize;
        let d = 3 + (r.random::<u32>() % 3) as usize;
        let pred = param(r, &[s, d], -2.0, 2.0);
        let target = Tensor::param(&[s, d], rand_vec_off_zero(r, s * d, 0.3, 2.0))?;
        check_grads(&[pred.clone(), target.clone()], &|| Ok(nmse(&pred, &target)?.loss))
    })?;

    Ok(reports)
}

/// Composite check: a small MLP with normalization, attention and a
/// cross-entropy head, differentiated end to end through every layer type.
pub fn check_composite(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "composite");
    let (b, t, d, classes) = (2, 3, 4, 5);
    let x = param(&mut r, &[b * t, d], -1.0, 1.0);
    let w1 = param(&mut r, &[d, d], -0.5, 0.5);
    let gamma = param(&mut r, &[d], 0.8, 1.2);
    let beta = param(&mut r, &[d], -0.2, 0.2);
    let w2 = param(&mut r, &[d, classes], -0.5, 0.5);
    let labels: Vec<usize> = (0..b).map(|_| (r.random::<u32>() as usize) % classes).collect();
    check_grads(&[x.clone(), w1.clone(), gamma.clone(), beta.clone(), w2.clone()], &|| {
        let h = x.matmul(&w1)?.gelu();
        let h = h.layer_norm(&gamma, &beta, 1e-5)?;
        let ctx = Tensor::causal_attention(
            &h.reshape(&[b, t, d])?,
            &h.reshape(&[b, t, d])?,
            &h.reshape(&[b, t, d])?,
            2,
        )?;
        // classify from the last position of each sequence
        let last = ctx.slice(1, t - 1, 1)?.reshape(&[b, d])?;
        Tensor::cross_entropy(&last.matmul(&w2)?, &labels)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_passes_for_every_op() {
        let reports = check_all_ops(1234, 4).unwrap();
        assert!(reports.len() >= 25, "expected a full op sweep, got {}", reports.len());
        for rep in &reports {
            assert!(
                rep.passed(),
                "{} failed finite-difference check: max rel err {:.3e}",
                rep.op,
                rep.max_rel_err
            );
        }
    }

    #[test]
    fn composite_network_gradients_check_out() {
        let worst = check_composite(77).unwrap();
        assert!(worst < REL_TOL, "composite rel err {worst:.3e}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // sanity: the harness must catch a broken backward rule. The first
        // evaluation (analytic pass) sees f(x) = sum(x*x); every later one
        // (the FD stencil) sees 2f, so analytic and numeric disagree by 2x.
        let x = Tensor::param(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let calls = std::cell::Cell::new(0usize);
        let worst = check_grads(&[x.clone()], &|| {
            let n = calls.get();
            calls.set(n + 1);
            let y = x.mul(&x)?.sum();
            if n == 0 {
                Ok(y)
            } else {
                Ok(y.mul_scalar(2.0))
            }
        })
        .unwrap();
        assert!(worst > REL_TOL, "harness failed to flag a bad gradient");
    }
}
