//! Tour the reverse-mode tape: build a tiny regression graph, read exact
//! gradients back, and confirm them against finite differences.

use wmlm::autodiff::{no_grad, Tensor};
use wmlm::gradcheck;

fn main() -> wmlm::Result<()> {
    // y = mean((x W + b - t)^2) on a 3x2 problem.
    let x = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, 2.0, -0.5, 0.3, 0.7, -1.2])?;
    let t = Tensor::<f64>::from_vec(&[3, 1], vec![0.5, -0.25, 1.0])?;
    let w = Tensor::<f64>::param(&[2, 1], vec![0.1, -0.2])?;
    let b = Tensor::<f64>::param(&[1, 1], vec![0.05])?;

    let err = x.matmul(&w)?.add(&b)?.sub(&t)?;
    let loss = err.mul(&err)?.mean();
    loss.backward()?;
    println!("loss = {:.6}", loss.item());
    println!("dloss/dW = {:?}", w.grad().unwrap());
    println!("dloss/db = {:?}", b.grad().unwrap());

    // The same computation under no_grad records nothing.
    let silent = no_grad(|| -> wmlm::Result<Tensor<f64>> {
        Ok(x.matmul(&w)?.add(&b)?.sub(&t)?.mul_scalar(1.0))
    })?;
    println!("no_grad result requires_grad = {}", silent.requires_grad());

    // A second backward on the same graph is rejected rather than silently
    // accumulating into stale buffers.
    let twice = loss.backward().unwrap_err();
    println!("backward twice: error: {twice}");

    // Composite check through matmul, layer norm, gelu, softmax and a
    // cross-entropy head; five-point central differences, f64.
    let worst = gradcheck::check_composite(7)?;
    println!("composite gradient check: max rel err {worst:.3e}");

    // Per-op randomized sweep (a few instances here; the test suite runs
    // many more).
    for report in gradcheck::check_all_ops(7, 3)? {
        println!(
            "{:>20}: {} instances, max rel err {:.3e} {}",
            report.op,
            report.instances,
            report.max_rel_err,
            if report.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
