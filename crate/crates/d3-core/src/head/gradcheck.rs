//! Finite-difference verification of the hand-written backward passes.

use super::model::{bce_loss, HeadModel};

/// Central-difference check of every parameter.
///
/// Returns the worst relative error between the analytic gradient and
/// (loss(θ+h) − loss(θ−h)) / 2h, with the usual guard against division by
/// tiny magnitudes.
pub fn max_rel_grad_error(model: &mut HeadModel, x: &[f64], y: f64, step: f64) -> f64 {
    let mut grads = model.grad_buffer();
    model.loss_grad(x, y, &mut grads);
    let analytic: Vec<Vec<f64>> = grads.0.tensors().iter().map(|t| (*t).clone()).collect();

    let mut worst = 0.0f64;
    for (ti, tensor) in analytic.iter().enumerate() {
        for (ei, &g) in tensor.iter().enumerate() {
            let orig = model.tensors()[ti][ei];
            model.tensors_mut()[ti][ei] = orig + step;
            let up = bce_loss(model.probability(x), y);
            model.tensors_mut()[ti][ei] = orig - step;
            let down = bce_loss(model.probability(x), y);
            model.tensors_mut()[ti][ei] = orig;
            let fd = (up - down) / (2.0 * step);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}
