//! Fixed-point iteration `x <- B̃x + b` (and `y <- yB̃ + ν̃`) from zero.
//!
//! For non-negative data the iterates are the partial Neumann sums
//! `Σ_{j<k} B̃^j b`: component-wise non-decreasing and never above the
//! solution, so any iterate is a valid lower bound.

use super::TruncatedSystem;

/// One monotone lower iterate together with its last increment.
#[derive(Clone, Debug)]
pub struct LowerIterate {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `max |x_k - x_{k-1}|`, equal to the residual of `x_{k-1}`.
    pub increment: f64,
}

pub(crate) fn apply(system: &TruncatedSystem, x: &[f64], b: &[f64], out: &mut [f64]) {
    let mut row = Vec::new();
    for i in 0..system.dim() {
        system.row_into(i, &mut row);
        let mut acc = b[i];
        for &(j, p) in &row {
            acc += p * x[j];
        }
        out[i] = acc;
    }
}

pub(crate) fn apply_transpose(system: &TruncatedSystem, y: &[f64], c: &[f64], out: &mut [f64]) {
    out.copy_from_slice(c);
    let mut row = Vec::new();
    for i in 0..system.dim() {
        if y[i] == 0.0 {
            continue;
        }
        system.row_into(i, &mut row);
        for &(j, p) in &row {
            out[j] += y[i] * p;
        }
    }
}

/// Iterates until the scaled increment is at most `tol` or `max_iter` steps
/// have been taken. Returns the final iterate and whether it converged.
pub(crate) fn iterate(
    system: &TruncatedSystem,
    rhs: &[f64],
    transpose: bool,
    tol: f64,
    max_iter: usize,
    mut on_step: impl FnMut(&[f64], &[f64]),
) -> (LowerIterate, bool) {
    let n = system.dim();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut increment = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        if transpose {
            apply_transpose(system, &x, rhs, &mut next);
        } else {
            apply(system, &x, rhs, &mut next);
        }
        on_step(&x, &next);
        increment = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
        let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        std::mem::swap(&mut x, &mut next);
        iterations += 1;
        if increment <= tol * scale || !increment.is_finite() {
            break;
        }
    }
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let converged = increment.is_finite() && increment <= tol * scale;
    (
        LowerIterate {
            x,
            iterations,
            increment,
        },
        converged,
    )
}
