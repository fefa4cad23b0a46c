//! Fourth-order central-difference Hessian.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Per-parameter steps `max(1e-4, 1e-4 |x_k|)`.
pub fn default_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (1e-4 * v.abs()).max(1e-4)).collect()
}

const DIAG: [(i32, f64); 5] = [(-2, -1.0 / 12.0), (-1, 4.0 / 3.0), (0, -5.0 / 2.0), (1, 4.0 / 3.0), (2, -1.0 / 12.0)];

/// Mixed-partial stencil: 1/3 on the unit diagonals, -1/48 on the doubled ones.
const CROSS: [(i32, i32, f64); 8] = [
    (1, 1, 1.0 / 3.0),
    (-1, -1, 1.0 / 3.0),
    (1, -1, -1.0 / 3.0),
    (-1, 1, -1.0 / 3.0),
    (2, 2, -1.0 / 48.0),
    (-2, -2, -1.0 / 48.0),
    (2, -2, 1.0 / 48.0),
    (-2, 2, 1.0 / 48.0),
];

fn attempt<F>(f: &F, x: &[f64], steps: &[f64]) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let mut points: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
    for i in 0..n {
        for &(o, w) in &DIAG {
            let mut p = x.to_vec();
            p[i] += o as f64 * steps[i];
            points.push((i, i, w / (steps[i] * steps[i]), p));
        }
        for j in (i + 1)..n {
            for &(a, b, w) in &CROSS {
                let mut p = x.to_vec();
                p[i] += a as f64 * steps[i];
                p[j] += b as f64 * steps[j];
                points.push((i, j, w / (steps[i] * steps[j]), p));
            }
        }
    }
    let values: Vec<f64> = points.par_iter().map(|(_, _, _, p)| f(p)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut h = DMatrix::<f64>::zeros(n, n);
    for ((i, j, w, _), v) in points.iter().zip(&values) {
        h[(*i, *j)] += w * v;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            h[(j, i)] = h[(i, j)];
        }
    }
    Some(h)
}

/// Hessian of `f` at `x`. Steps are halved up to three times when a stencil
/// point evaluates to a non-finite value.
pub fn numerical_hessian<F>(f: F, x: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if steps.len() != x.len() || steps.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::Domain("Hessian steps must be positive and match the point".into()));
    }
    let mut steps = steps.to_vec();
    for _ in 0..4 {
        if let Some(h) = attempt(&f, x, &steps) {
            return Ok(h);
        }
        steps.iter_mut().for_each(|h| *h *= 0.5);
    }
    Err(Error::Domain("objective is not finite around the evaluation point".into()))
}
