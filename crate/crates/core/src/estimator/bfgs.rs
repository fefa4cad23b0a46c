//! BFGS minimisation with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

/// Objective returning value and gradient, or `None` outside its domain.
pub trait Objective {
    fn evaluate(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn evaluate(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BfgsSettings {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease and curvature constants.
    pub c1: f64,
    pub c2: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        BfgsSettings {
            gradient_tolerance: 1e-6,
            max_iterations: 500,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: BfgsStatus,
}

impl BfgsOutcome {
    pub fn converged(&self) -> bool {
        self.status == BfgsStatus::Converged
    }

    pub fn gradient_norm(&self) -> f64 {
        norm(&self.gradient)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point {
    step: f64,
    x: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    slope: f64,
}

struct Counter<'a, O: Objective> {
    objective: &'a O,
    evaluations: usize,
}

impl<O: Objective> Counter<'_, O> {
    fn at(&mut self, x0: &[f64], dir: &[f64], step: f64) -> Option<Point> {
        self.evaluations += 1;
        let x: Vec<f64> = x0.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        let (value, gradient) = self.objective.evaluate(&x)?;
        if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let slope = dot(&gradient, dir);
        Some(Point {
            step,
            x,
            value,
            gradient,
            slope,
        })
    }
}

/// Minimiser of the cubic through two points with values and slopes,
/// safeguarded into the interior of the bracket.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.step, hi.step);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (a + b);
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        mid
    } else {
        t
    }
}

/// Approximate Wolfe conditions: near a minimum, function differences fall
/// below roundoff, so the slope alone decides.
fn approx_wolfe(p: &Point, f0: f64, g0: f64, s: &BfgsSettings) -> bool {
    p.value <= f0 + 1e-10 * f0.abs() && p.slope >= s.c2 * g0 && p.slope <= (2.0 * s.c1 - 1.0) * g0
}

fn zoom<O: Objective>(
    c: &mut Counter<O>,
    x0: &[f64],
    dir: &[f64],
    f0: f64,
    g0: f64,
    mut lo: Point,
    mut hi: Point,
    s: &BfgsSettings,
) -> Option<Point> {
    for _ in 0..40 {
        let step = interpolate(&lo, &hi);
        let p = match c.at(x0, dir, step) {
            Some(p) => p,
            None => {
                // Pull the far end in when the trial leaves the domain.
                hi.step = 0.5 * (lo.step + hi.step);
                continue;
            }
        };
        if approx_wolfe(&p, f0, g0, s) {
            return Some(p);
        }
        if p.value > f0 + s.c1 * step * g0 || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -s.c2 * g0 {
                return Some(p);
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
        if (hi.step - lo.step).abs() < 1e-14 * lo.step.abs().max(1e-10) {
            break;
        }
    }
    // Accept any strict decrease found along the way.
    (lo.step > 0.0 && lo.value < f0).then_some(lo)
}

fn line_search<O: Objective>(
    c: &mut Counter<O>,
    x0: &[f64],
    f0: f64,
    grad0: &[f64],
    dir: &[f64],
    initial_step: f64,
    s: &BfgsSettings,
) -> Option<Point> {
    let g0 = dot(grad0, dir);
    let mut prev = Point {
        step: 0.0,
        x: x0.to_vec(),
        value: f0,
        gradient: grad0.to_vec(),
        slope: g0,
    };
    let mut step = initial_step;
    for i in 0..60 {
        let p = match c.at(x0, dir, step) {
            Some(p) => p,
            None => {
                step = 0.5 * (prev.step + step);
                if step < 1e-20 {
                    return None;
                }
                continue;
            }
        };
        if approx_wolfe(&p, f0, g0, s) {
            return Some(p);
        }
        if p.value > f0 + s.c1 * step * g0 || (i > 0 && p.value >= prev.value) {
            return zoom(c, x0, dir, f0, g0, prev, p, s);
        }
        if p.slope.abs() <= -s.c2 * g0 {
            return Some(p);
        }
        if p.slope >= 0.0 {
            return zoom(c, x0, dir, f0, g0, p, prev, s);
        }
        prev = p;
        step *= 2.0;
    }
    None
}

/// Minimises `objective` from `x0`. Returns the best iterate found even when
/// the stopping rule is not met.
pub fn minimize<O: Objective>(objective: &O, x0: &[f64], settings: &BfgsSettings) -> Option<BfgsOutcome> {
    let n = x0.len();
    let mut counter = Counter {
        objective,
        evaluations: 1,
    };
    let (mut f, mut g) = objective.evaluate(x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0.to_vec();
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut status = BfgsStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        if norm(&g) < settings.gradient_tolerance {
            status = BfgsStatus::Converged;
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&h_inv * &gv)).iter().copied().collect();
        if dot(&dir, &g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = g.iter().map(|v| -v).collect();
            first = true;
        }
        let initial = if first { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let Some(p) = line_search(&mut counter, &x, f, &g, &dir, initial, settings) else {
            if !first {
                // Retry once along steepest descent before giving up.
                h_inv = DMatrix::identity(n, n);
                first = true;
                continue;
            }
            status = BfgsStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let sv = DVector::from_iterator(n, p.x.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(n, p.gradient.iter().zip(&g).map(|(a, b)| a - b));
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if first {
                let scale = sy / yv.dot(&yv);
                h_inv = DMatrix::identity(n, n) * scale;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 yhy + rho) s s'
            h_inv -= (&sv * hy.transpose() + &hy * sv.transpose()) * rho;
            h_inv += (&sv * sv.transpose()) * (rho * rho * yhy + rho);
            first = false;
        }
        x = p.x;
        f = p.value;
        g = p.gradient;
    }
    if status == BfgsStatus::MaxIterations && norm(&g) < settings.gradient_tolerance {
        status = BfgsStatus::Converged;
    }
    Some(BfgsOutcome {
        x,
        value: f,
        gradient: g,
        iterations,
        evaluations: counter.evaluations,
        status,
    })
}
