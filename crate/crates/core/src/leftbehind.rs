//! Left-behind probabilities from journey-time distributions.
//!
//! Journey times of passengers on a single-segment OD cluster around
//! `free-flow + c * headway` for c missed trains. A Gaussian mixture with
//! C + 1 ordered components whose consecutive means stay close to one headway
//! is fitted by EM; its weights are the left-behind probabilities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JourneyTimeSample {
    /// Free-form description of the cell (OD, platform, period).
    pub context: String,
    pub journey_s: Vec<f64>,
}

impl JourneyTimeSample {
    pub fn new(context: impl Into<String>, journey_s: Vec<f64>) -> Result<Self> {
        if let Some(t) = journey_s.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Validation(format!("journey times must be positive, got {t}")));
        }
        Ok(JourneyTimeSample {
            context: context.into(),
            journey_s,
        })
    }

    pub fn len(&self) -> usize {
        self.journey_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.journey_s.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureConstraints {
    pub headway_s: f64,
    /// Expected journey time when boarding the first train.
    pub prior_s: f64,
    /// Consecutive means lie in `[h (1 - gap_slack), h (1 + gap_slack)]`.
    #[serde(default = "default_gap_slack")]
    pub gap_slack: f64,
    /// `|mu_0 - prior| <= prior_slack_s`; half a headway when absent.
    #[serde(default)]
    pub prior_slack_s: Option<f64>,
    #[serde(default = "default_min_sd")]
    pub min_sd_s: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_gap_slack() -> f64 {
    0.25
}
fn default_min_sd() -> f64 {
    1.0
}
fn default_max_iterations() -> usize {
    2000
}
fn default_tolerance() -> f64 {
    1e-10
}

impl MixtureConstraints {
    pub fn new(headway_s: f64, prior_s: f64) -> Self {
        MixtureConstraints {
            headway_s,
            prior_s,
            gap_slack: default_gap_slack(),
            prior_slack_s: None,
            min_sd_s: default_min_sd(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
        }
    }

    fn prior_slack(&self) -> f64 {
        self.prior_slack_s.unwrap_or(0.5 * self.headway_s)
    }

    fn gap_bounds(&self) -> (f64, f64) {
        (self.headway_s * (1.0 - self.gap_slack), self.headway_s * (1.0 + self.gap_slack))
    }

    fn validate(&self) -> Result<()> {
        let ok = self.headway_s > 0.0
            && self.headway_s.is_finite()
            && self.prior_s.is_finite()
            && (0.0..1.0).contains(&self.gap_slack)
            && self.prior_slack() >= 0.0
            && self.min_sd_s > 0.0
            && self.max_iterations > 0
            && self.tolerance > 0.0;
        if !ok {
            return Err(Error::Constraint(format!(
                "inconsistent mixture constraints: headway {}, prior {}, gap slack {}, prior slack {}",
                self.headway_s,
                self.prior_s,
                self.gap_slack,
                self.prior_slack()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean_s: f64,
    pub sd_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub components: Vec<MixtureComponent>,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub sample_size: usize,
}

impl MixtureFit {
    pub fn max_left_behind(&self) -> usize {
        self.components.len() - 1
    }
}

fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

fn log_likelihood(data: &[f64], comps: &[MixtureComponent], resp: Option<&mut [f64]>) -> f64 {
    let k = comps.len();
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    let mut resp = resp;
    for (i, &t) in data.iter().enumerate() {
        for (c, comp) in comps.iter().enumerate() {
            buf[c] = if comp.weight > 0.0 {
                comp.weight.ln() + normal_log_pdf(t, comp.mean_s, comp.sd_s)
            } else {
                f64::NEG_INFINITY
            };
        }
        let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = buf.iter().map(|v| (v - m).exp()).sum();
        let lse = m + s.ln();
        total += lse;
        if let Some(r) = resp.as_deref_mut() {
            for c in 0..k {
                r[i * k + c] = (buf[c] - lse).exp();
            }
        }
    }
    total
}

/// Minimises `sum_c a_c (mu_c - m_c)^2` over `mu_c = u_0 + u_1 + ... + u_c`
/// with each `u_j` boxed, by exact coordinate minimisation from `u`.
fn box_weighted_means(a: &[f64], m: &[f64], bounds: &[(f64, f64)], u: &mut [f64]) {
    let k = a.len();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let mut mu = 0.0;
            let mut grad = 0.0;
            let mut curv = 0.0;
            for c in 0..k {
                mu += u[c];
                if c >= j {
                    grad += a[c] * (mu - m[c]);
                    curv += a[c];
                }
            }
            if curv <= 0.0 {
                continue;
            }
            let next = (u[j] - grad / curv).clamp(bounds[j].0, bounds[j].1);
            moved = moved.max((next - u[j]).abs());
            u[j] = next;
        }
        if moved < 1e-10 {
            break;
        }
    }
}

/// Constrained EM fit of a `c_max + 1` component mixture.
pub fn fit_mixture(sample: &JourneyTimeSample, c_max: usize, constraints: &MixtureConstraints) -> Result<MixtureFit> {
    constraints.validate()?;
    let data = &sample.journey_s;
    let n = data.len();
    let k = c_max + 1;
    if n < 10 * k {
        return Err(Error::Validation(format!(
            "{}: {n} journey times are too few for {k} components (need {})",
            sample.context,
            10 * k
        )));
    }
    if let Some(t) = data.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Validation(format!("journey times must be positive, got {t}")));
    }
    let nf = n as f64;
    if k == 1 {
        let mean = data.iter().sum::<f64>() / nf;
        let sd = (data.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / nf)
            .sqrt()
            .max(constraints.min_sd_s);
        let comps = vec![MixtureComponent {
            weight: 1.0,
            mean_s: mean,
            sd_s: sd,
        }];
        let ll = log_likelihood(data, &comps, None);
        return Ok(MixtureFit {
            components: comps,
            log_likelihood: ll,
            initial_log_likelihood: ll,
            iterations: 0,
            sample_size: n,
        });
    }

    let h = constraints.headway_s;
    let (gap_lo, gap_hi) = constraints.gap_bounds();
    let slack = constraints.prior_slack();
    let mut bounds = vec![(constraints.prior_s - slack, constraints.prior_s + slack)];
    bounds.extend(std::iter::repeat_n((gap_lo, gap_hi), c_max));
    let mut u: Vec<f64> = std::iter::once(constraints.prior_s).chain(std::iter::repeat_n(h, c_max)).collect();
    let mut comps: Vec<MixtureComponent> = (0..k)
        .map(|c| MixtureComponent {
            weight: 1.0 / k as f64,
            mean_s: constraints.prior_s + c as f64 * h,
            sd_s: (h / 4.0).max(constraints.min_sd_s),
        })
        .collect();
    let mut resp = vec![0.0; n * k];
    let initial = log_likelihood(data, &comps, Some(&mut resp));
    let mut ll = initial;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < constraints.max_iterations {
        iterations += 1;
        let mut nk = vec![0.0; k];
        let mut sum = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                nk[c] += resp[i * k + c];
                sum[c] += resp[i * k + c] * data[i];
            }
        }
        for c in 0..k {
            comps[c].weight = nk[c] / nf;
        }
        let target: Vec<f64> = (0..k)
            .map(|c| if nk[c] > 0.0 { sum[c] / nk[c] } else { comps[c].mean_s })
            .collect();
        let a: Vec<f64> = (0..k).map(|c| nk[c] / (comps[c].sd_s * comps[c].sd_s)).collect();
        box_weighted_means(&a, &target, &bounds, &mut u);
        let mut mu = 0.0;
        for c in 0..k {
            mu += u[c];
            comps[c].mean_s = mu;
        }
        for c in 0..k {
            if nk[c] > 0.0 {
                let ss: f64 = (0..n).map(|i| resp[i * k + c] * (data[i] - comps[c].mean_s).powi(2)).sum();
                comps[c].sd_s = (ss / nk[c]).sqrt().max(constraints.min_sd_s);
            }
        }
        let next = log_likelihood(data, &comps, Some(&mut resp));
        let change = next - ll;
        ll = next;
        if change.abs() <= constraints.tolerance * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
    }
    let fit = MixtureFit {
        components: comps,
        log_likelihood: ll,
        initial_log_likelihood: initial,
        iterations,
        sample_size: n,
    };
    if !converged {
        return Err(Error::MixtureConvergence(Box::new(fit)));
    }
    Ok(fit)
}

/// Mixture weights as the probabilities of being left behind 0..=C times.
pub fn to_leftbehind_vector(fit: &MixtureFit) -> Vec<f64> {
    let w: Vec<f64> = fit.components.iter().map(|c| c.weight.max(0.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}
