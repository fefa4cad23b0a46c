//! Maximum-likelihood estimation of the latent-class model.

pub mod bfgs;
pub mod hessian;
pub mod inference;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{EstimationData, LatentClassModel};

pub use bfgs::{BfgsSettings, BfgsStatus};
pub use hessian::{default_steps, numerical_hessian};
pub use inference::{inference, likelihood_ratio_test, HessianDiagnostics, Inference, LikelihoodRatioTest};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    CentralDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub gradient: GradientMode,
    /// Step for central-difference gradients.
    pub fd_step: f64,
    /// Half-width of the uniform box for random starting values.
    pub init_range: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            gradient_tolerance: 1e-6,
            max_iterations: 500,
            gradient: GradientMode::Analytic,
            fd_step: 1e-5,
            init_range: 5.0,
        }
    }
}

/// Optimiser output before inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Free parameters on the estimation scale (log sigma), canonically labelled.
    pub raw: Vec<f64>,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub status: String,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub names: Vec<String>,
    /// Estimates on the natural scale (sigma, not log sigma).
    pub estimates: Vec<f64>,
    pub raw: Vec<f64>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub status: String,
    pub gradient_norm: f64,
    pub std_errors: Vec<Option<f64>>,
    pub t_values: Vec<Option<f64>>,
    pub hessian: HessianDiagnostics,
    pub zero_likelihood_passengers: usize,
}

impl EstimationResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }
}

/// All coefficients zero and sigma = 1.
pub fn null_parameters(model: &LatentClassModel) -> Vec<f64> {
    vec![0.0; model.n_params()]
}

/// Uniform draw on `[-range, range]`; standard deviations take the absolute
/// value floored at 0.25.
pub fn random_start<R: Rng + ?Sized>(model: &LatentClassModel, range: f64, rng: &mut R) -> Vec<f64> {
    let layout = model.layout();
    (0..layout.len())
        .map(|i| {
            let u = rng.random_range(-range..=range);
            if layout.is_log_sigma(i) {
                u.abs().max(0.25).ln()
            } else {
                u
            }
        })
        .collect()
}

fn objective_value(model: &LatentClassModel, data: &EstimationData, raw: &[f64]) -> Option<f64> {
    model.log_likelihood(data, raw).ok().map(|l| l.value).filter(|v| v.is_finite())
}

fn negated_objective<'a>(
    model: &'a LatentClassModel,
    data: &'a EstimationData,
    settings: &'a OptimizerSettings,
) -> impl Fn(&[f64]) -> Option<(f64, Vec<f64>)> + 'a {
    move |x: &[f64]| match settings.gradient {
        GradientMode::Analytic => {
            let (ll, g) = model.log_likelihood_with_gradient(data, x).ok()?;
            ll.value
                .is_finite()
                .then(|| (-ll.value, g.into_iter().map(|v| -v).collect()))
        }
        GradientMode::CentralDifference => {
            let f = objective_value(model, data, x)?;
            let mut g = Vec::with_capacity(x.len());
            let mut p = x.to_vec();
            for i in 0..x.len() {
                let h = settings.fd_step * x[i].abs().max(1.0);
                p[i] = x[i] + h;
                let up = objective_value(model, data, &p)?;
                p[i] = x[i] - h;
                let down = objective_value(model, data, &p)?;
                p[i] = x[i];
                g.push(-(up - down) / (2.0 * h));
            }
            Some((-f, g))
        }
    }
}

/// Runs BFGS on the negative log-likelihood from `init` (estimation scale).
pub fn fit(model: &LatentClassModel, data: &EstimationData, init: &[f64], settings: &OptimizerSettings) -> Result<Fit> {
    model.validate_data(data)?;
    if init.len() != model.n_params() || init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Initialization(format!(
            "initial vector must have {} finite entries",
            model.n_params()
        )));
    }
    let initial = model.log_likelihood(data, init)?.value;
    if !initial.is_finite() {
        return Err(Error::Initialization("log-likelihood is not finite at the initial values".into()));
    }
    let bfgs_settings = BfgsSettings {
        gradient_tolerance: settings.gradient_tolerance,
        max_iterations: settings.max_iterations,
        ..Default::default()
    };
    let objective = negated_objective(model, data, settings);
    let out = bfgs::minimize(&objective, init, &bfgs_settings)
        .ok_or_else(|| Error::Initialization("objective undefined at the initial values".into()))?;
    let raw = model.canonicalize(&out.x);
    let status = match out.status {
        BfgsStatus::Converged => "converged",
        BfgsStatus::MaxIterations => "iteration limit reached",
        BfgsStatus::LineSearchFailed => "line search failed",
    };
    Ok(Fit {
        raw,
        log_likelihood: -out.value,
        initial_log_likelihood: initial,
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: out.converged(),
        status: status.to_string(),
        gradient_norm: out.gradient_norm(),
    })
}

/// Log-likelihood Hessian and inference at `raw`.
pub fn infer(model: &LatentClassModel, data: &EstimationData, raw: &[f64]) -> Result<(nalgebra::DMatrix<f64>, Inference)> {
    let f = |x: &[f64]| objective_value(model, data, x).unwrap_or(f64::NAN);
    let h = numerical_hessian(f, raw, &default_steps(raw))?;
    let log_scale: Vec<bool> = (0..raw.len()).map(|i| model.layout().is_log_sigma(i)).collect();
    let inf = inference(&h, raw, &log_scale)?;
    Ok((h, inf))
}

/// Hessian-based inference and the null log-likelihood around a finished fit.
pub fn summarize(model: &LatentClassModel, data: &EstimationData, f: Fit) -> Result<EstimationResult> {
    let (_, inf) = infer(model, data, &f.raw)?;
    let ll = model.log_likelihood(data, &f.raw)?;
    let null = model.log_likelihood(data, &null_parameters(model))?.value;
    Ok(EstimationResult {
        names: model.layout().names(),
        estimates: model.layout().to_natural(&f.raw),
        raw: f.raw,
        log_likelihood: ll.value,
        null_log_likelihood: null,
        iterations: f.iterations,
        evaluations: f.evaluations,
        converged: f.converged,
        status: f.status,
        gradient_norm: f.gradient_norm,
        std_errors: inf.std_errors,
        t_values: inf.t_values,
        hessian: inf.diagnostics,
        zero_likelihood_passengers: ll.zero_passengers.len(),
    })
}

/// Fit, Hessian-based inference and the null log-likelihood.
pub fn maximize(
    model: &LatentClassModel,
    data: &EstimationData,
    init: &[f64],
    settings: &OptimizerSettings,
) -> Result<EstimationResult> {
    summarize(model, data, fit(model, data, init, settings)?)
}

/// Largest absolute difference of any parameter between any two fits.
pub fn max_pairwise_spread(points: &[Vec<f64>]) -> f64 {
    let mut spread: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            for (x, y) in a.iter().zip(b) {
                spread = spread.max((x - y).abs());
            }
        }
    }
    spread
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{GridSpec, ModelSpec, PanelAttachment, PassengerObservations, TripObservation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logit_data(n: usize, beta: f64) -> (LatentClassModel, EstimationData) {
        let spec = ModelSpec {
            classes: vec!["all".into()],
            base_class: "all".into(),
            attributes: vec!["x".into()],
            shared_attributes: vec![],
            membership_features: vec![],
            membership_constant: false,
            shared_sigma: true,
            grid: GridSpec::default(),
            panel: PanelAttachment::AllPaths,
            label_order: None,
        };
        let model = LatentClassModel::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let passengers = (0..n)
            .map(|i| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let p0 = 1.0 / (1.0 + (-beta * a).exp());
                let chose0 = rng.random::<f64>() < p0;
                PassengerObservations {
                    passenger_id: format!("p{i}"),
                    features: vec![],
                    trips: vec![TripObservation {
                        densities: if chose0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                        attributes: vec![vec![a], vec![0.0]],
                        panel: vec![true, true],
                    }],
                }
            })
            .collect();
        (model, EstimationData { passengers })
    }

    #[test]
    fn binary_logit_recovery_and_gradient_modes_agree() {
        let (model, data) = logit_data(4000, 1.3);
        let a = fit(&model, &data, &[0.0, 0.0], &OptimizerSettings::default()).unwrap();
        let b = fit(
            &model,
            &data,
            &[0.0, 0.0],
            &OptimizerSettings {
                gradient: GradientMode::CentralDifference,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(a.converged, "{a:?}");
        assert!((a.raw[0] - 1.3).abs() < 0.15);
        assert!((a.raw[0] - b.raw[0]).abs() < 1e-5);
        assert!(a.log_likelihood >= a.initial_log_likelihood);
    }

    #[test]
    fn initialization_errors() {
        let (model, data) = logit_data(10, 1.0);
        assert!(matches!(
            fit(&model, &data, &[f64::NAN, 0.0], &OptimizerSettings::default()),
            Err(Error::Initialization(_))
        ));
        assert!(matches!(
            fit(&model, &data, &[0.0], &OptimizerSettings::default()),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn random_starts_respect_box() {
        let (model, _) = logit_data(1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = random_start(&model, 5.0, &mut rng);
            assert!((-5.0..=5.0).contains(&s[0]));
            assert!(s[1] >= 0.25f64.ln() - 1e-12 && s[1] <= 5f64.ln() + 1e-12);
        }
    }

    #[test]
    fn spread_of_identical_points_is_zero() {
        assert_eq!(max_pairwise_spread(&[vec![1.0, 2.0], vec![1.0, 2.0]]), 0.0);
        assert_eq!(max_pairwise_spread(&[vec![1.0, 2.0], vec![1.5, 1.0]]), 1.0);
    }
}
