//! Latent-class path choice model with a per-passenger panel effect.
//!
//! A passenger belongs to class k with a multinomial-logit probability driven
//! by their characteristics. Within a class, each trip's path is chosen by a
//! logit over path attributes plus a persistent normal random effect alpha.
//! Given class and alpha, trips are independent, so a passenger's likelihood
//! is a class mixture of a one-dimensional integral (midpoint rule over alpha)
//! of a product of per-trip sums `sum_m density(t_out | t_in, m) * pi_m`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transit::Seconds;

/// Floor applied to passenger likelihoods that evaluate to exactly zero.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Name of the derived attribute holding `log PS_m`.
pub const LOG_PATH_SIZE: &str = "log_ps";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfcTrip {
    pub passenger_id: String,
    pub trip_index: u32,
    pub origin: String,
    pub destination: String,
    pub tap_in: Seconds,
    pub tap_out: Seconds,
}

impl AfcTrip {
    pub fn validate(&self) -> Result<()> {
        if self.tap_out <= self.tap_in {
            return Err(Error::Validation(format!(
                "trip {}#{} taps out at {} before tapping in at {}",
                self.passenger_id, self.trip_index, self.tap_out, self.tap_in
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassengerProfile {
    pub passenger_id: String,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lower: -3.0,
            upper: 3.0,
            step: 1.0,
        }
    }
}

/// Midpoints of equal-width intervals covering `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrationGrid {
    spec: GridSpec,
    points: Vec<f64>,
}

impl IntegrationGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec { lower, upper, step } = spec;
        if !(lower < upper && step > 0.0 && lower.is_finite() && upper.is_finite()) {
            return Err(Error::Config(format!("invalid integration grid [{lower}, {upper}] step {step}")));
        }
        let n = ((upper - lower) / step).round();
        if ((upper - lower) / step - n).abs() > 1e-9 || n < 1.0 {
            return Err(Error::Config(format!(
                "step {step} does not divide [{lower}, {upper}] into whole intervals"
            )));
        }
        let points = (0..n as usize).map(|i| lower + (i as f64 + 0.5) * step).collect();
        Ok(IntegrationGrid { spec, points })
    }

    /// Single node at zero with unit weight: no panel effect.
    pub fn degenerate() -> Self {
        IntegrationGrid {
            spec: GridSpec {
                lower: -0.5,
                upper: 0.5,
                step: 1.0,
            },
            points: vec![0.0],
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn step(&self) -> f64 {
        self.spec.step
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// Log node weights `f(alpha; 0, sigma) * step`, rescaled to sum to one.
    pub fn log_weights(&self, sigma: f64) -> Vec<f64> {
        let raw: Vec<f64> = self.points.iter().map(|a| -0.5 * (a / sigma) * (a / sigma)).collect();
        let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = raw.into_iter().map(|w| w - m).collect();
        let norm = logsumexp(&shifted);
        shifted.into_iter().map(|w| w - norm).collect()
    }

    pub fn weights(&self, sigma: f64) -> Vec<f64> {
        self.log_weights(sigma).into_iter().map(f64::exp).collect()
    }
}

/// Which alternatives carry the passenger's random effect in their utility.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelAttachment {
    /// Every path of the choice set (alpha then cancels within the logit).
    #[default]
    AllPaths,
    /// Only paths flagged `panel` in the path set.
    Designated,
}

/// Canonical class labelling: classes sorted by one class-specific coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelOrder {
    pub attribute: String,
    #[serde(default)]
    pub descending: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub classes: Vec<String>,
    pub base_class: String,
    /// Path attributes entering utility; `log_ps` is derived from the choice set.
    pub attributes: Vec<String>,
    /// Attributes whose coefficient is common to every class.
    #[serde(default)]
    pub shared_attributes: Vec<String>,
    #[serde(default)]
    pub membership_features: Vec<String>,
    /// Adds a class-specific constant to the membership logit.
    #[serde(default)]
    pub membership_constant: bool,
    #[serde(default = "default_true")]
    pub shared_sigma: bool,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub panel: PanelAttachment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_order: Option<LabelOrder>,
}

impl ModelSpec {
    /// The one-class model with the same attributes and panel structure.
    pub fn single_class(&self) -> ModelSpec {
        ModelSpec {
            classes: vec!["all".into()],
            base_class: "all".into(),
            membership_features: Vec::new(),
            membership_constant: false,
            label_order: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    Beta { attribute: usize, classes: Vec<usize> },
    /// `feature = None` is the membership constant.
    Membership { class: usize, feature: Option<usize> },
    /// Stored as log(sigma).
    LogSigma { classes: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
}

/// Mapping between the free-parameter vector and per-class coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    params: Vec<ParamInfo>,
    n_classes: usize,
    n_attributes: usize,
    base: usize,
    has_constant: bool,
    n_features: usize,
    beta_index: Vec<Vec<usize>>,
    theta_index: Vec<Vec<usize>>,
    sigma_index: Vec<usize>,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let k = spec.classes.len();
        if k == 0 {
            return Err(Error::Config("model needs at least one class".into()));
        }
        let unique: BTreeSet<&String> = spec.classes.iter().collect();
        if unique.len() != k {
            return Err(Error::Config("duplicate class names".into()));
        }
        let base = spec
            .classes
            .iter()
            .position(|c| *c == spec.base_class)
            .ok_or_else(|| Error::Config(format!("base class {} is not a declared class", spec.base_class)))?;
        if spec.attributes.is_empty() {
            return Err(Error::Config("model needs at least one path attribute".into()));
        }
        let attrs: BTreeSet<&String> = spec.attributes.iter().collect();
        if attrs.len() != spec.attributes.len() {
            return Err(Error::Config("duplicate attribute names".into()));
        }
        for s in &spec.shared_attributes {
            if !attrs.contains(s) {
                return Err(Error::Config(format!("shared attribute {s} is not a model attribute")));
            }
        }
        let mut params = Vec::new();
        let mut beta_index = vec![vec![usize::MAX; spec.attributes.len()]; k];
        for (a, name) in spec.attributes.iter().enumerate() {
            if k == 1 || spec.shared_attributes.contains(name) {
                for row in beta_index.iter_mut() {
                    row[a] = params.len();
                }
                params.push(ParamInfo {
                    name: format!("beta[{name}]"),
                    kind: ParamKind::Beta {
                        attribute: a,
                        classes: (0..k).collect(),
                    },
                });
            } else {
                for (c, cname) in spec.classes.iter().enumerate() {
                    beta_index[c][a] = params.len();
                    params.push(ParamInfo {
                        name: format!("beta[{cname}:{name}]"),
                        kind: ParamKind::Beta {
                            attribute: a,
                            classes: vec![c],
                        },
                    });
                }
            }
        }
        let mut sigma_index = vec![usize::MAX; k];
        if spec.shared_sigma || k == 1 {
            sigma_index.iter_mut().for_each(|s| *s = params.len());
            params.push(ParamInfo {
                name: "sigma".into(),
                kind: ParamKind::LogSigma {
                    classes: (0..k).collect(),
                },
            });
        } else {
            for (c, cname) in spec.classes.iter().enumerate() {
                sigma_index[c] = params.len();
                params.push(ParamInfo {
                    name: format!("sigma[{cname}]"),
                    kind: ParamKind::LogSigma { classes: vec![c] },
                });
            }
        }
        let mut theta_index = vec![Vec::new(); k];
        if k > 1 {
            for (c, cname) in spec.classes.iter().enumerate() {
                if c == base {
                    continue;
                }
                if spec.membership_constant {
                    theta_index[c].push(params.len());
                    params.push(ParamInfo {
                        name: format!("theta[{cname}:const]"),
                        kind: ParamKind::Membership { class: c, feature: None },
                    });
                }
                for (f, fname) in spec.membership_features.iter().enumerate() {
                    theta_index[c].push(params.len());
                    params.push(ParamInfo {
                        name: format!("theta[{cname}:{fname}]"),
                        kind: ParamKind::Membership {
                            class: c,
                            feature: Some(f),
                        },
                    });
                }
            }
        }
        Ok(ParamLayout {
            params,
            n_classes: k,
            n_attributes: spec.attributes.len(),
            base,
            has_constant: spec.membership_constant,
            n_features: spec.membership_features.len(),
            beta_index,
            theta_index,
            sigma_index,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn base_class(&self) -> usize {
        self.base
    }

    pub fn is_log_sigma(&self, i: usize) -> bool {
        matches!(self.params[i].kind, ParamKind::LogSigma { .. })
    }

    /// Free parameters on the natural scale (sigma rather than log sigma).
    pub fn to_natural(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| if self.is_log_sigma(i) { v.exp() } else { *v })
            .collect()
    }

    pub fn to_raw(&self, natural: &[f64]) -> Result<Vec<f64>> {
        natural
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if self.is_log_sigma(i) {
                    if *v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(Error::Domain(format!("{} must be positive, got {v}", self.params[i].name)))
                    }
                } else {
                    Ok(*v)
                }
            })
            .collect()
    }

    /// Coefficients `[class][attribute]`.
    pub fn betas(&self, raw: &[f64]) -> Vec<Vec<f64>> {
        self.beta_index
            .iter()
            .map(|row| row.iter().map(|&i| raw[i]).collect())
            .collect()
    }

    /// Membership coefficients per class over `[const?, features...]`; zeros for the base class.
    pub fn thetas(&self, raw: &[f64]) -> Vec<Vec<f64>> {
        let width = self.n_features + usize::from(self.has_constant);
        (0..self.n_classes)
            .map(|c| {
                if self.theta_index[c].is_empty() {
                    vec![0.0; width]
                } else {
                    self.theta_index[c].iter().map(|&i| raw[i]).collect()
                }
            })
            .collect()
    }

    pub fn sigmas(&self, raw: &[f64]) -> Vec<f64> {
        self.sigma_index.iter().map(|&i| raw[i].exp()).collect()
    }

    fn membership_design(&self, features: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_features + 1);
        if self.has_constant {
            x.push(1.0);
        }
        x.extend_from_slice(features);
        x
    }
}

/// A named parameter vector on the natural scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// One trip as seen by the choice model: per-path tap-out densities,
/// attributes (in model order) and random-effect attachment flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripObservation {
    pub densities: Vec<f64>,
    pub attributes: Vec<Vec<f64>>,
    pub panel: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassengerObservations {
    pub passenger_id: String,
    /// Membership characteristics in model order, without the constant.
    pub features: Vec<f64>,
    pub trips: Vec<TripObservation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimationData {
    pub passengers: Vec<PassengerObservations>,
}

impl EstimationData {
    pub fn n_trips(&self) -> usize {
        self.passengers.iter().map(|p| p.trips.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Passengers whose likelihood was exactly zero and took the floor.
    pub zero_passengers: Vec<String>,
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `scores` (in place), subtracting the maximum first.
fn softmax_in_place(scores: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in scores.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in scores.iter_mut() {
        *v /= s;
    }
}

#[derive(Clone, Debug)]
pub struct LatentClassModel {
    spec: ModelSpec,
    layout: ParamLayout,
    grid: IntegrationGrid,
}

struct PassengerEval {
    log_lik: Option<f64>,
    gradient: Option<Vec<f64>>,
}

impl LatentClassModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let layout = ParamLayout::new(&spec)?;
        let grid = IntegrationGrid::new(spec.grid)?;
        if let Some(order) = &spec.label_order {
            if !spec.attributes.contains(&order.attribute) {
                return Err(Error::Config(format!(
                    "label order attribute {} is not a model attribute",
                    order.attribute
                )));
            }
        }
        Ok(LatentClassModel { spec, layout, grid })
    }

    pub fn with_grid(mut self, grid: IntegrationGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn grid(&self) -> &IntegrationGrid {
        &self.grid
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    fn check_params(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.layout.len() {
            return Err(Error::Domain(format!(
                "parameter vector has {} entries, model expects {}",
                raw.len(),
                self.layout.len()
            )));
        }
        Ok(())
    }

    fn check_passenger(&self, p: &PassengerObservations) -> Result<()> {
        if p.features.len() != self.spec.membership_features.len() && self.layout.n_classes > 1 {
            return Err(Error::Domain(format!(
                "passenger {} has {} characteristics, model expects {}",
                p.passenger_id,
                p.features.len(),
                self.spec.membership_features.len()
            )));
        }
        for t in &p.trips {
            let n = t.densities.len();
            if n == 0 || t.attributes.len() != n || t.panel.len() != n {
                return Err(Error::Domain(format!("passenger {} has a malformed trip", p.passenger_id)));
            }
            if t.attributes.iter().any(|a| a.len() != self.layout.n_attributes) {
                return Err(Error::Domain(format!(
                    "passenger {}: attribute vectors do not match the model",
                    p.passenger_id
                )));
            }
        }
        Ok(())
    }

    pub fn validate_data(&self, data: &EstimationData) -> Result<()> {
        data.passengers.iter().try_for_each(|p| self.check_passenger(p))
    }

    /// Class membership probabilities for one passenger.
    pub fn class_probabilities(&self, features: &[f64], raw: &[f64]) -> Result<Vec<f64>> {
        self.check_params(raw)?;
        if self.layout.n_classes > 1 && features.len() != self.spec.membership_features.len() {
            return Err(Error::Domain(format!(
                "{} characteristics given, model expects {}",
                features.len(),
                self.spec.membership_features.len()
            )));
        }
        Ok(self.class_probs_unchecked(features, raw))
    }

    fn class_probs_unchecked(&self, features: &[f64], raw: &[f64]) -> Vec<f64> {
        if self.layout.n_classes == 1 {
            return vec![1.0];
        }
        let x = self.layout.membership_design(features);
        let mut scores: Vec<f64> = self
            .layout
            .thetas(raw)
            .iter()
            .map(|th| th.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect();
        softmax_in_place(&mut scores);
        scores
    }

    fn attaches(&self, flag: bool) -> bool {
        match self.spec.panel {
            PanelAttachment::AllPaths => true,
            PanelAttachment::Designated => flag,
        }
    }

    /// Path choice probabilities for one trip in class `class` given alpha.
    pub fn choice_probabilities(&self, trip: &TripObservation, class: usize, alpha: f64, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_params(raw)?;
        if class >= self.layout.n_classes {
            return Err(Error::Domain(format!("class index {class} out of range")));
        }
        let beta = &self.layout.betas(raw)[class];
        let mut u: Vec<f64> = trip
            .attributes
            .iter()
            .zip(&trip.panel)
            .map(|(z, &flag)| {
                let v: f64 = beta.iter().zip(z).map(|(b, x)| b * x).sum();
                v + if self.attaches(flag) { alpha } else { 0.0 }
            })
            .collect();
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite path utility".into()));
        }
        softmax_in_place(&mut u);
        Ok(u)
    }

    /// `prod_n sum_m density_nm * pi_nm` for one class and alpha.
    pub fn trip_record_likelihood(
        &self,
        passenger: &PassengerObservations,
        class: usize,
        alpha: f64,
        raw: &[f64],
    ) -> Result<f64> {
        let mut prod = 1.0;
        for trip in &passenger.trips {
            let pi = self.choice_probabilities(trip, class, alpha, raw)?;
            prod *= trip.densities.iter().zip(&pi).map(|(d, p)| d * p).sum::<f64>();
        }
        Ok(prod)
    }

    /// Passenger likelihood in linear space (may underflow for long records).
    pub fn passenger_likelihood(&self, passenger: &PassengerObservations, raw: &[f64]) -> Result<f64> {
        self.check_params(raw)?;
        self.check_passenger(passenger)?;
        let probs = self.class_probs_unchecked(&passenger.features, raw);
        let sigmas = self.layout.sigmas(raw);
        let mut total = 0.0;
        for (k, pk) in probs.iter().enumerate() {
            let w = self.grid.weights(sigmas[k]);
            for (alpha, wa) in self.grid.points().iter().zip(&w) {
                total += pk * wa * self.trip_record_likelihood(passenger, k, *alpha, raw)?;
            }
        }
        Ok(total)
    }

    /// Log-likelihood of one passenger, `None` when the likelihood is exactly zero.
    pub fn passenger_log_likelihood(&self, passenger: &PassengerObservations, raw: &[f64]) -> Result<Option<f64>> {
        self.check_params(raw)?;
        self.check_passenger(passenger)?;
        Ok(self.eval_passenger(passenger, raw, false).log_lik)
    }

    fn eval_passenger(&self, p: &PassengerObservations, raw: &[f64], want_grad: bool) -> PassengerEval {
        let layout = &self.layout;
        let k_classes = layout.n_classes;
        let n_attr = layout.n_attributes;
        let probs = self.class_probs_unchecked(&p.features, raw);
        let betas = layout.betas(raw);
        let sigmas = layout.sigmas(raw);
        let points = self.grid.points();
        let n_alpha = points.len();

        // log-term per (class, alpha) and the d(log-term)/d(beta_k) vectors.
        let mut terms = vec![f64::NEG_INFINITY; k_classes * n_alpha];
        let mut dbeta = if want_grad {
            vec![0.0; k_classes * n_alpha * n_attr]
        } else {
            Vec::new()
        };
        let mut pi = Vec::new();
        for k in 0..k_classes {
            if probs[k] == 0.0 {
                continue;
            }
            let log_pk = probs[k].ln();
            let log_w = self.grid.log_weights(sigmas[k]);
            let base_util: Vec<Vec<f64>> = p
                .trips
                .iter()
                .map(|t| {
                    t.attributes
                        .iter()
                        .map(|z| betas[k].iter().zip(z).map(|(b, x)| b * x).sum())
                        .collect()
                })
                .collect();
            for (ai, &alpha) in points.iter().enumerate() {
                let idx = k * n_alpha + ai;
                let mut lt = log_pk + log_w[ai];
                for (t, util) in p.trips.iter().zip(&base_util) {
                    pi.clear();
                    pi.extend(
                        util.iter()
                            .zip(&t.panel)
                            .map(|(v, &flag)| v + if self.attaches(flag) { alpha } else { 0.0 }),
                    );
                    softmax_in_place(&mut pi);
                    let s: f64 = t.densities.iter().zip(&pi).map(|(d, q)| d * q).sum();
                    if !(s > 0.0) {
                        lt = f64::NEG_INFINITY;
                        break;
                    }
                    lt += s.ln();
                    if want_grad {
                        // d log s / d beta = sum_m d_m pi_m (z_m - zbar) / s
                        let g = &mut dbeta[idx * n_attr..(idx + 1) * n_attr];
                        for a in 0..n_attr {
                            let zbar: f64 = pi.iter().zip(&t.attributes).map(|(q, z)| q * z[a]).sum();
                            let num: f64 = t
                                .densities
                                .iter()
                                .zip(&pi)
                                .zip(&t.attributes)
                                .map(|((d, q), z)| d * q * (z[a] - zbar))
                                .sum();
                            g[a] += num / s;
                        }
                    }
                }
                terms[idx] = lt;
            }
        }
        let lse = logsumexp(&terms);
        if lse == f64::NEG_INFINITY {
            return PassengerEval {
                log_lik: None,
                gradient: want_grad.then(|| vec![0.0; layout.len()]),
            };
        }
        if !want_grad {
            return PassengerEval {
                log_lik: Some(lse),
                gradient: None,
            };
        }

        let mut grad = vec![0.0; layout.len()];
        let mut class_resp = vec![0.0; k_classes];
        for k in 0..k_classes {
            let s2 = sigmas[k] * sigmas[k];
            let mut d_logsigma = 0.0;
            for (ai, alpha) in points.iter().enumerate() {
                let idx = k * n_alpha + ai;
                if terms[idx] == f64::NEG_INFINITY {
                    continue;
                }
                let r = (terms[idx] - lse).exp();
                class_resp[k] += r;
                d_logsigma += r * alpha * alpha / s2;
                for a in 0..n_attr {
                    grad[layout.beta_index[k][a]] += r * dbeta[idx * n_attr + a];
                }
            }
            // Normalised weights: d log w_j / d log sigma = alpha_j^2/sigma^2 - E_w[alpha^2]/sigma^2.
            let mean_sq: f64 = self
                .grid
                .weights(sigmas[k])
                .iter()
                .zip(points)
                .map(|(w, a)| w * a * a / s2)
                .sum();
            grad[layout.sigma_index[k]] += d_logsigma - class_resp[k] * mean_sq;
        }
        if k_classes > 1 {
            let x = layout.membership_design(&p.features);
            for k in 0..k_classes {
                for (f, &pi_idx) in layout.theta_index[k].iter().enumerate() {
                    grad[pi_idx] += (class_resp[k] - probs[k]) * x[f];
                }
            }
        }
        PassengerEval {
            log_lik: Some(lse),
            gradient: Some(grad),
        }
    }

    /// Sum of passenger log-likelihoods. Zero likelihoods contribute
    /// `log(LIKELIHOOD_FLOOR)` and are reported.
    pub fn log_likelihood(&self, data: &EstimationData, raw: &[f64]) -> Result<LogLikelihood> {
        self.check_params(raw)?;
        let evals: Vec<Option<f64>> = data
            .passengers
            .par_iter()
            .map(|p| self.eval_passenger(p, raw, false).log_lik)
            .collect();
        let mut value = 0.0;
        let mut zero = Vec::new();
        for (p, e) in data.passengers.iter().zip(evals) {
            match e {
                Some(v) => value += v,
                None => {
                    value += LIKELIHOOD_FLOOR.ln();
                    zero.push(p.passenger_id.clone());
                }
            }
        }
        Ok(LogLikelihood {
            value,
            zero_passengers: zero,
        })
    }

    /// Log-likelihood and its analytic gradient with respect to the free
    /// parameters (log sigma for standard deviations).
    pub fn log_likelihood_with_gradient(&self, data: &EstimationData, raw: &[f64]) -> Result<(LogLikelihood, Vec<f64>)> {
        self.check_params(raw)?;
        let evals: Vec<PassengerEval> = data
            .passengers
            .par_iter()
            .map(|p| self.eval_passenger(p, raw, true))
            .collect();
        let mut value = 0.0;
        let mut zero = Vec::new();
        let mut grad = vec![0.0; self.layout.len()];
        for (p, e) in data.passengers.iter().zip(evals) {
            match e.log_lik {
                Some(v) => {
                    value += v;
                    for (g, d) in grad.iter_mut().zip(e.gradient.expect("gradient requested")) {
                        *g += d;
                    }
                }
                None => {
                    value += LIKELIHOOD_FLOOR.ln();
                    zero.push(p.passenger_id.clone());
                }
            }
        }
        Ok((
            LogLikelihood {
                value,
                zero_passengers: zero,
            },
            grad,
        ))
    }

    /// Relabels classes so the label-order coefficient is sorted, keeping the
    /// likelihood unchanged. Returns the input when no order is configured or
    /// the layout shares coefficients across a strict subset of classes.
    pub fn canonicalize(&self, raw: &[f64]) -> Vec<f64> {
        let Some(order) = &self.spec.label_order else {
            return raw.to_vec();
        };
        let layout = &self.layout;
        let k = layout.n_classes;
        if k < 2 {
            return raw.to_vec();
        }
        let partial_sharing = layout.params.iter().any(|p| match &p.kind {
            ParamKind::Beta { classes, .. } | ParamKind::LogSigma { classes } => classes.len() != 1 && classes.len() != k,
            ParamKind::Membership { .. } => false,
        });
        if partial_sharing {
            return raw.to_vec();
        }
        let attr = self
            .spec
            .attributes
            .iter()
            .position(|a| *a == order.attribute)
            .expect("validated in new");
        let betas = layout.betas(raw);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.sort_by(|&a, &b| {
            let (x, y) = (betas[a][attr], betas[b][attr]);
            let o = x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal);
            if order.descending {
                o.reverse()
            } else {
                o
            }
        });
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return raw.to_vec();
        }
        let thetas = layout.thetas(raw);
        let sigmas_raw: Vec<f64> = layout.sigma_index.iter().map(|&i| raw[i]).collect();
        let new_base_theta = &thetas[perm[layout.base]];
        let mut out = raw.to_vec();
        for (c, &old) in perm.iter().enumerate() {
            for a in 0..layout.n_attributes {
                out[layout.beta_index[c][a]] = betas[old][a];
            }
            out[layout.sigma_index[c]] = sigmas_raw[old];
            for (f, &pi_idx) in layout.theta_index[c].iter().enumerate() {
                out[pi_idx] = thetas[old][f] - new_base_theta[f];
            }
        }
        out
    }
}
