#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use railchoice::latent::{
    EstimationData, GridSpec, LabelOrder, LatentClassModel, ModelSpec, PanelAttachment, PassengerObservations,
    TripObservation,
};
use railchoice::simulator::default_model_spec;

/// Three classes, class-specific sigmas, a membership constant and the panel
/// term on every path.
pub fn rich_spec() -> ModelSpec {
    ModelSpec {
        classes: vec!["a".into(), "b".into(), "c".into()],
        base_class: "b".into(),
        attributes: vec!["t".into(), "x".into(), "y".into()],
        shared_attributes: vec!["y".into()],
        membership_features: vec!["f".into()],
        membership_constant: true,
        shared_sigma: false,
        grid: GridSpec {
            lower: -2.0,
            upper: 2.0,
            step: 0.5,
        },
        panel: PanelAttachment::AllPaths,
        label_order: Some(LabelOrder {
            attribute: "t".into(),
            descending: false,
        }),
    }
}

pub fn oracle_specs() -> Vec<ModelSpec> {
    vec![default_model_spec(), default_model_spec().single_class(), rich_spec()]
}

/// Random passengers whose path-sequence count stays at or below `max_sequences`.
pub fn random_data(spec: &ModelSpec, passengers: usize, max_sequences: usize, rng: &mut ChaCha8Rng) -> EstimationData {
    let n_attr = spec.attributes.len();
    let passengers = (0..passengers)
        .map(|i| {
            let mut trips = Vec::new();
            let mut sequences = 1usize;
            let wanted = rng.random_range(1..=6);
            while trips.len() < wanted {
                let r = rng.random_range(1..=4usize);
                if sequences * r > max_sequences {
                    break;
                }
                sequences *= r;
                let densities = (0..r)
                    .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() * 0.02 })
                    .collect();
                let attributes = (0..r)
                    .map(|_| (0..n_attr).map(|_| rng.random_range(-3.0..3.0)).collect())
                    .collect();
                let panel = (0..r).map(|m| m == 0).collect();
                trips.push(TripObservation {
                    densities,
                    attributes,
                    panel,
                });
            }
            if trips.is_empty() {
                trips.push(TripObservation {
                    densities: vec![0.01],
                    attributes: vec![vec![0.5; n_attr]],
                    panel: vec![true],
                });
            }
            PassengerObservations {
                passenger_id: format!("q{i}"),
                features: (0..spec.membership_features.len()).map(|_| rng.random_range(-2.0..2.0)).collect(),
                trips,
            }
        })
        .collect();
    EstimationData { passengers }
}

pub fn random_raw(model: &LatentClassModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..model.n_params())
        .map(|i| {
            if model.layout().is_log_sigma(i) {
                rng.random_range(-1.2..1.0)
            } else {
                rng.random_range(-1.5..1.5)
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn by_name(model: &LatentClassModel, raw: &[f64], name: &str) -> f64 {
    let i = model.layout().index_of(name).unwrap_or_else(|| panic!("no parameter {name}"));
    raw[i]
}

/// Passenger likelihood by enumerating every path sequence, with the
/// parameters looked up by name.
pub fn brute_force_likelihood(model: &LatentClassModel, p: &PassengerObservations, raw: &[f64]) -> f64 {
    let spec = model.spec();
    let k = spec.classes.len();
    let beta = |class: &str, attr: &str| {
        if k == 1 || spec.shared_attributes.iter().any(|a| a == attr) {
            by_name(model, raw, &format!("beta[{attr}]"))
        } else {
            by_name(model, raw, &format!("beta[{class}:{attr}]"))
        }
    };
    let sigma = |class: &str| {
        if spec.shared_sigma {
            by_name(model, raw, "sigma").exp()
        } else {
            by_name(model, raw, &format!("sigma[{class}]")).exp()
        }
    };
    let scores: Vec<f64> = spec
        .classes
        .iter()
        .map(|c| {
            if k == 1 || *c == spec.base_class {
                return 0.0;
            }
            let mut s = 0.0;
            if spec.membership_constant {
                s += by_name(model, raw, &format!("theta[{c}:const]"));
            }
            for (f, x) in spec.membership_features.iter().zip(&p.features) {
                s += by_name(model, raw, &format!("theta[{c}:{f}]")) * x;
            }
            s
        })
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let points = model.grid().points();

    let mut total = 0.0;
    for (ci, class) in spec.classes.iter().enumerate() {
        let pk = scores[ci].exp() / z;
        let sd = sigma(class);
        let dens: Vec<f64> = points.iter().map(|a| (-a * a / (2.0 * sd * sd)).exp()).collect();
        let norm: f64 = dens.iter().sum();
        for (alpha, d) in points.iter().zip(&dens) {
            let w = d / norm;
            let probs: Vec<Vec<f64>> = p
                .trips
                .iter()
                .map(|t| {
                    let u: Vec<f64> = t
                        .attributes
                        .iter()
                        .zip(&t.panel)
                        .map(|(z, &flag)| {
                            let v: f64 = spec.attributes.iter().zip(z).map(|(a, x)| beta(class, a) * x).sum();
                            let attach = match spec.panel {
                                PanelAttachment::AllPaths => true,
                                PanelAttachment::Designated => flag,
                            };
                            v + if attach { *alpha } else { 0.0 }
                        })
                        .collect();
                    let s: f64 = u.iter().map(|v| v.exp()).sum();
                    u.iter().map(|v| v.exp() / s).collect()
                })
                .collect();
            let mut choice = vec![0usize; p.trips.len()];
            let mut seq_sum = 0.0;
            'seq: loop {
                let mut prod = 1.0;
                for (n, &m) in choice.iter().enumerate() {
                    prod *= p.trips[n].densities[m] * probs[n][m];
                }
                seq_sum += prod;
                for n in 0..choice.len() {
                    choice[n] += 1;
                    if choice[n] < p.trips[n].densities.len() {
                        continue 'seq;
                    }
                    choice[n] = 0;
                }
                break;
            }
            total += pk * w * seq_sum;
        }
    }
    total
}

/// Largest relative gap between the model's passenger likelihoods and the
/// enumeration over `vectors` random parameter draws.
pub fn oracle_gap(seed: u64, vectors: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for spec in oracle_specs() {
        let model = LatentClassModel::new(spec.clone()).unwrap();
        let data = random_data(&spec, 12, 1024, &mut r);
        for _ in 0..vectors {
            let raw = random_raw(&model, &mut r);
            for p in &data.passengers {
                let exact = brute_force_likelihood(&model, p, &raw);
                let got = model
                    .passenger_log_likelihood(p, &raw)
                    .unwrap()
                    .map_or(0.0, f64::exp);
                let gap = if exact == 0.0 { got.abs() } else { ((got - exact) / exact).abs() };
                worst = worst.max(gap);
            }
        }
    }
    worst
}

/// Quartic test functions with their exact Hessians.
pub fn polynomial_cases() -> Vec<(fn(&[f64]) -> f64, fn(&[f64]) -> Vec<Vec<f64>>, Vec<f64>)> {
    fn f1(x: &[f64]) -> f64 {
        let (a, b, c) = (x[0], x[1], x[2]);
        a.powi(4) - 2.0 * a * a * b + 3.0 * b * b * c * c - a * b * c + 0.5 * c.powi(3) + 4.0 * a - b
    }
    fn h1(x: &[f64]) -> Vec<Vec<f64>> {
        let (a, b, c) = (x[0], x[1], x[2]);
        vec![
            vec![12.0 * a * a - 4.0 * b, -4.0 * a - c, -b],
            vec![-4.0 * a - c, 6.0 * c * c, 12.0 * b * c - a],
            vec![-b, 12.0 * b * c - a, 6.0 * b * b + 3.0 * c],
        ]
    }
    fn f2(x: &[f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        -(a - 1.0).powi(2) - 3.0 * (b + 0.5).powi(2) + 0.7 * a * b - 0.1 * a.powi(3) * b
    }
    fn h2(x: &[f64]) -> Vec<Vec<f64>> {
        let (a, b) = (x[0], x[1]);
        vec![
            vec![-2.0 - 0.6 * a * b, 0.7 - 0.3 * a * a],
            vec![0.7 - 0.3 * a * a, -6.0],
        ]
    }
    vec![(f1, h1, vec![0.8, -1.3, 0.6]), (f1, h1, vec![-1.7, 0.4, 2.1]), (f2, h2, vec![1.4, -0.9])]
}

/// Largest absolute error of the stencil Hessian over the polynomial cases.
pub fn polynomial_hessian_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (f, h, x) in polynomial_cases() {
        let got = railchoice::estimator::hessian::numerical_hessian(f, &x, &vec![1e-3; x.len()]).unwrap();
        let exact = h(&x);
        for i in 0..x.len() {
            for j in 0..x.len() {
                worst = worst.max((got[(i, j)] - exact[i][j]).abs());
            }
        }
    }
    worst
}

/// Errors of the stencil's second derivative of `exp(sin x)` at 0.3 for
/// steps 0.4, 0.2, 0.1, 0.05.
pub fn diagonal_errors() -> Vec<f64> {
    let f = |x: &[f64]| x[0].sin().exp();
    let x0 = 0.3f64;
    let exact = x0.sin().exp() * (x0.cos().powi(2) - x0.sin());
    [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|h| {
            let got = railchoice::estimator::hessian::numerical_hessian(f, &[x0], &[*h]).unwrap();
            (got[(0, 0)] - exact).abs()
        })
        .collect()
}
