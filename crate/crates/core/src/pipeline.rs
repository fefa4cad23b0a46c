//! End-to-end runs: data directories, cached tap-out densities, multi-start
//! estimation, model comparison and the sensitivity sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path as FsPath;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributes::AttributeTable;
use crate::dataset::{assemble, compute_densities, ProfileTable};
use crate::error::{Error, Result};
use crate::estimator::{
    fit, likelihood_ratio_test, max_pairwise_spread, maximize, random_start, summarize, EstimationResult,
    LikelihoodRatioTest, OptimizerSettings,
};
use crate::io;
use crate::latent::{AfcTrip, EstimationData, LatentClassModel, ModelSpec};
use crate::ptam::{LeftBehindProfile, Ptam};
use crate::simulator::SimulationOutput;
use crate::transit::{Network, PathSets, Timetable};
use crate::walktime::WalkModel;

pub const NETWORK_FILE: &str = "network.json";
pub const PATH_SETS_FILE: &str = "path_sets.json";
pub const TIMETABLE_FILE: &str = "timetable.csv";
pub const AFC_FILE: &str = "afc.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const LEFT_BEHIND_FILE: &str = "left_behind.csv";
pub const JOURNEYS_FILE: &str = "journeys.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Everything an analyst observes: network, candidate paths, train movements,
/// tap records, passenger characteristics and path attributes.
#[derive(Clone, Debug)]
pub struct Observations {
    pub network: Network,
    pub path_sets: PathSets,
    pub timetable: Timetable,
    pub trips: Vec<AfcTrip>,
    pub profiles: ProfileTable,
    pub attributes: AttributeTable,
}

/// Inputs of the passenger-to-train assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct PtamInputs {
    pub walk: WalkModel,
    pub left_behind: LeftBehindProfile,
}

impl Observations {
    pub fn from_simulation(out: &SimulationOutput) -> Self {
        Observations {
            network: out.system.network.clone(),
            path_sets: out.system.path_sets.clone(),
            timetable: out.timetable.clone(),
            trips: out.trips.clone(),
            profiles: out.profiles.clone(),
            attributes: out.attributes.clone(),
        }
    }

    pub fn save(&self, dir: &FsPath) -> Result<()> {
        io::write_network(&dir.join(NETWORK_FILE), &self.network)?;
        io::write_path_sets(&dir.join(PATH_SETS_FILE), &self.path_sets)?;
        io::write_timetable(&dir.join(TIMETABLE_FILE), &self.timetable)?;
        io::write_afc(&dir.join(AFC_FILE), &self.trips)?;
        io::write_profiles(&dir.join(PROFILES_FILE), &self.profiles)?;
        io::write_attributes(&dir.join(ATTRIBUTES_FILE), &self.attributes)
    }

    pub fn load(dir: &FsPath) -> Result<Self> {
        let network = io::read_network(&dir.join(NETWORK_FILE))?;
        let path_sets = io::read_path_sets(&dir.join(PATH_SETS_FILE), &network)?;
        Ok(Observations {
            timetable: io::read_timetable(&dir.join(TIMETABLE_FILE))?,
            trips: io::read_afc(&dir.join(AFC_FILE))?,
            profiles: io::read_profiles(&dir.join(PROFILES_FILE))?,
            attributes: io::read_attributes(&dir.join(ATTRIBUTES_FILE))?,
            network,
            path_sets,
        })
    }

    /// Walking geometry from the network file with the given left-behind profile.
    pub fn ptam_inputs(&self, left_behind: LeftBehindProfile) -> Result<PtamInputs> {
        let walk = self
            .network
            .walk
            .clone()
            .ok_or_else(|| Error::Config("network file carries no walking geometry".into()))?;
        Ok(PtamInputs { walk, left_behind })
    }

    pub fn assemble(&self, spec: &ModelSpec, densities: &[Vec<f64>]) -> Result<EstimationData> {
        assemble(spec, &self.trips, &self.profiles, &self.path_sets, &self.attributes, densities)
    }
}

fn feed<T: Serialize + ?Sized>(h: &mut Sha256, value: &T) {
    h.update(serde_json::to_vec(value).expect("serialisable input"));
    h.update([0u8]);
}

/// SHA-256 over every input the tap-out densities depend on.
pub fn density_key(obs: &Observations, ptam: &PtamInputs) -> String {
    let mut h = Sha256::new();
    feed(&mut h, "tapout-densities/1");
    feed(&mut h, &obs.trips);
    for cs in obs.path_sets.values() {
        feed(&mut h, &(&cs.origin, &cs.destination));
        for p in cs.paths() {
            feed(&mut h, &p.spec);
        }
    }
    for run in obs.timetable.runs() {
        feed(&mut h, run);
    }
    feed(&mut h, &ptam.walk);
    feed(&mut h, &ptam.left_behind.period_s());
    feed(&mut h, &ptam.left_behind.default_vector());
    feed(&mut h, &ptam.left_behind.entries());
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Tap-out density of every trip under every candidate path. With a cache
/// directory, results are stored under the input hash and reused.
pub fn densities(obs: &Observations, ptam: &PtamInputs, cache: Option<&FsPath>) -> Result<Vec<Vec<f64>>> {
    let compute = || {
        let p = Ptam::new(&obs.timetable, &ptam.walk, &ptam.left_behind);
        compute_densities(&obs.trips, &obs.path_sets, &p)
    };
    let Some(dir) = cache else {
        return compute();
    };
    let file = dir.join(format!("densities-{}.csv", density_key(obs, ptam)));
    if file.exists() {
        return io::read_densities(&file, &obs.trips, &obs.path_sets);
    }
    let d = compute()?;
    io::write_densities(&file, &obs.trips, &obs.path_sets, &d)?;
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    /// Random starting points; the best fit is reported.
    pub starts: usize,
    pub init_seed: u64,
    pub optimizer: OptimizerSettings,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            starts: 3,
            init_seed: 20240,
            optimizer: OptimizerSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    /// Starting values on the estimation scale.
    pub init: Vec<f64>,
    /// Final values on the natural scale.
    pub estimates: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStart {
    pub result: EstimationResult,
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
    /// Largest difference of any estimate between any two starts.
    pub spread: f64,
}

/// Starting point `index` of a sweep seeded with `seed`.
pub fn start_point(model: &LatentClassModel, seed: u64, index: usize, range: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    random_start(model, range, &mut rng)
}

/// Fits from `options.starts` uniform random starts and keeps the best.
pub fn estimate(spec: &ModelSpec, data: &EstimationData, options: &EstimateOptions) -> Result<MultiStart> {
    if options.starts == 0 {
        return Err(Error::Config("at least one starting point is required".into()));
    }
    let model = LatentClassModel::new(spec.clone())?;
    let mut fits = Vec::with_capacity(options.starts);
    for s in 0..options.starts {
        let init = start_point(&model, options.init_seed, s, options.optimizer.init_range);
        let f = fit(&model, data, &init, &options.optimizer)?;
        fits.push((init, f));
    }
    let best_start = (0..fits.len())
        .reduce(|b, i| if fits[i].1.log_likelihood > fits[b].1.log_likelihood { i } else { b })
        .expect("at least one start");
    let starts: Vec<StartOutcome> = fits
        .iter()
        .map(|(init, f)| StartOutcome {
            init: init.clone(),
            estimates: model.layout().to_natural(&f.raw),
            log_likelihood: f.log_likelihood,
            iterations: f.iterations,
            converged: f.converged,
        })
        .collect();
    let spread = max_pairwise_spread(&starts.iter().map(|s| s.estimates.clone()).collect::<Vec<_>>());
    let best = fits.swap_remove(best_start).1;
    Ok(MultiStart {
        result: summarize(&model, data, best)?,
        best_start,
        starts,
        spread,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub latent: MultiStart,
    pub baseline: MultiStart,
    pub lr_test: LikelihoodRatioTest,
}

/// The latent-class model against its single-class restriction.
pub fn compare(
    spec: &ModelSpec,
    obs: &Observations,
    densities: &[Vec<f64>],
    options: &EstimateOptions,
) -> Result<Comparison> {
    let latent = estimate(spec, &obs.assemble(spec, densities)?, options)?;
    let base_spec = spec.single_class();
    let baseline = estimate(&base_spec, &obs.assemble(&base_spec, densities)?, options)?;
    let df = latent.result.n_params().saturating_sub(baseline.result.n_params());
    let lr_test = likelihood_ratio_test(baseline.result.log_likelihood, latent.result.log_likelihood, df)?;
    Ok(Comparison {
        latent,
        baseline,
        lr_test,
    })
}

/// Relative error of every estimate against the generating values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub relative_error: Vec<f64>,
    /// Within 35% relative or 0.15 absolute, whichever is looser.
    pub within_band: Vec<bool>,
    pub mean_abs_relative_error: f64,
    pub max_abs_relative_error: f64,
}

pub fn recovery(result: &EstimationResult, truth: &BTreeMap<String, f64>) -> Result<Recovery> {
    let mut r = Recovery {
        names: result.names.clone(),
        truth: Vec::new(),
        relative_error: Vec::new(),
        within_band: Vec::new(),
        mean_abs_relative_error: 0.0,
        max_abs_relative_error: 0.0,
    };
    for (name, est) in result.names.iter().zip(&result.estimates) {
        let t = *truth
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no generating value for {name}")))?;
        let e = (est - t) / t;
        r.truth.push(t);
        r.relative_error.push(e);
        r.within_band.push((est - t).abs() <= (0.35 * t.abs()).max(0.15));
        r.mean_abs_relative_error += e.abs() / result.names.len() as f64;
        r.max_abs_relative_error = r.max_abs_relative_error.max(e.abs());
    }
    Ok(r)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.digits$}"))
}

/// Plain-text estimation table: estimate, relative error against the
/// generating values when given, and t-value, for the latent-class and the
/// baseline model, followed by goodness of fit.
pub fn format_table(latent: &EstimationResult, baseline: Option<&EstimationResult>, lr: Option<&LikelihoodRatioTest>, truth: Option<&BTreeMap<String, f64>>) -> String {
    let mut out = String::new();
    let mut columns = vec![("Latent class", latent)];
    if let Some(b) = baseline {
        columns.push(("Baseline", b));
    }
    let _ = write!(out, "{:<22}", "Parameter");
    if truth.is_some() {
        let _ = write!(out, " {:>9}", "Truth");
    }
    for (title, _) in &columns {
        let _ = write!(out, " | {:^29}", title);
    }
    out.push('\n');
    let _ = write!(out, "{:<22}", "");
    if truth.is_some() {
        let _ = write!(out, " {:>9}", "");
    }
    for _ in &columns {
        let _ = write!(out, " | {:>19} {:>9}", "Estimate (error)", "t-value");
    }
    out.push('\n');
    let mut names: Vec<&String> = latent.names.iter().collect();
    for (_, r) in &columns[1..] {
        names.extend(r.names.iter().filter(|n| !latent.names.contains(n)));
    }
    for name in names {
        let t = truth.and_then(|m| m.get(name)).copied();
        let _ = write!(out, "{name:<22}");
        if truth.is_some() {
            let _ = write!(out, " {:>9}", fmt_opt(t, 4));
        }
        for (_, r) in &columns {
            match r.names.iter().position(|n| n == name) {
                Some(i) => {
                    let est = r.estimates[i];
                    let err = t.map_or(String::new(), |t| format!(" ({:+.1}%)", 100.0 * (est - t) / t));
                    let _ = write!(out, " | {:>19} {:>9}", format!("{est:.4}{err}"), fmt_opt(r.t_values[i], 2));
                }
                None => {
                    let _ = write!(out, " | {:>19} {:>9}", "", "");
                }
            }
        }
        out.push('\n');
    }
    for (label, f) in [
        ("LL_0", Box::new(|r: &EstimationResult| r.null_log_likelihood) as Box<dyn Fn(&EstimationResult) -> f64>),
        ("LL*", Box::new(|r: &EstimationResult| r.log_likelihood)),
    ] {
        let _ = write!(out, "{label:<22}");
        if truth.is_some() {
            let _ = write!(out, " {:>9}", "");
        }
        for (_, r) in &columns {
            let _ = write!(out, " | {:>29.2}", f(r));
        }
        out.push('\n');
    }
    if let Some(lr) = lr {
        let _ = writeln!(
            out,
            "chi2 = {:.2} (df {}), p = {:.3e}",
            lr.statistic, lr.df, lr.p_value
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Speed,
    Crowding,
}

/// One perturbation of the assignment inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sweep: Sweep,
    pub label: String,
    /// Multipliers on the mean and standard deviation of walking speed.
    pub speed_factors: (f64, f64),
    /// Replacement vector for every crowded platform.
    pub left_behind: Option<Vec<f64>>,
}

impl Scenario {
    pub fn is_identity(&self) -> bool {
        self.speed_factors == (1.0, 1.0) && self.left_behind.is_none()
    }

    pub fn apply(&self, base: &PtamInputs) -> Result<PtamInputs> {
        let (g1, g2) = self.speed_factors;
        let walk = base.walk.with_speed_scaled(g1, g2)?;
        let Some(v) = &self.left_behind else {
            return Ok(PtamInputs {
                walk,
                left_behind: base.left_behind.clone(),
            });
        };
        let mut lb = LeftBehindProfile::new(base.left_behind.period_s())?;
        if let Some(d) = base.left_behind.default_vector() {
            lb.set_default(d.to_vec())?;
        }
        for (platform, period, p) in base.left_behind.entries() {
            let p = if p.len() > 1 { v.clone() } else { p };
            match period {
                Some(s) => lb.set_period(platform, s, p)?,
                None => lb.set_all_day(platform, p)?,
            }
        }
        Ok(PtamInputs { walk, left_behind: lb })
    }
}

pub const SPEED_FACTORS: [f64; 3] = [0.8, 1.0, 1.2];
pub const LESS_CROWDED: [f64; 3] = [0.8, 0.2, 0.0];
pub const MORE_CROWDED: [f64; 3] = [0.1, 0.2, 0.7];

/// Every combination of mean and spread multipliers.
pub fn speed_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for g1 in SPEED_FACTORS {
        for g2 in SPEED_FACTORS {
            out.push(Scenario {
                sweep: Sweep::Speed,
                label: format!("mean x{g1}, sd x{g2}"),
                speed_factors: (g1, g2),
                left_behind: None,
            });
        }
    }
    out
}

pub fn crowding_scenarios() -> Vec<Scenario> {
    [("less", Some(LESS_CROWDED.to_vec())), ("actual", None), ("more", Some(MORE_CROWDED.to_vec()))]
        .into_iter()
        .map(|(label, v)| Scenario {
            sweep: Sweep::Crowding,
            label: label.into(),
            speed_factors: (1.0, 1.0),
            left_behind: v,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub result: EstimationResult,
}

/// Re-estimates under each scenario. The unperturbed scenario reuses
/// `reference`; the others start from its optimum.
pub fn sensitivity(
    spec: &ModelSpec,
    obs: &Observations,
    base: &PtamInputs,
    reference: &EstimationResult,
    scenarios: &[Scenario],
    optimizer: &OptimizerSettings,
    cache: Option<&FsPath>,
) -> Result<Vec<ScenarioResult>> {
    let model = LatentClassModel::new(spec.clone())?;
    scenarios
        .iter()
        .map(|sc| {
            let result = if sc.is_identity() {
                reference.clone()
            } else {
                let inputs = sc.apply(base)?;
                let d = densities(obs, &inputs, cache)?;
                maximize(&model, &obs.assemble(spec, &d)?, &reference.raw, optimizer)?
            };
            Ok(ScenarioResult {
                scenario: sc.clone(),
                result,
            })
        })
        .collect()
}

/// `|b - a| / |a|` per parameter.
pub fn relative_change(reference: &EstimationResult, other: &EstimationResult) -> Vec<f64> {
    reference
        .estimates
        .iter()
        .zip(&other.estimates)
        .map(|(a, b)| (b - a).abs() / a.abs())
        .collect()
}

pub const SENSITIVITY_COLUMNS: [&str; 11] = [
    "sweep",
    "scenario",
    "speed_mean_factor",
    "speed_sd_factor",
    "parameter",
    "estimate",
    "std_error",
    "t_value",
    "relative_change",
    "log_likelihood",
    "converged",
];

/// One row per scenario and parameter.
pub fn write_sensitivity(path: &FsPath, reference: &EstimationResult, rows: &[ScenarioResult]) -> Result<()> {
    let mut table = vec![SENSITIVITY_COLUMNS.map(String::from).to_vec()];
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
    for r in rows {
        let change = relative_change(reference, &r.result);
        for i in 0..r.result.names.len() {
            table.push(vec![
                match r.scenario.sweep {
                    Sweep::Speed => "speed".into(),
                    Sweep::Crowding => "crowding".into(),
                },
                r.scenario.label.clone(),
                format!("{}", r.scenario.speed_factors.0),
                format!("{}", r.scenario.speed_factors.1),
                r.result.names[i].clone(),
                format!("{}", r.result.estimates[i]),
                opt(r.result.std_errors[i]),
                opt(r.result.t_values[i]),
                format!("{}", change[i]),
                format!("{}", r.result.log_likelihood),
                format!("{}", r.result.converged),
            ]);
        }
    }
    io::write_rows(path, &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptam::Platform;
    use crate::simulator::{simulate, SimulationConfig};
    use crate::transit::Direction;

    fn small() -> SimulationOutput {
        simulate(&SimulationConfig {
            passengers: 40,
            trips_per_passenger: 2,
            calibration_passengers: 0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn scenario_grids() {
        let s = speed_scenarios();
        assert_eq!(s.len(), 9);
        assert_eq!(s.iter().filter(|x| x.is_identity()).count(), 1);
        let c = crowding_scenarios();
        assert_eq!(c.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(), ["less", "actual", "more"]);
        assert!(c[1].is_identity());
    }

    #[test]
    fn crowding_replaces_only_crowded_platforms() {
        let out = small();
        let base = PtamInputs {
            walk: out.system.network.walk.clone().unwrap(),
            left_behind: out.left_behind.clone(),
        };
        let more = crowding_scenarios()[2].apply(&base).unwrap();
        let c = Platform::new("C", "red", Direction::Up);
        assert_eq!(more.left_behind.vector(&c, 30_000).unwrap(), &MORE_CROWDED);
        let b = Platform::new("B", "red", Direction::Up);
        assert_eq!(more.left_behind.vector(&b, 30_000).unwrap(), &[1.0]);
        assert_eq!(more.walk, base.walk);
    }

    #[test]
    fn density_key_tracks_inputs() {
        let out = small();
        let obs = Observations::from_simulation(&out);
        let base = obs.ptam_inputs(out.left_behind.clone()).unwrap();
        let k = density_key(&obs, &base);
        assert_eq!(k.len(), 64);
        assert_eq!(k, density_key(&obs, &base.clone()));
        let slower = speed_scenarios()[0].apply(&base).unwrap();
        assert_ne!(k, density_key(&obs, &slower));
        let mut fewer = obs.clone();
        fewer.trips.pop();
        assert_ne!(k, density_key(&fewer, &base));
    }

    #[test]
    fn cached_densities_match_fresh_ones() {
        let out = small();
        let obs = Observations::from_simulation(&out);
        let base = obs.ptam_inputs(out.left_behind.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let fresh = densities(&obs, &base, None).unwrap();
        let first = densities(&obs, &base, Some(dir.path())).unwrap();
        let second = densities(&obs, &base, Some(dir.path())).unwrap();
        assert_eq!(fresh, first);
        assert_eq!(fresh, second);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn recovery_bands() {
        let result = EstimationResult {
            names: vec!["a".into(), "b".into()],
            estimates: vec![-0.5, 0.1],
            raw: vec![-0.5, 0.1],
            log_likelihood: 0.0,
            null_log_likelihood: 0.0,
            iterations: 0,
            evaluations: 0,
            converged: true,
            status: String::new(),
            gradient_norm: 0.0,
            std_errors: vec![None, None],
            t_values: vec![None, None],
            hessian: crate::estimator::HessianDiagnostics {
                min_eigenvalue: -1.0,
                max_eigenvalue: -1.0,
                condition_number: 1.0,
                negative_semidefinite: true,
                pseudo_inverse: false,
            },
            zero_likelihood_passengers: 0,
        };
        let truth = BTreeMap::from([("a".to_string(), -1.0), ("b".to_string(), 0.2)]);
        let r = recovery(&result, &truth).unwrap();
        assert_eq!(r.within_band, [false, true]);
        assert!((r.mean_abs_relative_error - 0.5).abs() < 1e-12);
        assert!(recovery(&result, &BTreeMap::new()).is_err());
    }
}
