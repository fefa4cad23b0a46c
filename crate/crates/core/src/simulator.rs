//! Synthetic seven-station network, timetable and passenger generator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::{schedule_attributes, AttributeTable, SCHEDULE_ATTRIBUTES};
use crate::dataset::{design_row, ProfileTable};
use crate::error::{Error, Result};
use crate::latent::{
    AfcTrip, GridSpec, LabelOrder, LatentClassModel, ModelSpec, PanelAttachment, TripObservation, LOG_PATH_SIZE,
};
use crate::ptam::{LeftBehindProfile, Platform};
use crate::transit::{
    ChoiceSet, Direction, Line, Link, Network, Path, PathSegment, PathSets, PathSpec, Seconds, Station, StopTime,
    Timetable, TrainRun,
};
use crate::walktime::{SpeedDistribution, WalkDistribution, WalkModel};

/// Links as (from, to, scheduled running time in minutes, length in metres).
const RED: [(&str, &str, f64, f64); 4] = [
    ("A", "B", 2.0, 500.0),
    ("B", "C", 2.0, 3300.0),
    ("C", "E", 5.0, 9800.0),
    ("E", "G", 4.0, 4200.0),
];
const BLUE: [(&str, &str, f64, f64); 2] = [("B", "E", 3.0, 700.0), ("E", "F", 10.0, 4200.0)];
const GREEN: [(&str, &str, f64, f64); 1] = [("D", "C", 7.0, 8700.0)];
const TRANSFER_STATIONS: [&str; 3] = ["B", "C", "E"];

type Leg = (&'static str, Direction, &'static str, &'static str);

fn od_paths() -> Vec<(&'static str, &'static str, Vec<Leg>, Vec<Leg>)> {
    use Direction::{Down, Up};
    vec![
        ("A", "E", vec![("red", Up, "A", "E")], vec![("red", Up, "A", "B"), ("blue", Up, "B", "E")]),
        ("A", "F", vec![("red", Up, "A", "B"), ("blue", Up, "B", "F")], vec![("red", Up, "A", "E"), ("blue", Up, "E", "F")]),
        (
            "A",
            "G",
            vec![("red", Up, "A", "G")],
            vec![("red", Up, "A", "B"), ("blue", Up, "B", "E"), ("red", Up, "E", "G")],
        ),
        ("B", "E", vec![("red", Up, "B", "E")], vec![("blue", Up, "B", "E")]),
        ("B", "F", vec![("blue", Up, "B", "F")], vec![("red", Up, "B", "E"), ("blue", Up, "E", "F")]),
        ("B", "G", vec![("red", Up, "B", "G")], vec![("blue", Up, "B", "E"), ("red", Up, "E", "G")]),
        (
            "D",
            "E",
            vec![("green", Up, "D", "C"), ("red", Up, "C", "E")],
            vec![("green", Up, "D", "C"), ("red", Down, "C", "B"), ("blue", Up, "B", "E")],
        ),
        (
            "D",
            "F",
            vec![("green", Up, "D", "C"), ("red", Up, "C", "E"), ("blue", Up, "E", "F")],
            vec![("green", Up, "D", "C"), ("red", Down, "C", "B"), ("blue", Up, "B", "F")],
        ),
        (
            "D",
            "G",
            vec![("green", Up, "D", "C"), ("red", Up, "C", "G")],
            vec![
                ("green", Up, "D", "C"),
                ("red", Down, "C", "B"),
                ("blue", Up, "B", "E"),
                ("red", Up, "E", "G"),
            ],
        ),
    ]
}

/// Candidate paths of one OD pair as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdPaths {
    pub origin: String,
    pub destination: String,
    pub paths: Vec<PathSpec>,
}

pub fn resolve_path_sets(network: &Network, ods: &[OdPaths]) -> Result<PathSets> {
    let mut sets = PathSets::new();
    for od in ods {
        let paths = od
            .paths
            .iter()
            .map(|p| Path::resolve(network, p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let key = (od.origin.clone(), od.destination.clone());
        if sets.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate path set for {}-{}", od.origin, od.destination)));
        }
        sets.insert(key, ChoiceSet::new(&od.origin, &od.destination, paths)?);
    }
    Ok(sets)
}

#[derive(Clone, Debug)]
pub struct SyntheticSystem {
    pub network: Network,
    pub od_paths: Vec<OdPaths>,
    pub path_sets: PathSets,
}

fn line(id: &str, links: &[(&str, &str, f64, f64)]) -> Line {
    let mut stations = vec![links[0].0.to_string()];
    stations.extend(links.iter().map(|l| l.1.to_string()));
    Line {
        id: id.into(),
        stations,
        links: links
            .iter()
            .map(|&(a, b, min, len)| Link {
                from: a.into(),
                to: b.into(),
                length_m: len,
                run_time_s: min * 60.0,
            })
            .collect(),
    }
}

/// Seven stations A-G on a red, blue and green line, with two candidate paths
/// for each OD pair from {A, B, D} to {E, F, G}. Walking distances are drawn
/// uniformly from `walk_distance_m` with the given seed.
pub fn build_synthetic_network(speed: SpeedDistribution, walk_distance_m: (f64, f64), seed: u64) -> Result<SyntheticSystem> {
    let (lo, hi) = walk_distance_m;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Validation(format!("walk distance range [{lo}, {hi}] is invalid")));
    }
    let stations: Vec<Station> = ["A", "B", "C", "D", "E", "F", "G"]
        .iter()
        .map(|s| Station {
            id: s.to_string(),
            name: format!("Station {s}"),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut draw = || ((lo + (hi - lo) * rng.random::<f64>()) * 10.0).round() / 10.0;
    let mut access = BTreeMap::new();
    let mut egress = BTreeMap::new();
    for s in &stations {
        access.insert(s.id.clone(), draw());
        egress.insert(s.id.clone(), draw());
    }
    let transfer = TRANSFER_STATIONS.iter().map(|s| (s.to_string(), draw())).collect();
    let mut network = Network::new(stations, vec![line("red", &RED), line("blue", &BLUE), line("green", &GREEN)])?;
    let walk = WalkModel {
        speed,
        access_m: access,
        egress_m: egress,
        transfer_m: transfer,
    };
    walk.validate()?;
    network.walk = Some(walk);
    let od_paths: Vec<OdPaths> = od_paths()
        .into_iter()
        .map(|(o, d, main, alt)| OdPaths {
            origin: o.into(),
            destination: d.into(),
            paths: [main, alt]
                .into_iter()
                .enumerate()
                .map(|(i, legs)| PathSpec {
                    id: format!("{o}{d}-{}", i + 1),
                    segments: legs
                        .into_iter()
                        .map(|(l, dir, b, a)| PathSegment::new(l, dir, b, a))
                        .collect(),
                    attributes: BTreeMap::new(),
                    panel: i == 0,
                })
                .collect(),
        })
        .collect();
    let path_sets = resolve_path_sets(&network, &od_paths)?;
    Ok(SyntheticSystem {
        network,
        od_paths,
        path_sets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdedPlatform {
    pub station: String,
    pub line: String,
    pub direction: Direction,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub passengers: usize,
    pub trips_per_passenger: u32,
    pub tap_in_start_s: Seconds,
    pub tap_in_end_s: Seconds,
    pub service_start_s: Seconds,
    pub service_end_s: Seconds,
    pub headway_s: f64,
    pub headway_jitter_s: f64,
    pub run_time_jitter_s: f64,
    pub dwell_s: f64,
    pub walk_distance_m: (f64, f64),
    pub speed: SpeedDistribution,
    pub crowded_platforms: Vec<CrowdedPlatform>,
    pub model: ModelSpec,
    /// Generating parameters on the natural scale, keyed by parameter name.
    pub truth: BTreeMap<String, f64>,
    /// Uniform ranges of the passenger characteristics, in model order.
    pub feature_ranges: Vec<(f64, f64)>,
    /// Extra single-segment passengers whose journey times calibrate the
    /// left-behind mixture.
    pub calibration_passengers: usize,
    pub calibration_od: (String, String),
    pub seed: u64,
}

/// Two classes (time-sensitive, comfort-aware) with shared in-vehicle time and
/// path-size coefficients, class-specific out-of-vehicle time, transfers and
/// denied waiting, one panel standard deviation and two characteristics.
pub fn default_model_spec() -> ModelSpec {
    ModelSpec {
        classes: vec!["TS".into(), "CA".into()],
        base_class: "CA".into(),
        attributes: vec!["ivt".into(), "ovt".into(), "transfers".into(), "denied".into(), LOG_PATH_SIZE.into()],
        shared_attributes: vec!["ivt".into(), LOG_PATH_SIZE.into()],
        membership_features: vec!["x1".into(), "x2".into()],
        membership_constant: false,
        shared_sigma: true,
        grid: GridSpec::default(),
        panel: PanelAttachment::Designated,
        label_order: Some(LabelOrder {
            attribute: "ovt".into(),
            descending: true,
        }),
    }
}

/// Single-class counterpart of [`default_model_spec`].
pub fn baseline_model_spec() -> ModelSpec {
    default_model_spec().single_class()
}

pub fn default_truth() -> BTreeMap<String, f64> {
    [
        ("beta[ivt]", -0.2676),
        ("beta[TS:ovt]", -0.2980),
        ("beta[CA:ovt]", -0.6386),
        ("beta[TS:transfers]", -1.3068),
        ("beta[CA:transfers]", -3.1737),
        ("beta[TS:denied]", -0.3222),
        ("beta[CA:denied]", -0.7825),
        ("beta[log_ps]", 0.5815),
        ("sigma", 1.0),
        ("theta[TS:x1]", 1.5),
        ("theta[TS:x2]", 0.6),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            passengers: 2700,
            trips_per_passenger: 3,
            tap_in_start_s: 7 * 3600,
            tap_in_end_s: 10 * 3600,
            service_start_s: 6 * 3600 + 1800,
            service_end_s: 11 * 3600 + 1800,
            headway_s: 120.0,
            headway_jitter_s: 10.0,
            run_time_jitter_s: 20.0,
            dwell_s: 30.0,
            walk_distance_m: (30.0, 50.0),
            speed: SpeedDistribution { mean: 1.2, sd: 0.5 },
            crowded_platforms: vec![CrowdedPlatform {
                station: "C".into(),
                line: "red".into(),
                direction: Direction::Up,
                probabilities: vec![0.2, 0.5, 0.3],
            }],
            model: default_model_spec(),
            truth: default_truth(),
            feature_ranges: vec![(-4.0, 4.0), (-2.0, 2.0)],
            calibration_passengers: 10_000,
            calibration_od: ("C".into(), "E".into()),
            seed: 20240,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.passengers == 0 || self.trips_per_passenger == 0 {
            return bad("passenger and trip counts must be positive".into());
        }
        if self.tap_in_end_s < self.tap_in_start_s {
            return bad("tap-in window is reversed".into());
        }
        if self.service_start_s > self.tap_in_start_s || self.service_end_s < self.tap_in_end_s {
            return bad("train service must cover the tap-in window".into());
        }
        for (name, v) in [
            ("headway", self.headway_s),
            ("headway jitter", self.headway_jitter_s),
            ("run time jitter", self.run_time_jitter_s),
            ("dwell", self.dwell_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.headway_jitter_s >= self.headway_s {
            return bad("headway jitter must be smaller than the headway".into());
        }
        self.speed.validate()?;
        for c in &self.crowded_platforms {
            let s: f64 = c.probabilities.iter().sum();
            if c.probabilities.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "left-behind probabilities at {} {} {} must sum to 1",
                    c.station, c.line, c.direction
                ));
            }
        }
        if self.feature_ranges.len() != self.model.membership_features.len() {
            return bad("one characteristic range per membership feature is required".into());
        }
        if self.feature_ranges.iter().any(|(a, b)| !(a <= b && a.is_finite() && b.is_finite())) {
            return bad("characteristic ranges must be finite and ordered".into());
        }
        self.truth_vector()?;
        Ok(())
    }

    /// Generating parameters on the estimation scale.
    pub fn truth_vector(&self) -> Result<Vec<f64>> {
        let model = LatentClassModel::new(self.model.clone())?;
        let names = model.layout().names();
        let natural = names
            .iter()
            .map(|n| {
                self.truth
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("ground truth has no value for {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = self.truth.keys().find(|k| !names.contains(k)) {
            return Err(Error::Validation(format!("ground truth names unknown parameter {extra}")));
        }
        model.layout().to_raw(&natural)
    }

    pub fn left_behind_profile(&self) -> Result<LeftBehindProfile> {
        let mut p = LeftBehindProfile::uncrowded();
        for c in &self.crowded_platforms {
            p.set_all_day(Platform::new(&c.station, &c.line, c.direction), c.probabilities.clone())?;
        }
        Ok(p)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const TIMETABLE_STREAM: u64 = 2;
const PASSENGER_STREAM_BASE: u64 = 1 << 32;
const CALIBRATION_STREAM_BASE: u64 = 1 << 33;

fn build_run(
    line: &Line,
    direction: Direction,
    run_id: u32,
    dispatch: Seconds,
    dwell: Seconds,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> TrainRun {
    let mut stations: Vec<&str> = line.stations.iter().map(|s| s.as_str()).collect();
    let mut times: Vec<f64> = line.links.iter().map(|l| l.run_time_s).collect();
    if direction == Direction::Down {
        stations.reverse();
        times.reverse();
    }
    let mut stops = Vec::with_capacity(stations.len());
    let mut t = dispatch;
    stops.push(StopTime {
        station: stations[0].into(),
        arrival: t,
        departure: t,
    });
    for (i, run) in times.iter().enumerate() {
        let delta = if jitter > 0.0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0.0
        };
        let arrival = stops[i].departure + (run + delta).round() as Seconds;
        let last = i + 1 == times.len();
        t = arrival;
        stops.push(StopTime {
            station: stations[i + 1].into(),
            arrival,
            departure: if last { t } else { t + dwell },
        });
    }
    TrainRun {
        line: line.id.clone(),
        direction,
        run_id,
        stops,
    }
}

fn overtakes(prev: &TrainRun, next: &TrainRun) -> bool {
    prev.stops
        .iter()
        .zip(&next.stops)
        .any(|(a, b)| b.arrival <= a.arrival || b.departure <= a.departure)
}

/// Dispatches every line in both directions from `service_start_s` to
/// `service_end_s` with jittered headways and link running times. A run whose
/// jitter would let it catch the previous run is redrawn.
pub fn generate_timetable(network: &Network, config: &SimulationConfig) -> Result<Timetable> {
    let mut rng = stream_rng(config.seed, TIMETABLE_STREAM);
    let dwell = config.dwell_s.round() as Seconds;
    let mut runs = Vec::new();
    for line in &network.lines {
        for direction in [Direction::Up, Direction::Down] {
            let mut t = config.service_start_s + (rng.random::<f64>() * config.headway_s).round() as Seconds;
            let mut prev: Option<TrainRun> = None;
            let mut run_id = 1;
            while t <= config.service_end_s {
                let mut attempt = 0;
                let run = loop {
                    let r = build_run(line, direction, run_id, t, dwell, config.run_time_jitter_s, &mut rng);
                    if prev.as_ref().is_none_or(|p| !overtakes(p, &r)) {
                        break r;
                    }
                    attempt += 1;
                    if attempt > 1000 {
                        return Err(Error::Validation(format!(
                            "could not keep {} {direction} run {run_id} behind its predecessor",
                            line.id
                        )));
                    }
                };
                prev = Some(run.clone());
                runs.push(run);
                run_id += 1;
                let h = config.headway_s
                    + if config.headway_jitter_s > 0.0 {
                        rng.random_range(-config.headway_jitter_s..=config.headway_jitter_s)
                    } else {
                        0.0
                    };
                t += h.round() as Seconds;
            }
        }
    }
    Timetable::new(runs)
}

/// What actually happened on one simulated trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrip {
    pub passenger_id: String,
    pub trip_index: u32,
    pub class: String,
    pub alpha: f64,
    pub path_id: String,
    pub runs: Vec<u32>,
    pub left_behind: Vec<u32>,
    pub access_s: f64,
    pub transfer_s: Vec<f64>,
    pub egress_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JourneyRecord {
    pub passenger_id: String,
    pub od: String,
    /// Start of the left-behind period of the boarded train, or `None` for all-day cells.
    pub period_start_s: Option<Seconds>,
    pub tap_in_s: Option<Seconds>,
    /// Tap-out minus tap-in.
    pub journey_s: f64,
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub system: SyntheticSystem,
    pub timetable: Timetable,
    pub left_behind: LeftBehindProfile,
    pub trips: Vec<AfcTrip>,
    pub profiles: ProfileTable,
    pub attributes: AttributeTable,
    pub ground_truth: Vec<GroundTruthTrip>,
    pub calibration: Vec<JourneyRecord>,
    pub calibration_truth: Vec<GroundTruthTrip>,
}

struct Realization {
    runs: Vec<u32>,
    left_behind: Vec<u32>,
    access_s: f64,
    transfer_s: Vec<f64>,
    egress_s: f64,
    tap_out: Seconds,
}

fn sample_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn realize(
    path: &Path,
    tap_in: Seconds,
    timetable: &Timetable,
    walk: &WalkModel,
    left_behind: &LeftBehindProfile,
    rng: &mut ChaCha8Rng,
) -> Result<Realization> {
    let segs = path.segments();
    let sample = |d: WalkDistribution, rng: &mut ChaCha8Rng| d.sample(rng);
    let access_s = sample(walk.access(&segs[0].board)?, rng);
    let mut ready = tap_in as f64 + access_s;
    let mut runs = Vec::with_capacity(segs.len());
    let mut lb = Vec::with_capacity(segs.len());
    let mut transfer_s = Vec::new();
    for (j, seg) in segs.iter().enumerate() {
        if j > 0 {
            let w = sample(walk.transfer(&seg.board)?, rng);
            transfer_s.push(w);
            ready += w;
        }
        let first = timetable.first_departure_after(seg, ready).ok_or_else(|| {
            Error::Validation(format!("{} {} has no departure from {} after {ready:.0}s", seg.line, seg.direction, seg.board))
        })?;
        let eta = left_behind.vector(&Platform::boarding(seg), timetable.train_departure(seg, first)?)?;
        let k = sample_index(eta, rng) as u32;
        let run = first + k;
        runs.push(run);
        lb.push(k);
        ready = timetable.train_arrival(seg, run)? as f64;
    }
    let egress_s = sample(walk.egress(path.destination())?, rng);
    Ok(Realization {
        runs,
        left_behind: lb,
        access_s,
        transfer_s,
        egress_s,
        tap_out: (ready + egress_s).round() as Seconds,
    })
}

/// Tap-out time implied by a logged itinerary; equals the emitted tap-out.
pub fn replay_tap_out(path: &Path, truth: &GroundTruthTrip, timetable: &Timetable) -> Result<Seconds> {
    let last = path.segments().len() - 1;
    let arrive = timetable.train_arrival(&path.segments()[last], truth.runs[last])?;
    Ok((arrive as f64 + truth.egress_s).round() as Seconds)
}

struct PassengerDraw {
    features: Vec<f64>,
    trips: Vec<AfcTrip>,
    attributes: Vec<(u32, String, Vec<f64>)>,
    truth: Vec<GroundTruthTrip>,
}

pub fn passenger_id(i: usize) -> String {
    format!("P{:05}", i + 1)
}

/// Runs the generator end to end. Output is a pure function of the config.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationOutput> {
    config.validate()?;
    let system = build_synthetic_network(config.speed, config.walk_distance_m, config.seed)?;
    let timetable = generate_timetable(&system.network, config)?;
    let left_behind = config.left_behind_profile()?;
    let model = LatentClassModel::new(config.model.clone())?;
    let truth = config.truth_vector()?;
    let walk = system.network.walk.as_ref().expect("synthetic network has walking geometry");
    let ods: Vec<&ChoiceSet> = system.path_sets.values().collect();
    let sigmas = model.layout().sigmas(&truth);

    let draws: Vec<PassengerDraw> = (0..config.passengers)
        .into_par_iter()
        .map(|i| -> Result<PassengerDraw> {
            let mut rng = stream_rng(config.seed, PASSENGER_STREAM_BASE + i as u64);
            let pid = passenger_id(i);
            let features: Vec<f64> = config
                .feature_ranges
                .iter()
                .map(|&(a, b)| if a == b { a } else { rng.random_range(a..=b) })
                .collect();
            let probs = model.class_probabilities(&features, &truth)?;
            let class = sample_index(&probs, &mut rng);
            let alpha = Normal::new(0.0, sigmas[class])
                .map_err(|e| Error::Validation(e.to_string()))?
                .sample(&mut rng);
            let mut out = PassengerDraw {
                features,
                trips: Vec::new(),
                attributes: Vec::new(),
                truth: Vec::new(),
            };
            for n in 0..config.trips_per_passenger {
                let tap_in = rng.random_range(config.tap_in_start_s..=config.tap_in_end_s);
                let cs = ods[rng.random_range(0..ods.len())];
                let mut rows = Vec::with_capacity(cs.len());
                for p in cs.paths() {
                    let a = schedule_attributes(p, tap_in, &timetable, walk, &left_behind, config.headway_s)?;
                    let values: Vec<f64> = SCHEDULE_ATTRIBUTES.iter().map(|n| a[*n]).collect();
                    rows.push(design_row(&config.model.attributes, p, |name| a.get(name).copied())?);
                    out.attributes.push((n + 1, p.id().to_string(), values));
                }
                let obs = TripObservation {
                    densities: vec![1.0; cs.len()],
                    attributes: rows,
                    panel: cs.paths().iter().map(|p| p.spec.panel).collect(),
                };
                let pi = model.choice_probabilities(&obs, class, alpha, &truth)?;
                let path = &cs.paths()[sample_index(&pi, &mut rng)];
                let r = realize(path, tap_in, &timetable, walk, &left_behind, &mut rng)?;
                out.trips.push(AfcTrip {
                    passenger_id: pid.clone(),
                    trip_index: n + 1,
                    origin: cs.origin.clone(),
                    destination: cs.destination.clone(),
                    tap_in,
                    tap_out: r.tap_out,
                });
                out.truth.push(GroundTruthTrip {
                    passenger_id: pid.clone(),
                    trip_index: n + 1,
                    class: config.model.classes[class].clone(),
                    alpha,
                    path_id: path.id().to_string(),
                    runs: r.runs,
                    left_behind: r.left_behind,
                    access_s: r.access_s,
                    transfer_s: r.transfer_s,
                    egress_s: r.egress_s,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut profiles = ProfileTable::new(config.model.membership_features.clone());
    let mut attributes = AttributeTable::new(SCHEDULE_ATTRIBUTES.iter().map(|s| s.to_string()).collect());
    let mut trips = Vec::new();
    let mut ground_truth = Vec::new();
    for (i, d) in draws.into_iter().enumerate() {
        let pid = passenger_id(i);
        profiles.insert(&pid, d.features)?;
        for (n, path_id, values) in d.attributes {
            attributes.insert(&pid, n, &path_id, values)?;
        }
        trips.extend(d.trips);
        ground_truth.extend(d.truth);
    }

    let (calibration, calibration_truth) = simulate_calibration(config, &system, &timetable, &left_behind)?;
    Ok(SimulationOutput {
        system,
        timetable,
        left_behind,
        trips,
        profiles,
        attributes,
        ground_truth,
        calibration,
        calibration_truth,
    })
}

/// Journey times of passengers riding a single segment on the calibration OD.
fn simulate_calibration(
    config: &SimulationConfig,
    system: &SyntheticSystem,
    timetable: &Timetable,
    left_behind: &LeftBehindProfile,
) -> Result<(Vec<JourneyRecord>, Vec<GroundTruthTrip>)> {
    if config.calibration_passengers == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let (o, d) = &config.calibration_od;
    let segment = system
        .network
        .lines
        .iter()
        .flat_map(|l| [Direction::Up, Direction::Down].map(|dir| PathSegment::new(&l.id, dir, o, d)))
        .find(|s| system.network.segment_links(s).is_ok())
        .ok_or_else(|| Error::Validation(format!("no single line serves {o}-{d}")))?;
    let path = Path::resolve(
        &system.network,
        PathSpec {
            id: format!("{o}{d}-cal"),
            segments: vec![segment],
            attributes: BTreeMap::new(),
            panel: false,
        },
    )?;
    let walk = system.network.walk.as_ref().expect("synthetic network has walking geometry");
    let od = format!("{o}-{d}");
    let rows: Vec<(JourneyRecord, GroundTruthTrip)> = (0..config.calibration_passengers)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, CALIBRATION_STREAM_BASE + i as u64);
            let tap_in = rng.random_range(config.tap_in_start_s..=config.tap_in_end_s);
            let r = realize(&path, tap_in, timetable, walk, left_behind, &mut rng)?;
            let pid = format!("C{:05}", i + 1);
            Ok((
                JourneyRecord {
                    passenger_id: pid.clone(),
                    od: od.clone(),
                    period_start_s: None,
                    tap_in_s: Some(tap_in),
                    journey_s: (r.tap_out - tap_in) as f64,
                },
                GroundTruthTrip {
                    passenger_id: pid,
                    trip_index: 1,
                    class: String::new(),
                    alpha: 0.0,
                    path_id: path.id().to_string(),
                    runs: r.runs,
                    left_behind: r.left_behind,
                    access_s: r.access_s,
                    transfer_s: r.transfer_s,
                    egress_s: r.egress_s,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().unzip())
}
