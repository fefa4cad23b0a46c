//! Left-behind profiles estimated from journey times of single-line trips.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leftbehind::{fit_mixture, to_leftbehind_vector, JourneyTimeSample, MixtureComponent, MixtureConstraints};
use crate::ptam::{LeftBehindProfile, Platform};
use crate::simulator::JourneyRecord;
use crate::transit::{Direction, Network, PathSegment, Seconds, Timetable};
use crate::walktime::{WalkDistribution, WalkModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    /// Largest left-behind count modelled.
    pub max_left_behind: usize,
    pub headway_s: f64,
    pub period_s: Seconds,
    /// Cells with fewer journeys than this are skipped.
    pub min_sample: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            max_left_behind: 2,
            headway_s: 120.0,
            period_s: crate::ptam::DEFAULT_PERIOD_S,
            min_sample: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub od: String,
    pub platform: Platform,
    pub period_start_s: Option<Seconds>,
    pub records: usize,
    /// Journeys entering the fit.
    pub sample_size: usize,
    pub from_first_train: bool,
    pub prior_s: f64,
    /// `None` when the cell was skipped; `note` says why.
    pub probabilities: Option<Vec<f64>>,
    pub components: Vec<MixtureComponent>,
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub note: String,
}

/// The single-line segment serving an OD written as `O-D`.
pub fn od_segment(network: &Network, od: &str) -> Result<PathSegment> {
    let (o, d) = od
        .split_once('-')
        .ok_or_else(|| Error::Validation(format!("OD {od:?} is not of the form O-D")))?;
    let found: Vec<PathSegment> = network
        .lines
        .iter()
        .flat_map(|l| [Direction::Up, Direction::Down].map(|dir| PathSegment::new(&l.id, dir, o, d)))
        .filter(|s| network.segment_links(s).is_ok())
        .collect();
    match found.len() {
        1 => Ok(found.into_iter().next().expect("one segment")),
        0 => Err(Error::Lookup(format!("no single line serves {od}"))),
        _ => Err(Error::Validation(format!("{od} is served by several lines"))),
    }
}

/// Mean scheduled ride time of a segment over every train serving it.
fn mean_ride(timetable: &Timetable, segment: &PathSegment) -> Result<f64> {
    let runs = timetable.trains_for_segment(segment, Seconds::MIN, Seconds::MAX);
    if runs.is_empty() {
        return Err(Error::Lookup(format!(
            "no {} {} trains from {}",
            segment.line, segment.direction, segment.board
        )));
    }
    let mut ride = 0.0;
    for &r in &runs {
        ride += (timetable.train_arrival(segment, r)? - timetable.train_departure(segment, r)?) as f64;
    }
    Ok(ride / runs.len() as f64)
}

fn walk_model(network: &Network) -> Result<&WalkModel> {
    network
        .walk
        .as_ref()
        .ok_or_else(|| Error::Config("network file carries no walking geometry".into()))
}

/// Expected tap-in to tap-out time when boarding the first train: mean access
/// walk, half a headway, the mean scheduled ride and mean egress walk.
pub fn journey_prior(network: &Network, timetable: &Timetable, segment: &PathSegment, headway_s: f64) -> Result<f64> {
    let walk = walk_model(network)?;
    Ok(walk.access(&segment.board)?.mean()
        + 0.5 * headway_s
        + mean_ride(timetable, segment)?
        + walk.egress(&segment.alight)?.mean())
}

/// Access-walk quantiles bracketing the platform arrival time.
const REACH_LEVELS: (f64, f64) = (0.005, 0.995);

/// Time from the departure of the first train a passenger reaches to tap-out.
/// `None` when the access walk leaves it open which train that is.
pub fn time_from_first_train(
    tap_in: Seconds,
    journey_s: f64,
    segment: &PathSegment,
    timetable: &Timetable,
    access: &WalkDistribution,
) -> Result<Option<f64>> {
    let lo = tap_in as f64 + access.quantile(REACH_LEVELS.0)?;
    let hi = tap_in as f64 + access.quantile(REACH_LEVELS.1)?;
    let Some(run) = timetable.first_departure_after(segment, hi) else {
        return Ok(None);
    };
    let prev = timetable.departure_if_exists(&segment.line, segment.direction, run as i64 - 1, &segment.board);
    if prev.is_some_and(|p| p as f64 >= lo) {
        return Ok(None);
    }
    let dep = timetable.train_departure(segment, run)?;
    Ok(Some(journey_s - (dep - tap_in) as f64))
}

/// Fits one mixture per (OD, period) cell and collects the results into a
/// profile whose default is the uncrowded vector.
pub fn calibrate(
    records: &[JourneyRecord],
    network: &Network,
    timetable: &Timetable,
    settings: &CalibrationSettings,
) -> Result<(LeftBehindProfile, Vec<CellFit>)> {
    let mut cells: BTreeMap<(String, Option<Seconds>), Vec<&JourneyRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.od.clone(), r.period_start_s)).or_default().push(r);
    }
    let fits: Vec<CellFit> = cells
        .into_par_iter()
        .map(|((od, period), recs)| fit_cell(&od, period, &recs, network, timetable, settings))
        .collect::<Result<_>>()?;
    let mut profile = LeftBehindProfile::new(settings.period_s)?;
    profile.set_default(vec![1.0])?;
    for f in &fits {
        if let Some(v) = &f.probabilities {
            match f.period_start_s {
                Some(s) => profile.set_period(f.platform.clone(), s, v.clone())?,
                None => profile.set_all_day(f.platform.clone(), v.clone())?,
            }
        }
    }
    Ok((profile, fits))
}

/// With tap-in times on every record, journeys are measured from the first
/// reachable departure, which removes the platform wait; otherwise the raw
/// journey times are fitted.
fn fit_cell(
    od: &str,
    period: Option<Seconds>,
    records: &[&JourneyRecord],
    network: &Network,
    timetable: &Timetable,
    settings: &CalibrationSettings,
) -> Result<CellFit> {
    let segment = od_segment(network, od)?;
    let walk = walk_model(network)?;
    let from_train = records.iter().all(|r| r.tap_in_s.is_some());
    let (times, prior) = if from_train {
        let access = walk.access(&segment.board)?;
        let mut times = Vec::with_capacity(records.len());
        for r in records {
            let tap_in = r.tap_in_s.expect("checked above");
            if let Some(t) = time_from_first_train(tap_in, r.journey_s, &segment, timetable, &access)? {
                times.push(t);
            }
        }
        let prior = mean_ride(timetable, &segment)? + walk.egress(&segment.alight)?.mean();
        (times, prior)
    } else {
        let times = records.iter().map(|r| r.journey_s).collect();
        (times, journey_prior(network, timetable, &segment, settings.headway_s)?)
    };
    let mut cell = CellFit {
        od: od.to_string(),
        platform: Platform::boarding(&segment),
        period_start_s: period,
        records: records.len(),
        sample_size: times.len(),
        from_first_train: from_train,
        prior_s: prior,
        probabilities: None,
        components: Vec::new(),
        log_likelihood: None,
        iterations: 0,
        note: String::new(),
    };
    if times.len() < settings.min_sample.max(10 * (settings.max_left_behind + 1)) {
        cell.note = format!("skipped: {} usable journeys", times.len());
        return Ok(cell);
    }
    let sample = JourneyTimeSample::new(format!("{od} {period:?}"), times)?;
    let constraints = MixtureConstraints::new(settings.headway_s, prior);
    let fit = match fit_mixture(&sample, settings.max_left_behind, &constraints) {
        Ok(f) => f,
        Err(Error::MixtureConvergence(f)) => {
            cell.note = "iteration limit reached".into();
            *f
        }
        Err(e) => return Err(e),
    };
    cell.probabilities = Some(to_leftbehind_vector(&fit));
    cell.log_likelihood = Some(fit.log_likelihood);
    cell.iterations = fit.iterations;
    cell.components = fit.components;
    Ok(cell)
}
