//! Passenger-to-train assignment.
//!
//! Given a tap-in/tap-out pair and a path, enumerates the train itineraries
//! that could have produced the observation and evaluates the density of the
//! observed tap-out time, accounting for passengers left behind on crowded
//! platforms.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::AfcTrip;
use crate::transit::{Direction, Path, PathSegment, Seconds, Timetable};
use crate::walktime::{WalkDistribution, WalkModel};

/// One train run id per path segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Itinerary(pub Vec<u32>);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Platform {
    pub station: String,
    pub line: String,
    pub direction: Direction,
}

impl Platform {
    pub fn new(station: &str, line: &str, direction: Direction) -> Self {
        Platform {
            station: station.to_string(),
            line: line.to_string(),
            direction,
        }
    }

    pub fn boarding(segment: &PathSegment) -> Self {
        Platform::new(&segment.board, &segment.line, segment.direction)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct PlatformVectors {
    all_day: Option<Vec<f64>>,
    by_period: BTreeMap<Seconds, Vec<f64>>,
}

/// Probability of being left behind k = 0..C times, per platform and time period.
#[derive(Clone, Debug, PartialEq)]
pub struct LeftBehindProfile {
    period_s: Seconds,
    platforms: BTreeMap<Platform, PlatformVectors>,
    default: Option<Vec<f64>>,
}

pub const DEFAULT_PERIOD_S: Seconds = 900;

fn check_vector(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Validation("empty left-behind vector".into()));
    }
    if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Validation(format!("left-behind vector has invalid entries: {v:?}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("left-behind vector sums to {s}, not 1")));
    }
    Ok(())
}

impl LeftBehindProfile {
    pub fn new(period_s: Seconds) -> Result<Self> {
        if period_s <= 0 {
            return Err(Error::Config(format!("period length must be positive, got {period_s}")));
        }
        Ok(LeftBehindProfile {
            period_s,
            platforms: BTreeMap::new(),
            default: None,
        })
    }

    /// Profile where nobody is ever left behind.
    pub fn uncrowded() -> Self {
        let mut p = LeftBehindProfile::new(DEFAULT_PERIOD_S).expect("positive period");
        p.default = Some(vec![1.0]);
        p
    }

    pub fn period_s(&self) -> Seconds {
        self.period_s
    }

    pub fn set_default(&mut self, v: Vec<f64>) -> Result<()> {
        check_vector(&v)?;
        self.default = Some(v);
        Ok(())
    }

    pub fn default_vector(&self) -> Option<&[f64]> {
        self.default.as_deref()
    }

    pub fn set_all_day(&mut self, platform: Platform, v: Vec<f64>) -> Result<()> {
        check_vector(&v)?;
        self.platforms.entry(platform).or_default().all_day = Some(v);
        Ok(())
    }

    pub fn set_period(&mut self, platform: Platform, period_start: Seconds, v: Vec<f64>) -> Result<()> {
        check_vector(&v)?;
        if period_start.rem_euclid(self.period_s) != 0 {
            return Err(Error::Validation(format!(
                "period start {period_start} is not aligned to {} s bins",
                self.period_s
            )));
        }
        self.platforms.entry(platform).or_default().by_period.insert(period_start, v);
        Ok(())
    }

    /// Vector for a platform at time `t`: the period entry if present, then the
    /// platform's all-day entry, then the profile default.
    pub fn vector(&self, platform: &Platform, t: Seconds) -> Result<&[f64]> {
        if let Some(pv) = self.platforms.get(platform) {
            let start = t.div_euclid(self.period_s) * self.period_s;
            if let Some(v) = pv.by_period.get(&start) {
                return Ok(v);
            }
            if let Some(v) = &pv.all_day {
                return Ok(v);
            }
        }
        self.default.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "no left-behind probabilities for {} {} {} at t={t}",
                platform.station, platform.line, platform.direction
            ))
        })
    }

    /// Flattened rows `(platform, period_start or None for all-day, vector)`.
    pub fn entries(&self) -> Vec<(Platform, Option<Seconds>, Vec<f64>)> {
        let mut out = Vec::new();
        for (p, pv) in &self.platforms {
            if let Some(v) = &pv.all_day {
                out.push((p.clone(), None, v.clone()));
            }
            for (s, v) in &pv.by_period {
                out.push((p.clone(), Some(*s), v.clone()));
            }
        }
        out
    }
}

/// Enumerates every itinerary satisfying: the first train departs no earlier
/// than tap-in, each later train departs no earlier than the previous one
/// arrives, and the last train arrives no later than tap-out. Minimum walking
/// times are zero. `max_trains_per_segment` truncates the candidate list of
/// each segment when set.
pub fn feasible_itineraries(
    trip: &AfcTrip,
    path: &Path,
    timetable: &Timetable,
    max_trains_per_segment: Option<usize>,
) -> Result<Vec<Itinerary>> {
    let segments = path.segments();
    let mut out = Vec::new();
    let mut stack = Vec::with_capacity(segments.len());
    extend_itineraries(
        segments,
        timetable,
        trip.tap_in,
        trip.tap_out,
        max_trains_per_segment,
        &mut stack,
        &mut out,
    )?;
    Ok(out)
}

fn extend_itineraries(
    segments: &[PathSegment],
    timetable: &Timetable,
    ready: Seconds,
    tap_out: Seconds,
    cap: Option<usize>,
    stack: &mut Vec<u32>,
    out: &mut Vec<Itinerary>,
) -> Result<()> {
    let j = stack.len();
    if j == segments.len() {
        out.push(Itinerary(stack.clone()));
        return Ok(());
    }
    let seg = &segments[j];
    let mut candidates = timetable.trains_for_segment(seg, ready, tap_out);
    if let Some(cap) = cap {
        candidates.truncate(cap);
    }
    for run in candidates {
        let arrival = timetable.train_arrival(seg, run)?;
        // Arrivals are FIFO, so once one train is too late all later ones are.
        if arrival > tap_out {
            break;
        }
        stack.push(run);
        extend_itineraries(segments, timetable, arrival, tap_out, cap, stack, out)?;
        stack.pop();
    }
    Ok(())
}

/// Largest k such that some feasible itinerary boards train `I_j - k` on
/// segment `j`.
pub fn max_left_behind(itinerary: &Itinerary, segment: usize, feasible: &[Itinerary]) -> u32 {
    let run = itinerary.0[segment];
    feasible
        .iter()
        .map(|h| h.0[segment])
        .filter(|&r| r <= run)
        .min()
        .map_or(0, |earliest| run - earliest)
}

/// Walking-time model and crowding inputs used to evaluate tap-out densities.
#[derive(Clone, Copy, Debug)]
pub struct Ptam<'a> {
    pub timetable: &'a Timetable,
    pub walk: &'a WalkModel,
    pub left_behind: &'a LeftBehindProfile,
    pub max_trains_per_segment: Option<usize>,
}

impl<'a> Ptam<'a> {
    pub fn new(timetable: &'a Timetable, walk: &'a WalkModel, left_behind: &'a LeftBehindProfile) -> Self {
        Ptam {
            timetable,
            walk,
            left_behind,
            max_trains_per_segment: None,
        }
    }

    /// `sum_k rho_k * eta_k` where `rho_k` is the chance that the platform
    /// arrival (anchor + walk) falls between the departures of trains
    /// `run - k - 1` and `run - k`, and `eta_k` the chance of being left
    /// behind k times. `k` runs to `min(max_lb, C)`.
    fn boarding_probability(
        &self,
        segment: &PathSegment,
        run: u32,
        anchor: Seconds,
        walk: &WalkDistribution,
        max_lb: u32,
    ) -> Result<f64> {
        let departs = self.timetable.train_departure(segment, run)?;
        let eta = self.left_behind.vector(&Platform::boarding(segment), departs)?;
        let cap = max_lb.min(eta.len() as u32 - 1);
        let mut total = 0.0;
        for k in 0..=cap {
            if eta[k as usize] == 0.0 {
                continue;
            }
            let upper_run = run as i64 - k as i64;
            let Some(upper) =
                self.timetable
                    .departure_if_exists(&segment.line, segment.direction, upper_run, &segment.board)
            else {
                break;
            };
            let lower = self
                .timetable
                .departure_if_exists(&segment.line, segment.direction, upper_run - 1, &segment.board)
                .map_or(f64::NEG_INFINITY, |t| (t - anchor) as f64);
            let rho = walk.interval_probability(lower, (upper - anchor) as f64)?;
            total += rho * eta[k as usize];
        }
        Ok(total.clamp(0.0, 1.0))
    }

    /// Probability of boarding `run` on the first segment given tap-in.
    pub fn boarding_probability_first(&self, trip: &AfcTrip, path: &Path, run: u32, max_lb: u32) -> Result<f64> {
        let seg = &path.segments()[0];
        let walk = self.walk.access(&seg.board)?;
        self.boarding_probability(seg, run, trip.tap_in, &walk, max_lb)
    }

    /// Probability of boarding `run` on segment `j >= 1` given the train
    /// boarded on segment `j - 1`.
    pub fn boarding_probability_transfer(
        &self,
        path: &Path,
        segment: usize,
        previous_run: u32,
        run: u32,
        max_lb: u32,
    ) -> Result<f64> {
        if segment == 0 || segment >= path.segments().len() {
            return Err(Error::Domain(format!(
                "segment {segment} of path {} has no predecessor",
                path.id()
            )));
        }
        let prev = &path.segments()[segment - 1];
        let seg = &path.segments()[segment];
        let alight = self.timetable.train_arrival(prev, previous_run)?;
        let walk = self.walk.transfer(&seg.board)?;
        self.boarding_probability(seg, run, alight, &walk, max_lb)
    }

    /// Density of the observed tap-out time given tap-in and path, summed over
    /// the feasible itineraries. Zero when no itinerary is feasible.
    pub fn tapout_probability(&self, trip: &AfcTrip, path: &Path) -> Result<f64> {
        let feasible = feasible_itineraries(trip, path, self.timetable, self.max_trains_per_segment)?;
        self.tapout_probability_over(trip, path, &feasible)
    }

    pub fn tapout_probability_over(&self, trip: &AfcTrip, path: &Path, feasible: &[Itinerary]) -> Result<f64> {
        if feasible.is_empty() {
            return Ok(0.0);
        }
        let segs = path.segments();
        let last = segs.len() - 1;
        let earliest: Vec<u32> = (0..segs.len())
            .map(|j| feasible.iter().map(|h| h.0[j]).min().unwrap_or(0))
            .collect();
        let egress = self.walk.egress(path.destination())?;
        let mut first_cache: HashMap<u32, f64> = HashMap::new();
        let mut transfer_cache: HashMap<(usize, u32, u32), f64> = HashMap::new();
        let mut total = 0.0;
        for h in feasible {
            let runs = &h.0;
            let arrive = self.timetable.train_arrival(&segs[last], runs[last])?;
            let f_eg = egress.density((trip.tap_out - arrive) as f64);
            if f_eg == 0.0 {
                continue;
            }
            let p1 = match first_cache.get(&runs[0]) {
                Some(p) => *p,
                None => {
                    let p = self.boarding_probability_first(trip, path, runs[0], runs[0] - earliest[0])?;
                    first_cache.insert(runs[0], p);
                    p
                }
            };
            let mut prob = f_eg * p1;
            for j in 1..segs.len() {
                if prob == 0.0 {
                    break;
                }
                let key = (j, runs[j - 1], runs[j]);
                let p = match transfer_cache.get(&key) {
                    Some(p) => *p,
                    None => {
                        let p = self.boarding_probability_transfer(path, j, runs[j - 1], runs[j], runs[j] - earliest[j])?;
                        transfer_cache.insert(key, p);
                        p
                    }
                };
                prob *= p;
            }
            total += prob;
        }
        Ok(total)
    }
}
