//! Rail network, path sets and the train-movement timetable.
//!
//! Times are integer seconds since service-day midnight. Path attributes are in
//! minutes and are converted once, when paths are built.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::walktime::WalkModel;

/// Seconds since service-day midnight.
pub type Seconds = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Travel in the order the line lists its stations.
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            other => Err(Error::Validation(format!("unknown direction {other:?}"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    #[serde(default)]
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub run_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    /// Stations in "up" order.
    pub stations: Vec<String>,
    /// `links[i]` joins `stations[i]` and `stations[i + 1]`.
    pub links: Vec<Link>,
}

impl Line {
    pub fn position(&self, station: &str) -> Option<usize> {
        self.stations.iter().position(|s| s == station)
    }
}

/// Physical link identity, independent of line direction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkKey(pub String, pub String);

impl LinkKey {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            LinkKey(a.to_string(), b.to_string())
        } else {
            LinkKey(b.to_string(), a.to_string())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub stations: Vec<Station>,
    pub lines: Vec<Line>,
    /// Walking geometry and speed distribution, when frozen into the network file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkModel>,
}

impl Network {
    pub fn new(stations: Vec<Station>, lines: Vec<Line>) -> Result<Self> {
        let network = Network {
            stations,
            lines,
            walk: None,
        };
        network.validate()?;
        Ok(network)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.stations {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate station id {}", s.id)));
            }
        }
        let mut line_ids = BTreeSet::new();
        for line in &self.lines {
            if !line_ids.insert(line.id.as_str()) {
                return Err(Error::Validation(format!("duplicate line id {}", line.id)));
            }
            if line.stations.len() < 2 {
                return Err(Error::Validation(format!("line {} has fewer than 2 stations", line.id)));
            }
            if line.links.len() + 1 != line.stations.len() {
                return Err(Error::Validation(format!(
                    "line {}: {} stations need {} links, found {}",
                    line.id,
                    line.stations.len(),
                    line.stations.len() - 1,
                    line.links.len()
                )));
            }
            for s in &line.stations {
                if !ids.contains(s.as_str()) {
                    return Err(Error::Validation(format!("line {} references unknown station {s}", line.id)));
                }
            }
            for (i, link) in line.links.iter().enumerate() {
                if link.from != line.stations[i] || link.to != line.stations[i + 1] {
                    return Err(Error::Validation(format!(
                        "line {}: link {i} ({}-{}) does not join consecutive stations {}-{}",
                        line.id,
                        link.from,
                        link.to,
                        line.stations[i],
                        line.stations[i + 1]
                    )));
                }
                if !(link.length_m > 0.0 && link.run_time_s > 0.0) {
                    return Err(Error::Validation(format!(
                        "line {}: link {}-{} needs positive length and run time",
                        line.id, link.from, link.to
                    )));
                }
            }
        }
        if let Some(walk) = &self.walk {
            walk.validate()?;
        }
        Ok(())
    }

    pub fn station(&self, id: &str) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }

    pub fn line(&self, id: &str) -> Result<&Line> {
        self.lines
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::Lookup(format!("unknown line {id}")))
    }

    /// Links traversed by `segment`, in travel order.
    pub fn segment_links(&self, segment: &PathSegment) -> Result<Vec<&Link>> {
        let line = self.line(&segment.line)?;
        let (b, a) = segment.positions(line)?;
        Ok(if b < a {
            line.links[b..a].iter().collect()
        } else {
            line.links[a..b].iter().rev().collect()
        })
    }

    /// Scheduled run time of a segment in seconds, without dwell.
    pub fn segment_run_time(&self, segment: &PathSegment) -> Result<f64> {
        Ok(self.segment_links(segment)?.iter().map(|l| l.run_time_s).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathSegment {
    pub line: String,
    pub direction: Direction,
    pub board: String,
    pub alight: String,
}

impl PathSegment {
    pub fn new(line: &str, direction: Direction, board: &str, alight: &str) -> Self {
        PathSegment {
            line: line.to_string(),
            direction,
            board: board.to_string(),
            alight: alight.to_string(),
        }
    }

    /// Positions of the boarding and alighting stations on the line, checked
    /// against the travel direction.
    fn positions(&self, line: &Line) -> Result<(usize, usize)> {
        if self.board == self.alight {
            return Err(Error::Domain(format!("segment on {} boards and alights at {}", self.line, self.board)));
        }
        let b = line
            .position(&self.board)
            .ok_or_else(|| Error::Domain(format!("station {} is not on line {}", self.board, line.id)))?;
        let a = line
            .position(&self.alight)
            .ok_or_else(|| Error::Domain(format!("station {} is not on line {}", self.alight, line.id)))?;
        let ordered = match self.direction {
            Direction::Up => b < a,
            Direction::Down => b > a,
        };
        if !ordered {
            return Err(Error::Domain(format!(
                "{}->{} is not in {} travel order on line {}",
                self.board, self.alight, self.direction, line.id
            )));
        }
        Ok((b, a))
    }
}

/// Serialized form of a path: what a path-set file carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub id: String,
    pub segments: Vec<PathSegment>,
    /// Static attributes in minutes (or counts), keyed by name.
    #[serde(default)]
    pub attributes: BTreeMap<String, f64>,
    /// Whether the passenger's persistent random effect enters this path's
    /// utility when the model attaches it to designated alternatives.
    #[serde(default)]
    pub panel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub spec: PathSpec,
    links: Vec<(LinkKey, f64)>,
    length_m: f64,
    path_size: f64,
}

impl Path {
    pub fn resolve(network: &Network, spec: PathSpec) -> Result<Self> {
        if spec.segments.is_empty() {
            return Err(Error::Domain(format!("path {} has no segments", spec.id)));
        }
        for pair in spec.segments.windows(2) {
            if pair[0].alight != pair[1].board {
                return Err(Error::Domain(format!(
                    "path {}: segment alighting at {} is followed by boarding at {}",
                    spec.id, pair[0].alight, pair[1].board
                )));
            }
        }
        let mut links = Vec::new();
        for seg in &spec.segments {
            for link in network.segment_links(seg)? {
                links.push((LinkKey::new(&link.from, &link.to), link.length_m));
            }
        }
        let length_m = links.iter().map(|(_, l)| l).sum();
        Ok(Path {
            spec,
            links,
            length_m,
            path_size: 1.0,
        })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn segments(&self) -> &[PathSegment] {
        &self.spec.segments
    }

    pub fn origin(&self) -> &str {
        &self.spec.segments[0].board
    }

    pub fn destination(&self) -> &str {
        &self.spec.segments[self.spec.segments.len() - 1].alight
    }

    pub fn links(&self) -> &[(LinkKey, f64)] {
        &self.links
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    /// Path-size factor within the choice set this path belongs to.
    pub fn path_size(&self) -> f64 {
        self.path_size
    }

    pub fn transfers(&self) -> usize {
        self.spec.segments.len() - 1
    }

    pub fn attribute(&self, name: &str) -> Option<f64> {
        self.spec.attributes.get(name).copied()
    }
}

/// All paths available between one origin and destination.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceSet {
    pub origin: String,
    pub destination: String,
    paths: Vec<Path>,
}

impl ChoiceSet {
    pub fn new(origin: &str, destination: &str, mut paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Domain(format!("empty choice set for {origin}-{destination}")));
        }
        let mut ids = BTreeSet::new();
        for p in &paths {
            if p.origin() != origin || p.destination() != destination {
                return Err(Error::Domain(format!(
                    "path {} runs {}-{}, not {origin}-{destination}",
                    p.id(),
                    p.origin(),
                    p.destination()
                )));
            }
            if !ids.insert(p.id().to_string()) {
                return Err(Error::Domain(format!("duplicate path id {}", p.id())));
            }
        }
        let sizes = paths
            .iter()
            .map(|p| path_size_among(p, &paths))
            .collect::<Result<Vec<_>>>()?;
        for (p, ps) in paths.iter_mut().zip(sizes) {
            p.path_size = ps;
        }
        Ok(ChoiceSet {
            origin: origin.to_string(),
            destination: destination.to_string(),
            paths,
        })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, id: &str) -> Option<&Path> {
        self.paths.iter().find(|p| p.id() == id)
    }
}

/// Path-size overlap factor of `path` within `choice_set`:
/// `(1 / L_m) * sum_{a in A_m} l_a / #{paths in the set using a}`.
pub fn path_size(path: &Path, choice_set: &ChoiceSet) -> Result<f64> {
    if choice_set.path(path.id()).is_none() {
        return Err(Error::Domain(format!(
            "path {} is not in the {}-{} choice set",
            path.id(),
            choice_set.origin,
            choice_set.destination
        )));
    }
    path_size_among(path, choice_set.paths())
}

fn path_size_among(path: &Path, paths: &[Path]) -> Result<f64> {
    if !(path.length_m > 0.0) {
        return Err(Error::Domain(format!("path {} has zero length", path.id())));
    }
    let mut usage: HashMap<&LinkKey, usize> = HashMap::new();
    for p in paths {
        let distinct: BTreeSet<&LinkKey> = p.links.iter().map(|(k, _)| k).collect();
        for k in distinct {
            *usage.entry(k).or_default() += 1;
        }
    }
    let mut seen = BTreeSet::new();
    let mut sum = 0.0;
    for (key, len) in &path.links {
        if !seen.insert(key) {
            continue;
        }
        if !(*len > 0.0) {
            return Err(Error::Domain(format!("link {}-{} has non-positive length", key.0, key.1)));
        }
        let shared = usage.get(key).copied().unwrap_or(1).max(1);
        sum += len / shared as f64;
    }
    Ok((sum / path.length_m).min(1.0))
}

/// Choice sets for every origin-destination pair, keyed by (origin, destination).
pub type PathSets = BTreeMap<(String, String), ChoiceSet>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopTime {
    pub station: String,
    pub arrival: Seconds,
    pub departure: Seconds,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRun {
    pub line: String,
    pub direction: Direction,
    /// Chronological dispatch order within the line and direction.
    pub run_id: u32,
    pub stops: Vec<StopTime>,
}

impl TrainRun {
    pub fn stop(&self, station: &str) -> Option<&StopTime> {
        self.stops.iter().find(|s| s.station == station)
    }
}

type ServiceKey = (String, Direction);

#[derive(Clone, Debug, Default)]
struct StationTimes {
    arrivals: Vec<Option<Seconds>>,
    departures: Vec<Option<Seconds>>,
}

#[derive(Clone, Debug)]
struct Service {
    first_run: u32,
    runs: Vec<TrainRun>,
    by_station: HashMap<String, StationTimes>,
}

/// Every train run of one service day, indexed by line, direction and run id.
#[derive(Clone, Debug)]
pub struct Timetable {
    services: BTreeMap<ServiceKey, Service>,
}

impl Timetable {
    pub fn new(mut runs: Vec<TrainRun>) -> Result<Self> {
        runs.sort_by(|a, b| (&a.line, a.direction, a.run_id).cmp(&(&b.line, b.direction, b.run_id)));
        let mut grouped: BTreeMap<ServiceKey, Vec<TrainRun>> = BTreeMap::new();
        for run in runs {
            grouped.entry((run.line.clone(), run.direction)).or_default().push(run);
        }
        let mut services = BTreeMap::new();
        for (key, runs) in grouped {
            let first_run = runs[0].run_id;
            for (i, run) in runs.iter().enumerate() {
                if run.run_id != first_run + i as u32 {
                    return Err(Error::Validation(format!(
                        "{} {}: run ids are not dense (expected {}, found {})",
                        key.0,
                        key.1,
                        first_run + i as u32,
                        run.run_id
                    )));
                }
                if run.stops.is_empty() {
                    return Err(Error::Validation(format!("{} {} run {} has no stops", key.0, key.1, run.run_id)));
                }
                for s in &run.stops {
                    if s.departure < s.arrival {
                        return Err(Error::Validation(format!(
                            "{} {} run {}: departs {} before arriving",
                            key.0, key.1, run.run_id, s.station
                        )));
                    }
                }
                for w in run.stops.windows(2) {
                    if w[1].arrival <= w[0].departure {
                        return Err(Error::Validation(format!(
                            "{} {} run {}: times do not increase from {} to {}",
                            key.0, key.1, run.run_id, w[0].station, w[1].station
                        )));
                    }
                }
            }
            let mut by_station: HashMap<String, StationTimes> = HashMap::new();
            for (i, run) in runs.iter().enumerate() {
                for s in &run.stops {
                    let entry = by_station.entry(s.station.clone()).or_insert_with(|| StationTimes {
                        arrivals: vec![None; runs.len()],
                        departures: vec![None; runs.len()],
                    });
                    entry.arrivals[i] = Some(s.arrival);
                    entry.departures[i] = Some(s.departure);
                }
            }
            for (station, times) in &by_station {
                let deps: Vec<Seconds> = times.departures.iter().flatten().copied().collect();
                let arrs: Vec<Seconds> = times.arrivals.iter().flatten().copied().collect();
                if deps.windows(2).any(|w| w[1] < w[0]) || arrs.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Validation(format!(
                        "{} {}: runs overtake each other at {station}",
                        key.0, key.1
                    )));
                }
            }
            services.insert(
                key,
                Service {
                    first_run,
                    runs,
                    by_station,
                },
            );
        }
        Ok(Timetable { services })
    }

    pub fn runs(&self) -> impl Iterator<Item = &TrainRun> {
        self.services.values().flat_map(|s| s.runs.iter())
    }

    fn service(&self, line: &str, direction: Direction) -> Result<&Service> {
        self.services
            .get(&(line.to_string(), direction))
            .ok_or_else(|| Error::Lookup(format!("no runs for line {line} {direction}")))
    }

    /// Range of run ids of a line and direction, as `(first, last)`.
    pub fn run_range(&self, line: &str, direction: Direction) -> Result<(u32, u32)> {
        let svc = self.service(line, direction)?;
        Ok((svc.first_run, svc.first_run + svc.runs.len() as u32 - 1))
    }

    pub fn run(&self, line: &str, direction: Direction, run_id: u32) -> Result<&TrainRun> {
        let svc = self.service(line, direction)?;
        run_id
            .checked_sub(svc.first_run)
            .and_then(|i| svc.runs.get(i as usize))
            .ok_or_else(|| Error::Lookup(format!("line {line} {direction} has no run {run_id}")))
    }

    fn station_time(
        &self,
        line: &str,
        direction: Direction,
        run_id: u32,
        station: &str,
        departure: bool,
    ) -> Result<Seconds> {
        let svc = self.service(line, direction)?;
        let idx = run_id
            .checked_sub(svc.first_run)
            .map(|i| i as usize)
            .filter(|&i| i < svc.runs.len())
            .ok_or_else(|| Error::Lookup(format!("line {line} {direction} has no run {run_id}")))?;
        let times = svc
            .by_station
            .get(station)
            .ok_or_else(|| Error::Domain(format!("line {line} {direction} never serves {station}")))?;
        let t = if departure {
            times.departures[idx]
        } else {
            times.arrivals[idx]
        };
        t.ok_or_else(|| Error::Domain(format!("run {run_id} of {line} {direction} does not serve {station}")))
    }

    /// Departure of `run_id` from `station`, or `None` when the run id lies
    /// outside the service (used for the open-ended window before the first run).
    pub fn departure_if_exists(&self, line: &str, direction: Direction, run_id: i64, station: &str) -> Option<Seconds> {
        let svc = self.services.get(&(line.to_string(), direction))?;
        let idx = run_id - svc.first_run as i64;
        if idx < 0 || idx as usize >= svc.runs.len() {
            return None;
        }
        svc.by_station.get(station)?.departures[idx as usize]
    }

    pub fn departure_at(&self, line: &str, direction: Direction, run_id: u32, station: &str) -> Result<Seconds> {
        self.station_time(line, direction, run_id, station, true)
    }

    pub fn arrival_at(&self, line: &str, direction: Direction, run_id: u32, station: &str) -> Result<Seconds> {
        self.station_time(line, direction, run_id, station, false)
    }

    /// Departure time of `run_id` at the segment's boarding station.
    pub fn train_departure(&self, segment: &PathSegment, run_id: u32) -> Result<Seconds> {
        self.departure_at(&segment.line, segment.direction, run_id, &segment.board)
    }

    /// Arrival time of `run_id` at the segment's alighting station.
    pub fn train_arrival(&self, segment: &PathSegment, run_id: u32) -> Result<Seconds> {
        let t = self.arrival_at(&segment.line, segment.direction, run_id, &segment.alight)?;
        let d = self.train_departure(segment, run_id)?;
        if t <= d {
            return Err(Error::Domain(format!(
                "run {run_id} reaches {} before leaving {}",
                segment.alight, segment.board
            )));
        }
        Ok(t)
    }

    /// Runs of the segment's service departing the boarding station within
    /// `[start, end]`, in run-id order.
    pub fn trains_for_segment(&self, segment: &PathSegment, start: Seconds, end: Seconds) -> Vec<u32> {
        let Ok(svc) = self.service(&segment.line, segment.direction) else {
            return Vec::new();
        };
        let Some(times) = svc.by_station.get(&segment.board) else {
            return Vec::new();
        };
        if end < start {
            return Vec::new();
        }
        // Departures are nondecreasing in run id, so the window is contiguous.
        let deps = &times.departures;
        let lo = deps.partition_point(|d| d.map_or(true, |d| d < start));
        let mut out = Vec::new();
        for (i, d) in deps.iter().enumerate().skip(lo) {
            match d {
                Some(d) if *d > end => break,
                Some(_) => {
                    let run = svc.first_run + i as u32;
                    if times_serve(svc, i, &segment.alight) {
                        out.push(run);
                    }
                }
                None => {}
            }
        }
        out
    }

    /// First run (by id) departing the segment's boarding station at or after `t`.
    pub fn first_departure_after(&self, segment: &PathSegment, t: f64) -> Option<u32> {
        let svc = self.service(&segment.line, segment.direction).ok()?;
        let times = svc.by_station.get(&segment.board)?;
        times
            .departures
            .iter()
            .enumerate()
            .find(|(i, d)| d.is_some_and(|d| d as f64 >= t) && times_serve(svc, *i, &segment.alight))
            .map(|(i, _)| svc.first_run + i as u32)
    }
}

fn times_serve(svc: &Service, idx: usize, station: &str) -> bool {
    svc.by_station
        .get(station)
        .is_some_and(|t| t.arrivals[idx].is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, stations: &[&str], lengths: &[f64]) -> Line {
        Line {
            id: id.into(),
            stations: stations.iter().map(|s| s.to_string()).collect(),
            links: stations
                .windows(2)
                .zip(lengths)
                .map(|(w, l)| Link {
                    from: w[0].into(),
                    to: w[1].into(),
                    length_m: *l,
                    run_time_s: l / 10.0,
                })
                .collect(),
        }
    }

    fn toy_network() -> Network {
        let stations = ["A", "B", "C", "E"]
            .iter()
            .map(|s| Station {
                id: s.to_string(),
                name: s.to_string(),
            })
            .collect();
        Network::new(
            stations,
            vec![
                line("red", &["A", "B", "C", "E"], &[2000.0, 1500.0, 1800.0]),
                line("blue", &["B", "E"], &[4000.0]),
            ],
        )
        .unwrap()
    }

    fn spec(id: &str, segs: Vec<PathSegment>) -> PathSpec {
        PathSpec {
            id: id.into(),
            segments: segs,
            attributes: BTreeMap::new(),
            panel: false,
        }
    }

    #[test]
    fn single_path_has_unit_path_size() {
        let net = toy_network();
        let p = Path::resolve(&net, spec("p", vec![PathSegment::new("red", Direction::Up, "A", "E")])).unwrap();
        let cs = ChoiceSet::new("A", "E", vec![p.clone()]).unwrap();
        assert_eq!(path_size(&p, &cs).unwrap(), 1.0);
    }

    #[test]
    fn identical_paths_halve_path_size() {
        let net = toy_network();
        let seg = vec![PathSegment::new("red", Direction::Up, "A", "E")];
        let p = Path::resolve(&net, spec("p", seg.clone())).unwrap();
        let q = Path::resolve(&net, spec("q", seg)).unwrap();
        let cs = ChoiceSet::new("A", "E", vec![p.clone(), q]).unwrap();
        assert!((path_size(&p, &cs).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overlapping_paths_use_link_share() {
        let net = toy_network();
        let via_c = Path::resolve(&net, spec("via_c", vec![PathSegment::new("red", Direction::Up, "A", "E")])).unwrap();
        let via_b = Path::resolve(
            &net,
            spec(
                "via_b",
                vec![
                    PathSegment::new("red", Direction::Up, "A", "B"),
                    PathSegment::new("blue", Direction::Up, "B", "E"),
                ],
            ),
        )
        .unwrap();
        let cs = ChoiceSet::new("A", "E", vec![via_c.clone(), via_b.clone()]).unwrap();
        // Hand summation: A-B (2000 m) is shared by both paths.
        let expect_c = (2000.0 / 2.0 + 1500.0 + 1800.0) / 5300.0;
        let expect_b = (2000.0 / 2.0 + 4000.0) / 6000.0;
        assert!((path_size(&via_c, &cs).unwrap() - expect_c).abs() < 1e-15);
        assert!((path_size(&via_b, &cs).unwrap() - expect_b).abs() < 1e-15);
        assert!((cs.path("via_b").unwrap().path_size() - expect_b).abs() < 1e-15);
    }

    #[test]
    fn path_outside_choice_set_is_rejected() {
        let net = toy_network();
        let p = Path::resolve(&net, spec("p", vec![PathSegment::new("red", Direction::Up, "A", "E")])).unwrap();
        let q = Path::resolve(&net, spec("q", vec![PathSegment::new("red", Direction::Up, "A", "E")])).unwrap();
        let cs = ChoiceSet::new("A", "E", vec![p]).unwrap();
        assert!(matches!(path_size(&q, &cs), Err(Error::Domain(_))));
    }

    #[test]
    fn segments_must_follow_direction_and_chain() {
        let net = toy_network();
        let backwards = spec("x", vec![PathSegment::new("red", Direction::Up, "C", "A")]);
        assert!(Path::resolve(&net, backwards).is_err());
        let broken = spec(
            "y",
            vec![
                PathSegment::new("red", Direction::Up, "A", "C"),
                PathSegment::new("blue", Direction::Up, "B", "E"),
            ],
        );
        assert!(Path::resolve(&net, broken).is_err());
    }

    fn run(line: &str, id: u32, times: &[(&str, Seconds, Seconds)]) -> TrainRun {
        TrainRun {
            line: line.into(),
            direction: Direction::Up,
            run_id: id,
            stops: times
                .iter()
                .map(|(s, a, d)| StopTime {
                    station: s.to_string(),
                    arrival: *a,
                    departure: *d,
                })
                .collect(),
        }
    }

    #[test]
    fn departure_and_arrival_lookups() {
        let tt = Timetable::new(vec![
            run("red", 0, &[("A", 28800, 28800), ("B", 29160, 29190)]),
            run("red", 1, &[("A", 28920, 28920), ("B", 29280, 29310)]),
        ])
        .unwrap();
        let seg = PathSegment::new("red", Direction::Up, "A", "B");
        assert_eq!(tt.train_departure(&seg, 0).unwrap(), 28800);
        assert_eq!(tt.train_arrival(&seg, 0).unwrap(), 29160);
        assert!(matches!(tt.train_departure(&seg, 7), Err(Error::Lookup(_))));
        let wrong = PathSegment::new("red", Direction::Up, "A", "Z");
        assert!(matches!(tt.train_arrival(&wrong, 0), Err(Error::Domain(_))));
        assert_eq!(tt.trains_for_segment(&seg, 28000, 30000), vec![0, 1]);
        assert!(tt.trains_for_segment(&seg, 28801, 28900).is_empty());
    }

    #[test]
    fn timetable_rejects_overtaking_and_gaps() {
        let overtaking = Timetable::new(vec![
            run("red", 0, &[("A", 100, 100), ("B", 400, 400)]),
            run("red", 1, &[("A", 90, 90), ("B", 300, 300)]),
        ]);
        assert!(overtaking.is_err());
        let gap = Timetable::new(vec![
            run("red", 0, &[("A", 100, 100), ("B", 400, 400)]),
            run("red", 2, &[("A", 200, 200), ("B", 500, 500)]),
        ]);
        assert!(gap.is_err());
    }
}
