//! File formats exchanged between pipeline stages.
//!
//! CSV readers check the header row against the documented column list before
//! reading any record. Floats are written with Rust's shortest round-trip
//! formatting, so a write/read cycle is lossless and byte-stable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attributes::AttributeTable;
use crate::dataset::ProfileTable;
use crate::error::{Error, Result};
use crate::latent::AfcTrip;
use crate::ptam::{LeftBehindProfile, Platform};
use crate::simulator::JourneyRecord;
use crate::transit::{ChoiceSet, Direction, Network, Path, PathSets, PathSpec, Seconds, StopTime, Timetable, TrainRun};

pub const AFC_COLUMNS: [&str; 6] = ["passenger_id", "trip_idx", "origin", "destination", "tapin_s", "tapout_s"];
pub const TIMETABLE_COLUMNS: [&str; 6] = ["line_id", "direction", "run_id", "station_id", "arrival_s", "departure_s"];
pub const LEFT_BEHIND_COLUMNS: [&str; 6] = ["station", "line", "direction", "period_start_s", "k", "probability"];
pub const JOURNEY_COLUMNS: [&str; 5] = ["passenger_id", "od", "period", "tapin_s", "journey_s"];
pub const DENSITY_COLUMNS: [&str; 4] = ["passenger_id", "trip_idx", "path_id", "density"];
/// Leading columns of the path-attribute file; attribute names follow.
pub const ATTRIBUTE_KEY_COLUMNS: [&str; 3] = ["passenger_id", "trip_idx", "path_id"];
/// Wildcard used in left-behind and journey files.
pub const ANY: &str = "*";

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &FsPath) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn csv_error(path: &FsPath, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn write_record<W: Write>(w: &mut csv::Writer<W>, path: &FsPath, rec: &[String]) -> Result<()> {
    w.write_record(rec).map_err(|e| csv_error(path, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &FsPath) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV file and returns its header and records.
fn read_table(path: &FsPath) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_error(path, e))?);
    }
    Ok((header, rows))
}

fn expect_header(path: &FsPath, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(Error::Validation(format!(
            "{}: header is [{}], expected [{}]",
            path.display(),
            got.join(", "),
            want.join(", ")
        )));
    }
    Ok(())
}

fn field<T: FromStr>(path: &FsPath, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::parse(path, format!("line {line}: missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|e| Error::parse(path, format!("line {line}: {name} = {raw:?}: {e}")))
}

fn text(rec: &csv::StringRecord, i: usize) -> String {
    rec.get(i).unwrap_or("").trim().to_string()
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes a table whose first row is the header.
pub fn write_rows(path: &FsPath, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        write_record(&mut w, path, r)?;
    }
    finish(w, path)
}

pub fn write_json<T: Serialize + ?Sized>(path: &FsPath, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &FsPath) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::parse(path, e))
}

pub fn write_afc(path: &FsPath, trips: &[AfcTrip]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, &AFC_COLUMNS.map(String::from))?;
    for t in trips {
        write_record(
            &mut w,
            path,
            &[
                t.passenger_id.clone(),
                t.trip_index.to_string(),
                t.origin.clone(),
                t.destination.clone(),
                t.tap_in.to_string(),
                t.tap_out.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

pub fn read_afc(path: &FsPath) -> Result<Vec<AfcTrip>> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &AFC_COLUMNS)?;
    rows.iter()
        .map(|r| {
            let t = AfcTrip {
                passenger_id: text(r, 0),
                trip_index: field(path, r, 1, "trip_idx")?,
                origin: text(r, 2),
                destination: text(r, 3),
                tap_in: field(path, r, 4, "tapin_s")?,
                tap_out: field(path, r, 5, "tapout_s")?,
            };
            t.validate()?;
            Ok(t)
        })
        .collect()
}

pub fn write_profiles(path: &FsPath, profiles: &ProfileTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["passenger_id".to_string()];
    header.extend(profiles.names.iter().cloned());
    write_record(&mut w, path, &header)?;
    for (pid, values) in &profiles.rows {
        let mut rec = vec![pid.clone()];
        rec.extend(values.iter().map(|v| num(*v)));
        write_record(&mut w, path, &rec)?;
    }
    finish(w, path)
}

pub fn read_profiles(path: &FsPath) -> Result<ProfileTable> {
    let (header, rows) = read_table(path)?;
    if header.first().map(String::as_str) != Some("passenger_id") {
        return Err(Error::Validation(format!(
            "{}: first column must be passenger_id",
            path.display()
        )));
    }
    let names: Vec<String> = header[1..].to_vec();
    let mut table = ProfileTable::new(names.clone());
    for r in &rows {
        let values = names
            .iter()
            .enumerate()
            .map(|(i, n)| field(path, r, i + 1, n))
            .collect::<Result<Vec<f64>>>()?;
        table.insert(&text(r, 0), values)?;
    }
    Ok(table)
}

pub fn write_attributes(path: &FsPath, table: &AttributeTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ATTRIBUTE_KEY_COLUMNS.map(String::from).to_vec();
    header.extend(table.names().iter().cloned());
    write_record(&mut w, path, &header)?;
    for ((pid, trip, path_id), values) in table.sorted_rows() {
        let mut rec = vec![pid.clone(), trip.to_string(), path_id.clone()];
        rec.extend(values.iter().map(|v| num(*v)));
        write_record(&mut w, path, &rec)?;
    }
    finish(w, path)
}

pub fn read_attributes(path: &FsPath) -> Result<AttributeTable> {
    let (header, rows) = read_table(path)?;
    if header.len() < 3 || header[..3] != ATTRIBUTE_KEY_COLUMNS {
        return Err(Error::Validation(format!(
            "{}: header must start with {}",
            path.display(),
            ATTRIBUTE_KEY_COLUMNS.join(", ")
        )));
    }
    let names: Vec<String> = header[3..].to_vec();
    let mut table = AttributeTable::new(names.clone());
    for r in &rows {
        let values = names
            .iter()
            .enumerate()
            .map(|(i, n)| field(path, r, i + 3, n))
            .collect::<Result<Vec<f64>>>()?;
        table.insert(&text(r, 0), field(path, r, 1, "trip_idx")?, &text(r, 2), values)?;
    }
    Ok(table)
}

pub fn write_timetable(path: &FsPath, timetable: &Timetable) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, &TIMETABLE_COLUMNS.map(String::from))?;
    for run in timetable.runs() {
        for s in &run.stops {
            write_record(
                &mut w,
                path,
                &[
                    run.line.clone(),
                    run.direction.as_str().to_string(),
                    run.run_id.to_string(),
                    s.station.clone(),
                    s.arrival.to_string(),
                    s.departure.to_string(),
                ],
            )?;
        }
    }
    finish(w, path)
}

/// Stops of a run are taken in file order.
pub fn read_timetable(path: &FsPath) -> Result<Timetable> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &TIMETABLE_COLUMNS)?;
    let mut runs: BTreeMap<(String, Direction, u32), Vec<StopTime>> = BTreeMap::new();
    for r in &rows {
        let direction = Direction::parse(&text(r, 1))?;
        runs.entry((text(r, 0), direction, field(path, r, 2, "run_id")?))
            .or_default()
            .push(StopTime {
                station: text(r, 3),
                arrival: field(path, r, 4, "arrival_s")?,
                departure: field(path, r, 5, "departure_s")?,
            });
    }
    Timetable::new(
        runs.into_iter()
            .map(|((line, direction, run_id), stops)| TrainRun {
                line,
                direction,
                run_id,
                stops,
            })
            .collect(),
    )
}

pub fn write_network(path: &FsPath, network: &Network) -> Result<()> {
    write_json(path, network)
}

pub fn read_network(path: &FsPath) -> Result<Network> {
    let network: Network = read_json(path)?;
    network.validate()?;
    if let Some(w) = &network.walk {
        w.validate()?;
    }
    Ok(network)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSetEntry {
    pub origin: String,
    pub destination: String,
    pub paths: Vec<PathSpec>,
}

pub fn write_path_sets(path: &FsPath, sets: &PathSets) -> Result<()> {
    let entries: Vec<PathSetEntry> = sets
        .values()
        .map(|cs| PathSetEntry {
            origin: cs.origin.clone(),
            destination: cs.destination.clone(),
            paths: cs.paths().iter().map(|p| p.spec.clone()).collect(),
        })
        .collect();
    write_json(path, &entries)
}

/// Reads a path-set file and resolves every path against `network`.
pub fn read_path_sets(path: &FsPath, network: &Network) -> Result<PathSets> {
    let entries: Vec<PathSetEntry> = read_json(path)?;
    let mut sets = PathSets::new();
    for e in entries {
        let paths = e
            .paths
            .into_iter()
            .map(|p| Path::resolve(network, p))
            .collect::<Result<Vec<_>>>()?;
        let key = (e.origin.clone(), e.destination.clone());
        let cs = ChoiceSet::new(&e.origin, &e.destination, paths)?;
        if sets.insert(key, cs).is_some() {
            return Err(Error::Validation(format!(
                "{}: OD {}-{} listed twice",
                path.display(),
                e.origin,
                e.destination
            )));
        }
    }
    Ok(sets)
}

pub fn write_left_behind(path: &FsPath, profile: &LeftBehindProfile) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, &LEFT_BEHIND_COLUMNS.map(String::from))?;
    let mut rows: Vec<(String, String, String, String, Vec<f64>)> = Vec::new();
    if let Some(v) = profile.default_vector() {
        rows.push((ANY.into(), ANY.into(), ANY.into(), ANY.into(), v.to_vec()));
    }
    for (p, start, v) in profile.entries() {
        rows.push((
            p.station,
            p.line,
            p.direction.as_str().to_string(),
            start.map_or_else(|| ANY.to_string(), |s| s.to_string()),
            v,
        ));
    }
    for (station, line, dir, start, v) in rows {
        for (k, prob) in v.iter().enumerate() {
            write_record(
                &mut w,
                path,
                &[station.clone(), line.clone(), dir.clone(), start.clone(), k.to_string(), num(*prob)],
            )?;
        }
    }
    finish(w, path)
}

/// Rows with `*` in station, line and direction set the profile default;
/// `*` as the period start marks an all-day entry. `k` must run 0..C
/// without gaps within each cell.
pub fn read_left_behind(path: &FsPath, period_s: Seconds) -> Result<LeftBehindProfile> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &LEFT_BEHIND_COLUMNS)?;
    type Cell = (String, String, String, String);
    let mut cells: BTreeMap<Cell, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &rows {
        let key = (text(r, 0), text(r, 1), text(r, 2), text(r, 3));
        cells
            .entry(key)
            .or_default()
            .push((field(path, r, 4, "k")?, field(path, r, 5, "probability")?));
    }
    let mut profile = LeftBehindProfile::new(period_s)?;
    for ((station, line, dir, start), mut ks) in cells {
        ks.sort_by_key(|(k, _)| *k);
        if ks.iter().enumerate().any(|(i, (k, _))| i != *k) {
            return Err(Error::Validation(format!(
                "{}: cell {station}/{line}/{dir}/{start} does not list k = 0..C exactly once",
                path.display()
            )));
        }
        let v: Vec<f64> = ks.into_iter().map(|(_, p)| p).collect();
        let wild = [&station, &line, &dir].iter().filter(|s| s.as_str() == ANY).count();
        match (wild, start.as_str()) {
            (3, ANY) => profile.set_default(v)?,
            (0, _) => {
                let platform = Platform::new(&station, &line, Direction::parse(&dir)?);
                if start == ANY {
                    profile.set_all_day(platform, v)?;
                } else {
                    let s: Seconds = start
                        .parse()
                        .map_err(|e| Error::parse(path, format!("period_start_s {start:?}: {e}")))?;
                    profile.set_period(platform, s, v)?;
                }
            }
            _ => {
                return Err(Error::Validation(format!(
                    "{}: wildcards must cover station, line, direction and period together",
                    path.display()
                )))
            }
        }
    }
    Ok(profile)
}

pub fn write_journeys(path: &FsPath, records: &[JourneyRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, &JOURNEY_COLUMNS.map(String::from))?;
    for r in records {
        write_record(
            &mut w,
            path,
            &[
                r.passenger_id.clone(),
                r.od.clone(),
                r.period_start_s.map_or_else(|| ANY.to_string(), |s| s.to_string()),
                r.tap_in_s.map_or_else(|| ANY.to_string(), |s| s.to_string()),
                num(r.journey_s),
            ],
        )?;
    }
    finish(w, path)
}

pub fn read_journeys(path: &FsPath) -> Result<Vec<JourneyRecord>> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &JOURNEY_COLUMNS)?;
    rows.iter()
        .map(|r| {
            let optional = |i: usize, name: &str| -> Result<Option<Seconds>> {
                if text(r, i) == ANY {
                    Ok(None)
                } else {
                    field(path, r, i, name).map(Some)
                }
            };
            Ok(JourneyRecord {
                passenger_id: text(r, 0),
                od: text(r, 1),
                period_start_s: optional(2, "period")?,
                tap_in_s: optional(3, "tapin_s")?,
                journey_s: field(path, r, 4, "journey_s")?,
            })
        })
        .collect()
}

/// Tap-out densities of every trip and path, in trip then path order.
pub fn write_densities(path: &FsPath, trips: &[AfcTrip], path_sets: &PathSets, densities: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, &DENSITY_COLUMNS.map(String::from))?;
    for (t, d) in trips.iter().zip(densities) {
        let cs = crate::dataset::choice_set(path_sets, t)?;
        for (p, v) in cs.paths().iter().zip(d) {
            write_record(
                &mut w,
                path,
                &[t.passenger_id.clone(), t.trip_index.to_string(), p.id().to_string(), num(*v)],
            )?;
        }
    }
    finish(w, path)
}

/// Reads densities back into the row layout of `trips`.
pub fn read_densities(path: &FsPath, trips: &[AfcTrip], path_sets: &PathSets) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &DENSITY_COLUMNS)?;
    let mut map: BTreeMap<(String, u32, String), f64> = BTreeMap::new();
    for r in &rows {
        map.insert(
            (text(r, 0), field(path, r, 1, "trip_idx")?, text(r, 2)),
            field(path, r, 3, "density")?,
        );
    }
    trips
        .iter()
        .map(|t| {
            let cs = crate::dataset::choice_set(path_sets, t)?;
            cs.paths()
                .iter()
                .map(|p| {
                    map.get(&(t.passenger_id.clone(), t.trip_index, p.id().to_string()))
                        .copied()
                        .ok_or_else(|| {
                            Error::Lookup(format!(
                                "{}: no density for {}#{} {}",
                                path.display(),
                                t.passenger_id,
                                t.trip_index,
                                p.id()
                            ))
                        })
                })
                .collect()
        })
        .collect()
}
