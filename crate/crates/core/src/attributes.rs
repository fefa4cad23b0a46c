//! Path attributes as seen by a passenger at tap-in.
//!
//! Times are in minutes. For every candidate path the timetable is traced
//! from tap-in with mean walking times and no left-behind: waits are the gaps
//! to the next departures, in-vehicle time is the ride of the trains caught.
//! Denied waiting is the expected left-behind count on each boarding platform
//! times the headway.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::latent::AfcTrip;
use crate::ptam::{LeftBehindProfile, Platform};
use crate::transit::{Path, Seconds, Timetable};
use crate::walktime::WalkModel;

pub const IVT: &str = "ivt";
pub const OVT: &str = "ovt";
pub const TRANSFERS: &str = "transfers";
pub const DENIED: &str = "denied";

/// Attribute names produced by [`schedule_attributes`], in file order.
pub const SCHEDULE_ATTRIBUTES: [&str; 4] = [IVT, OVT, TRANSFERS, DENIED];

/// Traces `path` from `tap_in` and returns its attributes.
pub fn schedule_attributes(
    path: &Path,
    tap_in: Seconds,
    timetable: &Timetable,
    walk: &WalkModel,
    left_behind: &LeftBehindProfile,
    headway_s: f64,
) -> Result<BTreeMap<String, f64>> {
    let segs = path.segments();
    let mut t = tap_in as f64 + walk.access(&segs[0].board)?.mean();
    let mut ovt = t - tap_in as f64;
    let mut ivt = 0.0;
    let mut denied = 0.0;
    for (j, seg) in segs.iter().enumerate() {
        if j > 0 {
            let w = walk.transfer(&seg.board)?.mean();
            t += w;
            ovt += w;
        }
        let run = timetable.first_departure_after(seg, t).ok_or_else(|| {
            Error::Validation(format!(
                "no {} {} departure from {} after {t:.0}s",
                seg.line, seg.direction, seg.board
            ))
        })?;
        let dep = timetable.train_departure(seg, run)? as f64;
        let arr = timetable.train_arrival(seg, run)? as f64;
        let eta = left_behind.vector(&Platform::boarding(seg), dep as Seconds)?;
        denied += eta.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>() * headway_s;
        ovt += dep - t;
        ivt += arr - dep;
        t = arr;
    }
    ovt += walk.egress(path.destination())?.mean();
    Ok(BTreeMap::from([
        (IVT.to_string(), ivt / 60.0),
        (OVT.to_string(), ovt / 60.0),
        (TRANSFERS.to_string(), path.transfers() as f64),
        (DENIED.to_string(), denied / 60.0),
    ]))
}

/// Per-trip, per-path attribute values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeTable {
    names: Vec<String>,
    rows: HashMap<(String, u32, String), Vec<f64>>,
}

impl AttributeTable {
    pub fn new(names: Vec<String>) -> Self {
        AttributeTable {
            names,
            rows: HashMap::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, passenger_id: &str, trip_index: u32, path_id: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Validation(format!(
                "{passenger_id}#{trip_index} {path_id}: {} attribute values for {} names",
                values.len(),
                self.names.len()
            )));
        }
        let key = (passenger_id.to_string(), trip_index, path_id.to_string());
        if self.rows.insert(key, values).is_some() {
            return Err(Error::Validation(format!(
                "duplicate attributes for {passenger_id}#{trip_index} {path_id}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, passenger_id: &str, trip_index: u32, path_id: &str, name: &str) -> Option<f64> {
        let col = self.names.iter().position(|n| n == name)?;
        self.rows
            .get(&(passenger_id.to_string(), trip_index, path_id.to_string()))
            .map(|v| v[col])
    }

    /// Rows sorted by passenger, trip and path.
    pub fn sorted_rows(&self) -> Vec<(&(String, u32, String), &Vec<f64>)> {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows
    }

    /// Schedule-traced attributes for every path of every trip.
    pub fn from_schedule(
        trips: &[AfcTrip],
        path_sets: &crate::transit::PathSets,
        timetable: &Timetable,
        walk: &WalkModel,
        left_behind: &LeftBehindProfile,
        headway_s: f64,
    ) -> Result<Self> {
        let mut table = AttributeTable::new(SCHEDULE_ATTRIBUTES.iter().map(|s| s.to_string()).collect());
        for trip in trips {
            let cs = path_sets
                .get(&(trip.origin.clone(), trip.destination.clone()))
                .ok_or_else(|| Error::Lookup(format!("no path set for {}-{}", trip.origin, trip.destination)))?;
            for path in cs.paths() {
                let a = schedule_attributes(path, trip.tap_in, timetable, walk, left_behind, headway_s)?;
                let values = SCHEDULE_ATTRIBUTES.iter().map(|n| a[*n]).collect();
                table.insert(&trip.passenger_id, trip.trip_index, path.id(), values)?;
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transit::{Direction, Line, Link, Network, PathSegment, PathSpec, Station, StopTime, TrainRun};
    use crate::walktime::SpeedDistribution;

    fn fixture() -> (Network, Timetable, WalkModel) {
        let stations = ["O", "X", "D"]
            .iter()
            .map(|s| Station {
                id: s.to_string(),
                name: s.to_string(),
            })
            .collect();
        let link = |a: &str, b: &str| Link {
            from: a.into(),
            to: b.into(),
            length_m: 3000.0,
            run_time_s: 300.0,
        };
        let lines = vec![
            Line {
                id: "L1".into(),
                stations: vec!["O".into(), "X".into()],
                links: vec![link("O", "X")],
            },
            Line {
                id: "L2".into(),
                stations: vec!["X".into(), "D".into()],
                links: vec![link("X", "D")],
            },
        ];
        let net = Network::new(stations, lines).unwrap();
        let mut runs = Vec::new();
        for k in 0..4u32 {
            for (line, a, b, t0) in [("L1", "O", "X", 1000), ("L2", "X", "D", 1400)] {
                let dep = t0 + 120 * k as i64;
                runs.push(TrainRun {
                    line: line.into(),
                    direction: Direction::Up,
                    run_id: k + 1,
                    stops: vec![
                        StopTime {
                            station: a.into(),
                            arrival: dep,
                            departure: dep,
                        },
                        StopTime {
                            station: b.into(),
                            arrival: dep + 300,
                            departure: dep + 300,
                        },
                    ],
                });
            }
        }
        let walk = WalkModel {
            speed: SpeedDistribution::new(1.2, 0.5).unwrap(),
            access_m: BTreeMap::from([("O".into(), 40.0)]),
            egress_m: BTreeMap::from([("D".into(), 40.0)]),
            transfer_m: BTreeMap::from([("X".into(), 40.0)]),
        };
        (net, Timetable::new(runs).unwrap(), walk)
    }

    #[test]
    fn traces_waits_and_rides() {
        let (net, tt, walk) = fixture();
        let path = Path::resolve(
            &net,
            PathSpec {
                id: "p".into(),
                segments: vec![
                    PathSegment::new("L1", Direction::Up, "O", "X"),
                    PathSegment::new("L2", Direction::Up, "X", "D"),
                ],
                attributes: BTreeMap::new(),
                panel: false,
            },
        )
        .unwrap();
        let mut lb = LeftBehindProfile::uncrowded();
        lb.set_all_day(Platform::new("X", "L2", Direction::Up), vec![0.5, 0.5]).unwrap();
        let a = schedule_attributes(&path, 1070, &tt, &walk, &lb, 120.0).unwrap();
        let w = walk.access("O").unwrap().mean();
        assert!(w > 35.0 && w < 45.0);
        // Platform at 1070 + w: run 2 (1120) to X at 1420, walk, L2 run 2 (1520) to D at 1820.
        assert!((a[IVT] - 600.0 / 60.0).abs() < 1e-12);
        let ovt = w + (1120.0 - 1070.0 - w) + w + (1520.0 - 1420.0 - w) + w;
        assert!((a[OVT] - ovt / 60.0).abs() < 1e-9);
        assert_eq!(a[TRANSFERS], 1.0);
        assert!((a[DENIED] - 1.0).abs() < 1e-12);
        assert!(schedule_attributes(&path, 5000, &tt, &walk, &lb, 120.0).is_err());
    }

    #[test]
    fn table_rejects_duplicates_and_bad_widths() {
        let mut t = AttributeTable::new(vec!["a".into(), "b".into()]);
        t.insert("p", 1, "m", vec![1.0, 2.0]).unwrap();
        assert!(t.insert("p", 1, "m", vec![1.0, 2.0]).is_err());
        assert!(t.insert("p", 2, "m", vec![1.0]).is_err());
        assert_eq!(t.get("p", 1, "m", "b"), Some(2.0));
        assert_eq!(t.get("p", 1, "m", "c"), None);
    }
}
