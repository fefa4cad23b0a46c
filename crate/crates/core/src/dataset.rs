//! Joins AFC trips, passenger characteristics, path attributes and tap-out
//! densities into the per-passenger records used by the choice model.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::attributes::AttributeTable;
use crate::error::{Error, Result};
use crate::latent::{AfcTrip, EstimationData, ModelSpec, PassengerObservations, TripObservation, LOG_PATH_SIZE};
use crate::ptam::Ptam;
use crate::transit::{ChoiceSet, Path, PathSets};

/// Passenger characteristics by id, with named columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl ProfileTable {
    pub fn new(names: Vec<String>) -> Self {
        ProfileTable {
            names,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, passenger_id: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Validation(format!(
                "passenger {passenger_id}: {} values for {} characteristics",
                values.len(),
                self.names.len()
            )));
        }
        if self.rows.insert(passenger_id.to_string(), values).is_some() {
            return Err(Error::Validation(format!("duplicate passenger {passenger_id}")));
        }
        Ok(())
    }

    /// Values of the named columns for one passenger.
    pub fn select(&self, passenger_id: &str, columns: &[String]) -> Result<Vec<f64>> {
        let row = self
            .rows
            .get(passenger_id)
            .ok_or_else(|| Error::Lookup(format!("no characteristics for passenger {passenger_id}")))?;
        columns
            .iter()
            .map(|c| {
                self.names
                    .iter()
                    .position(|n| n == c)
                    .map(|i| row[i])
                    .ok_or_else(|| Error::Config(format!("passenger characteristic {c} is not in the profile table")))
            })
            .collect()
    }
}

pub fn choice_set<'a>(path_sets: &'a PathSets, trip: &AfcTrip) -> Result<&'a ChoiceSet> {
    path_sets
        .get(&(trip.origin.clone(), trip.destination.clone()))
        .ok_or_else(|| Error::Lookup(format!("no path set for OD {}-{}", trip.origin, trip.destination)))
}

/// Model attribute vector of one path; `log_ps` comes from the path itself,
/// everything else from `lookup`.
pub fn design_row(attributes: &[String], path: &Path, lookup: impl Fn(&str) -> Option<f64>) -> Result<Vec<f64>> {
    attributes
        .iter()
        .map(|a| {
            if a == LOG_PATH_SIZE {
                Ok(path.path_size().ln())
            } else {
                lookup(a)
                    .or_else(|| path.attribute(a))
                    .ok_or_else(|| Error::Lookup(format!("path {} has no attribute {a}", path.id())))
            }
        })
        .collect()
}

/// Tap-out density of every trip under every path of its choice set.
pub fn compute_densities(trips: &[AfcTrip], path_sets: &PathSets, ptam: &Ptam) -> Result<Vec<Vec<f64>>> {
    trips
        .par_iter()
        .map(|trip| {
            trip.validate()?;
            let cs = choice_set(path_sets, trip)?;
            cs.paths().iter().map(|p| ptam.tapout_probability(trip, p)).collect()
        })
        .collect()
}

/// Groups trips by passenger (sorted by id, trips by index) into model input.
pub fn assemble(
    spec: &ModelSpec,
    trips: &[AfcTrip],
    profiles: &ProfileTable,
    path_sets: &PathSets,
    attributes: &AttributeTable,
    densities: &[Vec<f64>],
) -> Result<EstimationData> {
    if densities.len() != trips.len() {
        return Err(Error::Validation(format!(
            "{} density rows for {} trips",
            densities.len(),
            trips.len()
        )));
    }
    let mut by_passenger: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in trips.iter().enumerate() {
        by_passenger.entry(t.passenger_id.as_str()).or_default().push(i);
    }
    let mut passengers = Vec::with_capacity(by_passenger.len());
    for (pid, mut idx) in by_passenger {
        idx.sort_by_key(|&i| trips[i].trip_index);
        let features = if spec.membership_features.is_empty() {
            Vec::new()
        } else {
            profiles.select(pid, &spec.membership_features)?
        };
        let mut obs = Vec::with_capacity(idx.len());
        for i in idx {
            let trip = &trips[i];
            let cs = choice_set(path_sets, trip)?;
            if densities[i].len() != cs.len() {
                return Err(Error::Validation(format!(
                    "trip {pid}#{}: {} densities for {} paths",
                    trip.trip_index,
                    densities[i].len(),
                    cs.len()
                )));
            }
            let rows = cs
                .paths()
                .iter()
                .map(|p| design_row(&spec.attributes, p, |a| attributes.get(pid, trip.trip_index, p.id(), a)))
                .collect::<Result<Vec<_>>>()?;
            obs.push(TripObservation {
                densities: densities[i].clone(),
                attributes: rows,
                panel: cs.paths().iter().map(|p| p.spec.panel).collect(),
            });
        }
        passengers.push(PassengerObservations {
            passenger_id: pid.to_string(),
            features,
            trips: obs,
        });
    }
    Ok(EstimationData { passengers })
}
