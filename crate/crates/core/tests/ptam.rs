use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use railchoice::latent::AfcTrip;
use railchoice::ptam::{feasible_itineraries, Itinerary, Platform, Ptam};
use railchoice::simulator::{simulate, SimulationConfig, SimulationOutput};
use railchoice::transit::{Path, PathSegment, Seconds, Timetable};

fn small_run() -> SimulationOutput {
    simulate(&SimulationConfig {
        passengers: 60,
        trips_per_passenger: 2,
        calibration_passengers: 50,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

fn times(tt: &Timetable, seg: &PathSegment, run: u32) -> Option<(Seconds, Seconds)> {
    let r = tt.run(&seg.line, seg.direction, run).ok()?;
    Some((r.stop(&seg.board)?.departure, r.stop(&seg.alight)?.arrival))
}

/// Cross product of every run on every segment, filtered by the three
/// feasibility conditions.
fn cross_product(trip: &AfcTrip, path: &Path, tt: &Timetable) -> Vec<Itinerary> {
    let lists: Vec<Vec<(u32, Seconds, Seconds)>> = path
        .segments()
        .iter()
        .map(|seg| {
            let (lo, hi) = tt.run_range(&seg.line, seg.direction).unwrap();
            (lo..=hi)
                .filter_map(|k| times(tt, seg, k).map(|(d, a)| (k, d, a)))
                .filter(|(_, d, _)| *d >= trip.tap_in && *d <= trip.tap_out)
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; lists.len()];
    if lists.iter().any(|l| l.is_empty()) {
        return out;
    }
    'outer: loop {
        let picks: Vec<&(u32, Seconds, Seconds)> = idx.iter().zip(&lists).map(|(i, l)| &l[*i]).collect();
        let ok = picks[0].1 >= trip.tap_in
            && picks.windows(2).all(|w| w[1].1 >= w[0].2)
            && picks.last().unwrap().2 <= trip.tap_out;
        if ok {
            out.push(Itinerary(picks.iter().map(|p| p.0).collect()));
        }
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < lists[j].len() {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    out.sort();
    out
}

#[test]
fn enumeration_matches_cross_product_filter() {
    let out = small_run();
    let mut checked = 0;
    for trip in &out.trips {
        let set = &out.system.path_sets[&(trip.origin.clone(), trip.destination.clone())];
        for path in set.paths() {
            let mut got = feasible_itineraries(trip, path, &out.timetable, None).unwrap();
            got.sort();
            assert_eq!(got, cross_product(trip, path, &out.timetable), "{} on {}", trip.passenger_id, path.id());
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn logged_itineraries_are_feasible_and_replay() {
    let out = small_run();
    for (trip, truth) in out.trips.iter().zip(&out.ground_truth) {
        assert_eq!((trip.passenger_id.as_str(), trip.trip_index), (truth.passenger_id.as_str(), truth.trip_index));
        let set = &out.system.path_sets[&(trip.origin.clone(), trip.destination.clone())];
        let path = set.path(&truth.path_id).unwrap();
        let feasible = feasible_itineraries(trip, path, &out.timetable, None).unwrap();
        assert!(feasible.contains(&Itinerary(truth.runs.clone())));
        assert_eq!(
            railchoice::simulator::replay_tap_out(path, truth, &out.timetable).unwrap(),
            trip.tap_out
        );
    }
}

#[test]
fn tap_out_density_integrates_to_at_most_one() {
    let out = small_run();
    let walk = out.system.network.walk.as_ref().unwrap();
    let ptam = Ptam::new(&out.timetable, walk, &out.left_behind);
    for trip in out.trips.iter().take(8) {
        let set = &out.system.path_sets[&(trip.origin.clone(), trip.destination.clone())];
        for path in set.paths() {
            let mut mass = 0.0;
            for t in trip.tap_in..trip.tap_in + 3000 {
                let probe = AfcTrip {
                    tap_out: t,
                    ..trip.clone()
                };
                mass += ptam.tapout_probability(&probe, path).unwrap();
            }
            assert!(mass <= 1.0 + 1e-6, "{} {}: {mass}", trip.passenger_id, path.id());
            assert!(mass > 0.5);
        }
    }
}

/// Tap-out times generated by walking, waiting and being left behind.
fn monte_carlo(out: &SimulationOutput, path: &Path, tap_in: Seconds, draws: usize, rng: &mut ChaCha8Rng) -> Vec<Seconds> {
    let walk = out.system.network.walk.as_ref().unwrap();
    let segs = path.segments();
    (0..draws)
        .map(|_| {
            let mut ready = tap_in as f64 + walk.access(&segs[0].board).unwrap().sample(rng);
            for (j, seg) in segs.iter().enumerate() {
                if j > 0 {
                    ready += walk.transfer(&seg.board).unwrap().sample(rng);
                }
                let (lo, hi) = out.timetable.run_range(&seg.line, seg.direction).unwrap();
                let first = (lo..=hi)
                    .find(|k| times(&out.timetable, seg, *k).is_some_and(|(d, _)| d as f64 >= ready))
                    .unwrap();
                let eta = out
                    .left_behind
                    .vector(&Platform::boarding(seg), times(&out.timetable, seg, first).unwrap().0)
                    .unwrap();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = eta.len() - 1;
                for (i, p) in eta.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                ready = times(&out.timetable, seg, first + k as u32).unwrap().1 as f64;
            }
            (ready + walk.egress(path.destination()).unwrap().sample(rng)).round() as Seconds
        })
        .collect()
}

#[test]
fn densities_agree_with_monte_carlo_frequencies() {
    let out = small_run();
    let walk = out.system.network.walk.as_ref().unwrap();
    let ptam = Ptam::new(&out.timetable, walk, &out.left_behind);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 40_000;
    let bin = 30;
    let mut crowded = 0;
    let boards_at_c = |p: &Path| p.segments().iter().any(|s| s.board == "C" && s.line == "red");
    let sets: Vec<_> = out.system.path_sets.values().collect();
    let picked = sets.iter().filter(|s| s.paths().iter().any(boards_at_c)).take(3).chain(sets.iter().take(2));
    for set in picked {
        for path in set.paths() {
            if boards_at_c(path) {
                crowded += 1;
            }
            let tap_in = 8 * 3600 + 17;
            let mut hist: BTreeMap<Seconds, f64> = BTreeMap::new();
            for t in monte_carlo(&out, path, tap_in, draws, &mut rng) {
                *hist.entry((t - tap_in) / bin).or_default() += 1.0 / draws as f64;
            }
            let trip = AfcTrip {
                passenger_id: "mc".into(),
                trip_index: 0,
                origin: path.origin().into(),
                destination: path.destination().into(),
                tap_in,
                tap_out: tap_in,
            };
            let lo = *hist.keys().next().unwrap();
            let hi = *hist.keys().last().unwrap();
            for b in lo..=hi {
                let model: f64 = (b * bin..(b + 1) * bin)
                    .map(|s| {
                        let probe = AfcTrip {
                            tap_out: tap_in + s,
                            ..trip.clone()
                        };
                        ptam.tapout_probability(&probe, path).unwrap()
                    })
                    .sum();
                let freq = hist.get(&b).copied().unwrap_or(0.0);
                let sd = (model.max(1e-4) * (1.0 - model) / draws as f64).sqrt();
                assert!(
                    (freq - model).abs() <= 5.0 * sd + 2e-3,
                    "{} bin {b}: simulated {freq} vs density mass {model}",
                    path.id()
                );
            }
        }
    }
    assert!(crowded > 0);
}

#[test]
fn repeated_evaluation_is_bitwise_identical() {
    let out = small_run();
    let walk = out.system.network.walk.as_ref().unwrap();
    let ptam = Ptam::new(&out.timetable, walk, &out.left_behind);
    let set = &out.system.path_sets;
    let a = railchoice::dataset::compute_densities(&out.trips, set, &ptam).unwrap();
    let b = railchoice::dataset::compute_densities(&out.trips, set, &ptam).unwrap();
    let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
