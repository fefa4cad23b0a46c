use std::fs;
use std::path::Path as FsPath;

use proptest::prelude::*;
use railchoice::calibration::{calibrate, CalibrationSettings};
use railchoice::io;
use railchoice::latent::{GridSpec, IntegrationGrid, LatentClassModel};
use railchoice::pipeline::{self, EstimateOptions, Observations};
use railchoice::simulator::{build_synthetic_network, default_model_spec, simulate, SimulationConfig};
use railchoice::transit::{ChoiceSet, Path};
use railchoice::walktime::{SpeedDistribution, WalkDistribution};

fn config(passengers: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        passengers,
        calibration_passengers: 300,
        seed,
        ..Default::default()
    }
}

fn dir_bytes(dir: &FsPath) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.path().is_dir() {
            for (name, bytes) in dir_bytes(&e.path()) {
                files.push((format!("{}/{name}", e.file_name().to_string_lossy()), bytes));
            }
        } else {
            files.push((e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()));
        }
    }
    files.sort();
    files
}

/// Simulation, densities and a short estimate written under `dir`.
fn run_stages(dir: &FsPath) {
    let out = simulate(&config(150, 77)).unwrap();
    let obs = Observations::from_simulation(&out);
    obs.save(dir).unwrap();
    io::write_left_behind(&dir.join("left_behind.csv"), &out.left_behind).unwrap();
    io::write_journeys(&dir.join("journeys.csv"), &out.calibration).unwrap();
    let (profile, fits) = calibrate(&out.calibration, &out.system.network, &out.timetable, &CalibrationSettings::default()).unwrap();
    io::write_left_behind(&dir.join("calibrated.csv"), &profile).unwrap();
    io::write_json(&dir.join("fits.json"), &fits).unwrap();
    let cache = dir.join("cache");
    fs::create_dir(&cache).unwrap();
    let ptam = obs.ptam_inputs(out.left_behind.clone()).unwrap();
    let d = pipeline::densities(&obs, &ptam, Some(&cache)).unwrap();
    let data = obs.assemble(&default_model_spec(), &d).unwrap();
    let options = EstimateOptions {
        starts: 2,
        ..Default::default()
    };
    let est = pipeline::estimate(&default_model_spec(), &data, &options).unwrap();
    io::write_json(&dir.join("estimate.json"), &est.result).unwrap();
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_stages(a.path());
    run_stages(b.path());
    let fa = dir_bytes(a.path());
    assert!(fa.len() >= 10);
    assert_eq!(fa, dir_bytes(b.path()));
}

#[test]
fn different_seeds_differ() {
    let a = simulate(&config(50, 1)).unwrap();
    let b = simulate(&config(50, 2)).unwrap();
    assert_ne!(a.trips, b.trips);
}

#[test]
fn saved_observations_load_back_unchanged() {
    let out = simulate(&config(80, 3)).unwrap();
    let obs = Observations::from_simulation(&out);
    let dir = tempfile::tempdir().unwrap();
    obs.save(dir.path()).unwrap();
    let back = Observations::load(dir.path()).unwrap();
    assert_eq!(back.trips, obs.trips);
    assert_eq!(back.network, obs.network);
    assert_eq!(back.path_sets, obs.path_sets);
    assert_eq!(back.profiles, obs.profiles);
    assert_eq!(back.attributes, obs.attributes);
    assert_eq!(back.timetable.runs().collect::<Vec<_>>(), obs.timetable.runs().collect::<Vec<_>>());

    io::write_left_behind(&dir.path().join("lb.csv"), &out.left_behind).unwrap();
    let lb = io::read_left_behind(&dir.path().join("lb.csv"), out.left_behind.period_s()).unwrap();
    assert_eq!(lb, out.left_behind);
    io::write_journeys(&dir.path().join("j.csv"), &out.calibration).unwrap();
    assert_eq!(io::read_journeys(&dir.path().join("j.csv")).unwrap(), out.calibration);

    let ptam = obs.ptam_inputs(out.left_behind.clone()).unwrap();
    let d = pipeline::densities(&obs, &ptam, None).unwrap();
    io::write_densities(&dir.path().join("d.csv"), &obs.trips, &obs.path_sets, &d).unwrap();
    let back = io::read_densities(&dir.path().join("d.csv"), &obs.trips, &obs.path_sets).unwrap();
    let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&d));
}

#[test]
fn trains_keep_their_order_along_every_path() {
    let out = simulate(&config(20, 4)).unwrap();
    for set in out.system.path_sets.values() {
        for path in set.paths() {
            for seg in path.segments() {
                let (lo, hi) = out.timetable.run_range(&seg.line, seg.direction).unwrap();
                let arrivals: Vec<_> = (lo..=hi).filter_map(|k| out.timetable.train_arrival(seg, k).ok()).collect();
                assert!(arrivals.windows(2).all(|w| w[0] < w[1]), "{} {}", seg.line, seg.board);
            }
        }
    }
}

#[test]
fn mixture_recovers_crowding_weights() {
    let cfg = SimulationConfig {
        passengers: 10,
        calibration_passengers: 10_000,
        seed: 12,
        ..Default::default()
    };
    let out = simulate(&cfg).unwrap();
    let (_, fits) = calibrate(&out.calibration, &out.system.network, &out.timetable, &CalibrationSettings::default()).unwrap();
    let cell = fits.iter().find(|f| f.probabilities.is_some()).unwrap();
    let got = cell.probabilities.as_ref().unwrap();
    for (g, w) in got.iter().zip([0.2, 0.5, 0.3]) {
        assert!((g - w).abs() <= 0.05, "{got:?}");
    }
    assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(cell.components.windows(2).all(|w| w[0].mean_s < w[1].mean_s));
}

#[test]
fn finer_grids_change_the_likelihood_less_and_less() {
    let out = simulate(&config(300, 9)).unwrap();
    let obs = Observations::from_simulation(&out);
    let ptam = obs.ptam_inputs(out.left_behind.clone()).unwrap();
    let d = pipeline::densities(&obs, &ptam, None).unwrap();
    let spec = default_model_spec();
    let data = obs.assemble(&spec, &d).unwrap();
    let truth = SimulationConfig::default().truth_vector().unwrap();
    let ll: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|step| {
            let grid = IntegrationGrid::new(GridSpec {
                lower: -3.0,
                upper: 3.0,
                step: *step,
            })
            .unwrap();
            let model = LatentClassModel::new(spec.clone()).unwrap().with_grid(grid);
            model.log_likelihood(&data, &truth).unwrap().value
        })
        .collect();
    let changes: Vec<f64> = ll.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(changes.windows(2).all(|c| c[1] < c[0]), "{ll:?}");
}

#[test]
fn path_size_of_a_lone_path_is_one() {
    let sys = build_synthetic_network(SpeedDistribution::new(1.2, 0.5).unwrap(), (30.0, 50.0), 1).unwrap();
    let path = sys.path_sets.values().next().unwrap().paths()[0].clone();
    let single = ChoiceSet::new(path.origin(), path.destination(), vec![path.clone()]).unwrap();
    assert_eq!(railchoice::transit::path_size(&path, &single).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn path_size_ignores_length_units(scale in 0.01f64..100.0) {
        let sys = build_synthetic_network(SpeedDistribution::new(1.2, 0.5).unwrap(), (30.0, 50.0), 1).unwrap();
        let mut scaled = sys.network.clone();
        for line in &mut scaled.lines {
            for link in &mut line.links {
                link.length_m *= scale;
            }
        }
        for set in sys.path_sets.values() {
            let paths: Vec<Path> = set
                .paths()
                .iter()
                .map(|p| Path::resolve(&scaled, p.spec.clone()).unwrap())
                .collect();
            let rescaled = ChoiceSet::new(&set.origin, &set.destination, paths).unwrap();
            for (a, b) in set.paths().iter().zip(rescaled.paths()) {
                let pa = railchoice::transit::path_size(a, set).unwrap();
                let pb = railchoice::transit::path_size(b, &rescaled).unwrap();
                prop_assert!((pa - pb).abs() <= 1e-12);
                prop_assert!(pa > 0.0 && pa <= 1.0);
            }
        }
    }

    #[test]
    fn walking_time_density_has_unit_mass(distance in 1.0f64..500.0, mean in 0.3f64..3.0, sd in 0.05f64..2.0) {
        let speed = SpeedDistribution::new(mean, sd).unwrap();
        let d = WalkDistribution::from_speed(distance, &speed).unwrap();
        let lo = d.quantile(1e-13).unwrap();
        let hi = d.quantile(1.0 - 1e-13).unwrap();
        // Simpson's rule in log time, where the lognormal density is Gaussian.
        let n = 4000;
        let (a, b) = (lo.ln(), hi.ln());
        let h = (b - a) / n as f64;
        let g = |u: f64| d.density(u.exp()) * u.exp();
        let mut s = g(a) + g(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * h);
        }
        let mass = s * h / 3.0;
        prop_assert!((mass - 1.0).abs() <= 1e-8, "mass {}", mass);
    }
}
