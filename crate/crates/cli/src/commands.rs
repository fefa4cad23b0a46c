use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use railchoice::calibration::{calibrate, CellFit};
use railchoice::estimator::LikelihoodRatioTest;
use railchoice::io;
use railchoice::pipeline::{
    compare, crowding_scenarios, densities, density_key, estimate, format_table, recovery, sensitivity,
    speed_scenarios, write_sensitivity, EstimateOptions, MultiStart, Observations, Recovery, Scenario, ScenarioResult,
    AFC_FILE, GROUND_TRUTH_FILE, JOURNEYS_FILE, LEFT_BEHIND_FILE, NETWORK_FILE, TIMETABLE_FILE, TRUTH_FILE,
};
use railchoice::simulator::simulate;
use railchoice::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, Command, EstimateArgs, FitArgs, ModelChoice, ReportArgs, SweepChoice};

pub const CALIBRATED_FILE: &str = "left_behind_calibrated.csv";
pub const CALIBRATION_FITS_FILE: &str = "calibration_fits.json";
pub const ESTIMATE_JSON: &str = "estimate.json";
pub const ESTIMATE_TABLE: &str = "estimate.txt";
pub const STARTS_FILE: &str = "starts.csv";
pub const SPEED_FILE: &str = "sensitivity_speed.csv";
pub const CROWDING_FILE: &str = "sensitivity_crowding.csv";
pub const REPORT_JSON: &str = "report.json";

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.simulation.seed = seed;
        cfg.estimation.init_seed = seed;
    }
    let out = &cli.global.out;
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(n) = a.passengers {
                cfg.simulation.passengers = n;
            }
            if let Some(n) = a.trips {
                cfg.simulation.trips_per_passenger = n;
            }
            cmd_simulate(&cfg, out)
        }
        Command::CalibrateLb(a) => {
            if let Some(n) = a.min_sample {
                cfg.calibration.min_sample = n;
            }
            if let Some(n) = a.max_left_behind {
                cfg.calibration.max_left_behind = n;
            }
            let data = data_dir(&cfg, a.data.data.as_deref(), out);
            cmd_calibrate(&cfg, &data, out)
        }
        Command::Estimate(a) => cmd_estimate(&mut cfg, a, out),
        Command::Report(a) => cmd_report(&mut cfg, a, out),
    }
}

fn data_dir(cfg: &RunConfig, flag: Option<&Path>, out: &Path) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.paths.data.clone())
        .unwrap_or_else(|| out.to_path_buf())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sim = simulate(&cfg.simulation)?;
    let obs = Observations::from_simulation(&sim);
    obs.save(out)?;
    io::write_left_behind(&out.join(LEFT_BEHIND_FILE), &sim.left_behind)?;
    io::write_journeys(&out.join(JOURNEYS_FILE), &sim.calibration)?;
    io::write_json(&out.join(TRUTH_FILE), &cfg.simulation.truth)?;
    io::write_json(&out.join(GROUND_TRUTH_FILE), &sim.ground_truth)?;
    io::write_json(&out.join("simulation.json"), &cfg.simulation)?;
    println!("{AFC_FILE}: {} trips of {} passengers", sim.trips.len(), cfg.simulation.passengers);
    println!("{JOURNEYS_FILE}: {} calibration journeys", sim.calibration.len());
    println!("{}: {} runs", TIMETABLE_FILE, sim.timetable.runs().count());
    println!("{NETWORK_FILE}: {} stations, {} lines", sim.system.network.stations.len(), sim.system.network.lines.len());
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let network = io::read_network(&data.join(NETWORK_FILE))?;
    let timetable = io::read_timetable(&data.join(TIMETABLE_FILE))?;
    let records = io::read_journeys(&data.join(JOURNEYS_FILE))?;
    let (profile, fits) = calibrate(&records, &network, &timetable, &cfg.calibration)?;
    for f in &fits {
        report_cell(f);
    }
    io::write_left_behind(&out.join(CALIBRATED_FILE), &profile)?;
    io::write_json(&out.join(CALIBRATION_FITS_FILE), &fits)
}

fn report_cell(f: &CellFit) {
    let period = f.period_start_s.map_or_else(|| "all day".to_string(), |s| format!("from {s}s"));
    match &f.probabilities {
        Some(p) => {
            let weights: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
            let means: Vec<String> = f.components.iter().map(|c| format!("{:.1}", c.mean_s)).collect();
            println!(
                "{} {} ({}): n = {}, left-behind probabilities [{}], component means [{}] s{}",
                f.od,
                period,
                f.platform.station,
                f.sample_size,
                weights.join(", "),
                means.join(", "),
                if f.note.is_empty() { String::new() } else { format!(", {}", f.note) }
            );
        }
        None => eprintln!("warning: {} {}: {}", f.od, period, f.note),
    }
}

struct Prepared {
    obs: Observations,
    base: railchoice::pipeline::PtamInputs,
    densities: Vec<Vec<f64>>,
    cache: Option<PathBuf>,
    key: String,
}

fn prepare(cfg: &mut RunConfig, a: &FitArgs, out: &Path) -> Result<Prepared> {
    if let Some(n) = a.starts {
        cfg.estimation.starts = n;
    }
    if let Some(s) = a.init_seed {
        cfg.estimation.init_seed = s;
    }
    let data = data_dir(cfg, a.data.data.as_deref(), out);
    let obs = Observations::load(&data)?;
    let lb_path = a
        .left_behind
        .clone()
        .or_else(|| cfg.paths.left_behind.clone())
        .unwrap_or_else(|| data.join(LEFT_BEHIND_FILE));
    let lb = io::read_left_behind(&lb_path, cfg.calibration.period_s)?;
    let base = obs.ptam_inputs(lb)?;
    let cache = (!a.no_cache).then(|| cfg.paths.cache.clone().unwrap_or_else(|| out.join("cache")));
    let densities = densities(&obs, &base, cache.as_deref())?;
    let key = density_key(&obs, &base);
    Ok(Prepared {
        obs,
        base,
        densities,
        cache,
        key,
    })
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    density_key: &'a str,
    options: &'a EstimateOptions,
    latent: Option<&'a MultiStart>,
    baseline: Option<&'a MultiStart>,
    lr_test: Option<&'a LikelihoodRatioTest>,
    recovery: Option<Recovery>,
}

fn write_starts(path: &Path, runs: &[(&str, &MultiStart)]) -> Result<()> {
    let mut rows = vec![["model", "start", "parameter", "init", "estimate", "log_likelihood", "converged"]
        .map(String::from)
        .to_vec()];
    for (model, m) in runs {
        for (s, st) in m.starts.iter().enumerate() {
            for (i, name) in m.result.names.iter().enumerate() {
                rows.push(vec![
                    model.to_string(),
                    s.to_string(),
                    name.clone(),
                    format!("{}", st.init[i]),
                    format!("{}", st.estimates[i]),
                    format!("{}", st.log_likelihood),
                    st.converged.to_string(),
                ]);
            }
        }
    }
    io::write_rows(path, &rows)
}

fn check_converged(runs: &[(&str, &MultiStart)], out: &Path) -> Result<()> {
    for (model, m) in runs {
        if !m.result.converged {
            return Err(Error::Convergence {
                iterations: m.result.iterations,
                message: format!("{model} model: {}; partial results in {}", m.result.status, out.display()),
            });
        }
    }
    Ok(())
}

fn cmd_estimate(cfg: &mut RunConfig, a: &EstimateArgs, out: &Path) -> Result<()> {
    let p = prepare(cfg, &a.fit, out)?;
    let data = data_dir(cfg, a.fit.data.data.as_deref(), out);
    let truth_path = a.truth.clone().or_else(|| cfg.paths.truth.clone()).or_else(|| {
        let d = data.join(TRUTH_FILE);
        d.exists().then_some(d)
    });
    let truth: Option<BTreeMap<String, f64>> = truth_path.as_deref().map(io::read_json).transpose()?;
    let spec = cfg.model();
    let (latent, baseline, lr) = match a.model {
        ModelChoice::Latent if spec.classes.len() > 1 => {
            let c = compare(&spec, &p.obs, &p.densities, &cfg.estimation)?;
            (Some(c.latent), c.baseline, Some(c.lr_test))
        }
        _ => {
            let spec = spec.single_class();
            let b = estimate(&spec, &p.obs.assemble(&spec, &p.densities)?, &cfg.estimation)?;
            (None, b, None)
        }
    };
    let headline = latent.as_ref().unwrap_or(&baseline);
    let rec = match &truth {
        Some(t) if latent.is_some() => Some(recovery(&headline.result, t)?),
        _ => None,
    };
    let table = match &latent {
        Some(l) => format_table(&l.result, Some(&baseline.result), lr.as_ref(), truth.as_ref()),
        None => format_table(&baseline.result, None, None, truth.as_ref()),
    };
    let mut runs = Vec::new();
    if let Some(l) = &latent {
        runs.push(("latent", l));
    }
    runs.push(("baseline", &baseline));
    io::write_json(
        &out.join(ESTIMATE_JSON),
        &EstimateOutput {
            density_key: &p.key,
            options: &cfg.estimation,
            latent: latent.as_ref(),
            baseline: Some(&baseline),
            lr_test: lr.as_ref(),
            recovery: rec.clone(),
        },
    )?;
    std::fs::write(out.join(ESTIMATE_TABLE), &table).map_err(|e| Error::Io {
        path: out.join(ESTIMATE_TABLE),
        source: e,
    })?;
    write_starts(&out.join(STARTS_FILE), &runs)?;
    print!("{table}");
    if let Some(r) = &rec {
        println!(
            "mean absolute relative error {:.1}%, largest {:.1}%",
            100.0 * r.mean_abs_relative_error,
            100.0 * r.max_abs_relative_error
        );
    }
    for (model, m) in &runs {
        println!(
            "{model}: {} starts, {} converged, max spread {:.3e}",
            m.starts.len(),
            m.starts.iter().filter(|s| s.converged).count(),
            m.spread
        );
    }
    check_converged(&runs, out)
}

#[derive(Serialize)]
struct ReportOutput<'a> {
    density_key: &'a str,
    reference: &'a MultiStart,
    speed: &'a [ScenarioResult],
    crowding: &'a [ScenarioResult],
}

fn cmd_report(cfg: &mut RunConfig, a: &ReportArgs, out: &Path) -> Result<()> {
    let p = prepare(cfg, &a.fit, out)?;
    let spec = cfg.model();
    let reference = estimate(&spec, &p.obs.assemble(&spec, &p.densities)?, &cfg.estimation)?;
    let run = |wanted: bool, scenarios: Vec<Scenario>| -> Result<Vec<ScenarioResult>> {
        if !wanted {
            return Ok(Vec::new());
        }
        sensitivity(
            &spec,
            &p.obs,
            &p.base,
            &reference.result,
            &scenarios,
            &cfg.estimation.optimizer,
            p.cache.as_deref(),
        )
    };
    let speed = run(a.sweep != SweepChoice::Crowding, speed_scenarios())?;
    let crowding = run(a.sweep != SweepChoice::Speed, crowding_scenarios())?;
    if !speed.is_empty() {
        write_sensitivity(&out.join(SPEED_FILE), &reference.result, &speed)?;
    }
    if !crowding.is_empty() {
        write_sensitivity(&out.join(CROWDING_FILE), &reference.result, &crowding)?;
    }
    io::write_json(
        &out.join(REPORT_JSON),
        &ReportOutput {
            density_key: &p.key,
            reference: &reference,
            speed: &speed,
            crowding: &crowding,
        },
    )?;
    for r in speed.iter().chain(&crowding) {
        let change = railchoice::pipeline::relative_change(&reference.result, &r.result);
        let worst = change.iter().copied().fold(0.0, f64::max);
        println!(
            "{:?} {:<18} LL {:>12.3}  largest relative change {:>6.1}%{}",
            r.scenario.sweep,
            r.scenario.label,
            r.result.log_likelihood,
            100.0 * worst,
            if r.result.converged { "" } else { " (not converged)" }
        );
    }
    Ok(())
}
