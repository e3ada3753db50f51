//! Seeded Monte Carlo experiments and deterministic table export.
//!
//! Every experiment derives one seed per (cell, trial) from the configured
//! base seed and the cell's axis values. The RIS element count is kept out
//! of the derivation on purpose: the on/off variants of a cell see the same
//! direct channels and the same traffic draws, so their survivability
//! difference is a paired sample, not two independent ones.
//!
//! Exports contain no timestamps and no wall times, floats are printed with
//! a fixed format, and parallel trials are folded in index order, so rerunning
//! an experiment writes byte-identical files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{OutputFormat, RunConfig, TrafficSection};
use crate::error::Result;
use crate::numerics::derive_seed;
use crate::optimizer::{run_algorithm, SolveResult};
use crate::par;
use crate::scenario::build_scenario;

// Axis tags for seed derivation. Frozen: changing them moves every seed of
// every recorded experiment.
pub const AXIS_CONVERGENCE: u64 = 11;
pub const AXIS_SNAPSHOT: u64 = 12;
pub const AXIS_TRAFFIC: u64 = 13;
pub const AXIS_ANTENNA: u64 = 14;

/// Load shape across the surviving BSs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficPattern {
    /// Every BS carries the same intensity, no perturbation.
    Uniform,
    /// Load concentrates on the BSs nearest the failure, with a small
    /// random perturbation.
    Hotspot,
}

impl TrafficPattern {
    pub fn apply(self, traffic: &mut TrafficSection) {
        match self {
            TrafficPattern::Uniform => {
                traffic.alpha = 0.0;
                traffic.sigma_chi = 0.0;
            }
            TrafficPattern::Hotspot => {
                traffic.alpha = 0.7;
                traffic.gamma = 2.0;
                traffic.sigma_chi = 0.05;
            }
        }
    }

    fn id(self) -> u64 {
        match self {
            TrafficPattern::Uniform => 0,
            TrafficPattern::Hotspot => 1,
        }
    }
}

impl std::fmt::Display for TrafficPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrafficPattern::Uniform => write!(f, "uniform"),
            TrafficPattern::Hotspot => write!(f, "hotspot"),
        }
    }
}

/// Scenario seed of one convergence trial.
pub fn convergence_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base, &[AXIS_CONVERGENCE, trial as u64])
}

/// Scenario seed of one traffic-sweep trial. Deliberately independent of
/// the RIS element count so on/off runs pair up.
pub fn traffic_cell_seed(base: u64, eta: f64, pattern: TrafficPattern, trial: usize) -> u64 {
    derive_seed(base, &[AXIS_TRAFFIC, eta.to_bits(), pattern.id(), trial as u64])
}

/// Scenario seed of one antenna-sweep trial, likewise RIS-independent.
pub fn antenna_cell_seed(base: u64, n_antennas: usize, eta: f64, trial: usize) -> u64 {
    derive_seed(
        base,
        &[AXIS_ANTENNA, n_antennas as u64, eta.to_bits(), trial as u64],
    )
}

/// Build the scenario for `(config, seed)` and solve it.
pub fn solve_cell(config: &RunConfig, seed: u64) -> Result<SolveResult> {
    let scenario = build_scenario(config, seed)?;
    run_algorithm(&scenario, &config.solver_config())
}

/// Clone of `config` with the RIS disabled.
pub fn ris_off(config: &RunConfig) -> RunConfig {
    let mut off = config.clone();
    off.system.ris_elements = 0;
    off
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n - 1 denominator); zero below two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// A typed table row that knows its CSV shape.
pub trait Record: Serialize {
    fn headers() -> &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

/// Fixed float format of all exports: 9 significant digits, exponent form.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|&x| fmt_float(x))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub trial: usize,
    pub seed: u64,
    pub iteration: usize,
    pub objective_bps: f64,
    pub survivability: f64,
    pub delta: f64,
}

impl Record for ConvergenceRow {
    fn headers() -> &'static [&'static str] {
        &[
            "trial",
            "seed",
            "iteration",
            "objective_bps",
            "survivability",
            "delta",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.seed.to_string(),
            self.iteration.to_string(),
            fmt_float(self.objective_bps),
            fmt_float(self.survivability),
            fmt_float(self.delta),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub bs: usize,
    pub distance_m: f64,
    pub local_intensity: f64,
    pub carried_bps: f64,
    pub spare_bps: f64,
    pub rate_bps: f64,
    pub flow_bps: f64,
    pub selected: bool,
}

impl Record for SnapshotRow {
    fn headers() -> &'static [&'static str] {
        &[
            "bs",
            "distance_m",
            "local_intensity",
            "carried_bps",
            "spare_bps",
            "rate_bps",
            "flow_bps",
            "selected",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.bs.to_string(),
            fmt_float(self.distance_m),
            fmt_float(self.local_intensity),
            fmt_float(self.carried_bps),
            fmt_float(self.spare_bps),
            fmt_float(self.rate_bps),
            fmt_float(self.flow_bps),
            self.selected.to_string(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSweepRow {
    pub eta: f64,
    pub pattern: TrafficPattern,
    pub ris_elements: usize,
    pub trials: usize,
    pub mean_survivability: f64,
    pub std_survivability: f64,
    pub mean_total_bps: f64,
    pub std_total_bps: f64,
    pub survivability_trials: Vec<f64>,
    pub total_bps_trials: Vec<f64>,
}

impl Record for TrafficSweepRow {
    fn headers() -> &'static [&'static str] {
        &[
            "eta",
            "pattern",
            "ris_elements",
            "trials",
            "mean_survivability",
            "std_survivability",
            "mean_total_bps",
            "std_total_bps",
            "survivability_trials",
            "total_bps_trials",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            fmt_float(self.eta),
            self.pattern.to_string(),
            self.ris_elements.to_string(),
            self.trials.to_string(),
            fmt_float(self.mean_survivability),
            fmt_float(self.std_survivability),
            fmt_float(self.mean_total_bps),
            fmt_float(self.std_total_bps),
            fmt_list(&self.survivability_trials),
            fmt_list(&self.total_bps_trials),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaSweepRow {
    pub n_antennas: usize,
    pub eta: f64,
    pub ris_elements: usize,
    pub trials: usize,
    pub mean_total_bps: f64,
    pub std_total_bps: f64,
    pub mean_survivability: f64,
    pub std_survivability: f64,
    pub total_bps_trials: Vec<f64>,
    pub survivability_trials: Vec<f64>,
}

impl Record for AntennaSweepRow {
    fn headers() -> &'static [&'static str] {
        &[
            "n_antennas",
            "eta",
            "ris_elements",
            "trials",
            "mean_total_bps",
            "std_total_bps",
            "mean_survivability",
            "std_survivability",
            "total_bps_trials",
            "survivability_trials",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.n_antennas.to_string(),
            fmt_float(self.eta),
            self.ris_elements.to_string(),
            self.trials.to_string(),
            fmt_float(self.mean_total_bps),
            fmt_float(self.std_total_bps),
            fmt_float(self.mean_survivability),
            fmt_float(self.std_survivability),
            fmt_list(&self.total_bps_trials),
            fmt_list(&self.survivability_trials),
        ]
    }
}

/// One solver run per trial at the configured operating point, traces
/// flattened into rows.
pub fn run_convergence(config: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    config.validate()?;
    let trials = config.experiment.trials;
    let base = config.experiment.base_seed;
    let outcomes = par::map_indexed(trials, |t| solve_cell(config, convergence_seed(base, t)));
    let mut rows = Vec::new();
    for (t, outcome) in outcomes.into_iter().enumerate() {
        let result = outcome?;
        for row in &result.trace {
            rows.push(ConvergenceRow {
                trial: t,
                seed: convergence_seed(base, t),
                iteration: row.iteration,
                objective_bps: row.objective,
                survivability: row.survivability,
                delta: row.delta,
            });
        }
    }
    Ok(rows)
}

/// Solve one instance and lay out the per-BS view of the solution.
pub fn run_snapshot(config: &RunConfig) -> Result<(Vec<SnapshotRow>, SolveResult)> {
    config.validate()?;
    let seed = derive_seed(config.experiment.base_seed, &[AXIS_SNAPSHOT]);
    let scenario = build_scenario(config, seed)?;
    let result = run_algorithm(&scenario, &config.solver_config())?;
    let red = &result.redistribution;
    let rows = (0..scenario.params.surviving_bs)
        .map(|l| SnapshotRow {
            bs: l,
            distance_m: scenario.topology.bs_distances[l],
            local_intensity: scenario.traffic.local[l],
            carried_bps: scenario.traffic.carried[l],
            spare_bps: scenario.traffic.spare[l],
            rate_bps: red.rates[l],
            flow_bps: red.flows[l],
            selected: result.selection.contains(l),
        })
        .collect();
    Ok((rows, result))
}

struct TrafficCell {
    eta: f64,
    pattern: TrafficPattern,
    ris_elements: usize,
}

/// Sweep traffic intensity over both load patterns, with and without the
/// RIS. Rows appear as eta x {uniform, hotspot} x {configured M, 0}; a
/// config that already disables the RIS produces duplicate on/off rows.
pub fn run_traffic_sweep(config: &RunConfig) -> Result<Vec<TrafficSweepRow>> {
    config.validate()?;
    let trials = config.experiment.trials;
    let base = config.experiment.base_seed;
    let mut cells = Vec::new();
    for &eta in &config.experiment.eta_grid {
        for pattern in [TrafficPattern::Uniform, TrafficPattern::Hotspot] {
            for ris_elements in [config.system.ris_elements, 0] {
                cells.push(TrafficCell {
                    eta,
                    pattern,
                    ris_elements,
                });
            }
        }
    }

    let outcomes = par::map_indexed(cells.len() * trials, |i| -> Result<(f64, f64)> {
        let cell = &cells[i / trials];
        let trial = i % trials;
        let mut cfg = config.clone();
        cfg.traffic.intensity = cell.eta;
        cell.pattern.apply(&mut cfg.traffic);
        cfg.system.ris_elements = cell.ris_elements;
        let seed = traffic_cell_seed(base, cell.eta, cell.pattern, trial);
        let result = solve_cell(&cfg, seed)?;
        Ok((result.redistribution.survivability, result.redistribution.total))
    });
    let mut flat = Vec::with_capacity(cells.len() * trials);
    for outcome in outcomes {
        flat.push(outcome?);
    }

    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let slice = &flat[c * trials..(c + 1) * trials];
            let psi: Vec<f64> = slice.iter().map(|x| x.0).collect();
            let tot: Vec<f64> = slice.iter().map(|x| x.1).collect();
            TrafficSweepRow {
                eta: cell.eta,
                pattern: cell.pattern,
                ris_elements: cell.ris_elements,
                trials,
                mean_survivability: mean(&psi),
                std_survivability: sample_std(&psi),
                mean_total_bps: mean(&tot),
                std_total_bps: sample_std(&tot),
                survivability_trials: psi,
                total_bps_trials: tot,
            }
        })
        .collect())
}

struct AntennaCell {
    n_antennas: usize,
    eta: f64,
    ris_elements: usize,
}

/// Sweep the antenna count against traffic intensity, with and without the
/// RIS, keeping the configured load pattern.
pub fn run_antenna_sweep(config: &RunConfig) -> Result<Vec<AntennaSweepRow>> {
    config.validate()?;
    let trials = config.experiment.trials;
    let base = config.experiment.base_seed;
    let mut cells = Vec::new();
    for &n in &config.experiment.antenna_grid {
        for &eta in &config.experiment.eta_grid {
            for ris_elements in [config.system.ris_elements, 0] {
                cells.push(AntennaCell {
                    n_antennas: n,
                    eta,
                    ris_elements,
                });
            }
        }
    }

    let outcomes = par::map_indexed(cells.len() * trials, |i| -> Result<(f64, f64)> {
        let cell = &cells[i / trials];
        let trial = i % trials;
        let mut cfg = config.clone();
        cfg.system.n_antennas = cell.n_antennas;
        cfg.system.ris_elements = cell.ris_elements;
        cfg.traffic.intensity = cell.eta;
        let seed = antenna_cell_seed(base, cell.n_antennas, cell.eta, trial);
        let result = solve_cell(&cfg, seed)?;
        Ok((result.redistribution.total, result.redistribution.survivability))
    });
    let mut flat = Vec::with_capacity(cells.len() * trials);
    for outcome in outcomes {
        flat.push(outcome?);
    }

    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let slice = &flat[c * trials..(c + 1) * trials];
            let tot: Vec<f64> = slice.iter().map(|x| x.0).collect();
            let psi: Vec<f64> = slice.iter().map(|x| x.1).collect();
            AntennaSweepRow {
                n_antennas: cell.n_antennas,
                eta: cell.eta,
                ris_elements: cell.ris_elements,
                trials,
                mean_total_bps: mean(&tot),
                std_total_bps: sample_std(&tot),
                mean_survivability: mean(&psi),
                std_survivability: sample_std(&psi),
                total_bps_trials: tot,
                survivability_trials: psi,
            }
        })
        .collect())
}

fn render_csv<R: Record>(rows: &[R]) -> String {
    let mut out = R::headers().join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.fields().join(","));
        out.push('\n');
    }
    out
}

fn render_json<R: Record>(rows: &[R]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

/// Write one table as `<dir>/<name>.<format>` and return the path.
pub fn export_table<R: Record>(
    dir: &Path,
    name: &str,
    format: OutputFormat,
    rows: &[R],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.{format}"));
    let text = match format {
        OutputFormat::Csv => render_csv(rows),
        OutputFormat::Json => render_json(rows)?,
    };
    std::fs::write(&path, text)?;
    Ok(path)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    crate_version: &'a str,
    base_seed: u64,
    strategy: String,
    trials: usize,
    config: &'a RunConfig,
}

/// Write `<dir>/<name>_manifest.json`: the command, crate version, and the
/// full effective config. No timestamps, so reruns are byte-identical.
pub fn write_manifest(
    dir: &Path,
    name: &str,
    command: &str,
    config: &RunConfig,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}_manifest.json"));
    let manifest = Manifest {
        command,
        crate_version: env!("CARGO_PKG_VERSION"),
        base_seed: config.experiment.base_seed,
        strategy: config.solver.strategy.to_string(),
        trials: config.experiment.trials,
        config,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text)?;
    Ok(path)
}
