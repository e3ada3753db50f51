//! Run configuration: JSON schema, defaults, validation.
//!
//! Every entry point (CLI subcommands, harness experiments, tests) consumes
//! the same [`RunConfig`]. Missing keys fall back to the reference system
//! defaults listed per field; unknown keys are rejected so a typo cannot
//! silently run a different experiment. The Rician factor is entered in dB
//! and converted to linear exactly once, in [`RunConfig::system_params`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{SelectionStrategy, SolverConfig};
use crate::scenario::SystemParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub pathloss: PathlossSection,
    pub ris: RisSection,
    pub traffic: TrafficSection,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    /// Antennas per BS (N).
    pub n_antennas: usize,
    /// RIS elements (M); 0 disables the RIS path entirely.
    pub ris_elements: usize,
    /// Surviving BSs around the disconnected one (L).
    pub surviving_bs: usize,
    /// Total transmit power budget in watts.
    pub p_max_w: f64,
    /// Bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Receiver noise power in watts.
    pub noise_w: f64,
    /// Fronthaul capacity of each BS in bit/s (C_0).
    pub bbu_capacity_bps: f64,
    /// Inter-site distance of the hexagonal grid in meters (d_0).
    pub inter_site_m: f64,
    /// Rician factor for the RIS links, in dB.
    pub rician_factor_db: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n_antennas: 4,
            ris_elements: 512,
            surviving_bs: 7,
            p_max_w: 5.0,
            bandwidth_hz: 1e9,
            carrier_hz: 28e9,
            noise_w: 1e-12,
            bbu_capacity_bps: 1e9,
            inter_site_m: 100.0,
            rician_factor_db: 9.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathlossSection {
    /// Close-in pathloss exponent for the LOS RIS links.
    pub exponent_los: f64,
    /// Close-in pathloss exponent for the NLOS direct links.
    pub exponent_nlos: f64,
}

impl Default for PathlossSection {
    fn default() -> Self {
        Self {
            exponent_los: 2.0,
            exponent_nlos: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RisSection {
    /// RIS placement along the +x axis from the disconnected BS, as a
    /// fraction of the inter-site distance.
    pub offset_fraction: f64,
}

impl Default for RisSection {
    fn default() -> Self {
        Self {
            offset_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    /// Traffic intensity eta of the disconnected BS, in [0, 1].
    pub intensity: f64,
    /// Distance-bias weight alpha in [0, 1]; 0 is uniform load.
    pub alpha: f64,
    /// Distance-bias exponent gamma.
    pub gamma: f64,
    /// Std deviation of the per-BS load perturbation chi.
    pub sigma_chi: f64,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            intensity: 0.5,
            alpha: 0.0,
            gamma: 2.0,
            sigma_chi: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Outer iteration budget (counting the recorded initial state).
    pub max_outer_iterations: usize,
    /// Relative change of the objective that stops the outer loop. Zero
    /// disables early stopping and runs the full budget.
    pub outer_tolerance: f64,
    /// Iteration cap for each inner projected gradient ascent.
    pub max_inner_iterations: usize,
    /// Relative iterate-move tolerance for the inner ascents.
    pub gradient_tolerance: f64,
    /// Step shrink factor for backtracking line search, in (0, 1).
    pub backtracking_factor: f64,
    /// BS subset selection strategy.
    pub strategy: SelectionStrategy,
    /// Auxiliary regularization; defaults to 1e-6 / sqrt(N) when null.
    pub epsilon_reg: Option<f64>,
    /// Big-M bookkeeping constant in bit/s; defaults to 10 * C_0 when null.
    /// Never enters arithmetic.
    pub big_m_bps: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            outer_tolerance: 1e-4,
            max_inner_iterations: 500,
            gradient_tolerance: 1e-6,
            backtracking_factor: 0.5,
            strategy: SelectionStrategy::OuterEnumeration,
            epsilon_reg: None,
            big_m_bps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Traffic intensity grid for sweeps.
    pub eta_grid: Vec<f64>,
    /// Antenna count grid for sweeps.
    pub antenna_grid: Vec<usize>,
    /// Monte Carlo trials per sweep cell.
    pub trials: usize,
    /// Root seed; per-trial seeds are derived from it.
    pub base_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            eta_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            antenna_grid: vec![2, 4, 6],
            trials: 20,
            base_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory for tables and manifests.
    pub dir: String,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".to_string(),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutputFormat::Csv => write!(f, "csv"),
            OutputFormat::Json => write!(f, "json"),
        }
    }
}

impl RunConfig {
    /// Parse from JSON, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Range-check every field. Messages name the offending field so CLI
    /// users can fix their config without reading source.
    pub fn validate(&self) -> Result<()> {
        fn ensure(cond: bool, msg: &str) -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::invalid(msg.to_string()))
            }
        }

        let s = &self.system;
        ensure(s.n_antennas >= 1, "system.n_antennas must be >= 1")?;
        ensure(s.surviving_bs >= 1, "system.surviving_bs must be >= 1")?;
        ensure(s.p_max_w > 0.0 && s.p_max_w.is_finite(), "system.p_max_w must be positive")?;
        ensure(s.bandwidth_hz > 0.0 && s.bandwidth_hz.is_finite(), "system.bandwidth_hz must be positive")?;
        ensure(s.carrier_hz > 0.0 && s.carrier_hz.is_finite(), "system.carrier_hz must be positive")?;
        ensure(s.noise_w > 0.0 && s.noise_w.is_finite(), "system.noise_w must be positive (covariances need the sigma^2 I floor)")?;
        ensure(s.bbu_capacity_bps > 0.0 && s.bbu_capacity_bps.is_finite(), "system.bbu_capacity_bps must be positive")?;
        ensure(s.inter_site_m > 0.0 && s.inter_site_m.is_finite(), "system.inter_site_m must be positive")?;
        ensure(s.rician_factor_db.is_finite(), "system.rician_factor_db must be finite")?;

        let p = &self.pathloss;
        ensure(p.exponent_los > 0.0 && p.exponent_los.is_finite(), "pathloss.exponent_los must be positive")?;
        ensure(p.exponent_nlos > 0.0 && p.exponent_nlos.is_finite(), "pathloss.exponent_nlos must be positive")?;

        ensure(
            self.ris.offset_fraction > 0.0 && self.ris.offset_fraction.is_finite(),
            "ris.offset_fraction must be positive",
        )?;

        let t = &self.traffic;
        ensure((0.0..=1.0).contains(&t.intensity), "traffic.intensity must be in [0, 1]")?;
        ensure((0.0..=1.0).contains(&t.alpha), "traffic.alpha must be in [0, 1]")?;
        ensure(t.gamma > 0.0 && t.gamma.is_finite(), "traffic.gamma must be positive")?;
        ensure(t.sigma_chi >= 0.0 && t.sigma_chi.is_finite(), "traffic.sigma_chi must be nonnegative")?;

        let v = &self.solver;
        ensure(v.max_outer_iterations >= 1, "solver.max_outer_iterations must be >= 1")?;
        ensure(v.outer_tolerance >= 0.0 && v.outer_tolerance.is_finite(), "solver.outer_tolerance must be nonnegative")?;
        ensure(v.max_inner_iterations >= 1, "solver.max_inner_iterations must be >= 1")?;
        ensure(v.gradient_tolerance > 0.0 && v.gradient_tolerance.is_finite(), "solver.gradient_tolerance must be positive")?;
        ensure(
            v.backtracking_factor > 0.0 && v.backtracking_factor < 1.0,
            "solver.backtracking_factor must be in (0, 1)",
        )?;
        if let Some(e) = v.epsilon_reg {
            ensure(e >= 0.0 && e.is_finite(), "solver.epsilon_reg must be nonnegative")?;
        }
        if let Some(m) = v.big_m_bps {
            ensure(
                m >= self.system.bbu_capacity_bps,
                "solver.big_m_bps must be at least system.bbu_capacity_bps",
            )?;
        }

        let e = &self.experiment;
        ensure(!e.eta_grid.is_empty(), "experiment.eta_grid must not be empty")?;
        ensure(
            e.eta_grid.iter().all(|x| (0.0..=1.0).contains(x)),
            "experiment.eta_grid values must be in [0, 1]",
        )?;
        ensure(!e.antenna_grid.is_empty(), "experiment.antenna_grid must not be empty")?;
        ensure(
            e.antenna_grid.iter().all(|&n| n >= 1),
            "experiment.antenna_grid values must be >= 1",
        )?;
        ensure(e.trials >= 1, "experiment.trials must be >= 1")?;

        Ok(())
    }

    /// Physical system parameters with the Rician factor converted to linear.
    pub fn system_params(&self) -> SystemParams {
        let s = &self.system;
        SystemParams {
            n_antennas: s.n_antennas,
            ris_elements: s.ris_elements,
            surviving_bs: s.surviving_bs,
            p_max: s.p_max_w,
            bandwidth: s.bandwidth_hz,
            carrier: s.carrier_hz,
            noise_power: s.noise_w,
            bbu_capacity: s.bbu_capacity_bps,
            inter_site: s.inter_site_m,
            rician_factor: 10f64.powf(s.rician_factor_db / 10.0),
            exponent_los: self.pathloss.exponent_los,
            exponent_nlos: self.pathloss.exponent_nlos,
            ris_offset_fraction: self.ris.offset_fraction,
            big_m: self
                .solver
                .big_m_bps
                .unwrap_or(10.0 * s.bbu_capacity_bps),
            epsilon_reg: self
                .solver
                .epsilon_reg
                .unwrap_or(1e-6 / (s.n_antennas as f64).sqrt()),
            max_outer_iterations: self.solver.max_outer_iterations,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let v = &self.solver;
        SolverConfig {
            max_outer_iterations: v.max_outer_iterations,
            outer_tolerance: v.outer_tolerance,
            max_inner_iterations: v.max_inner_iterations,
            gradient_tolerance: v.gradient_tolerance,
            backtracking_factor: v.backtracking_factor,
            strategy: v.strategy,
            epsilon_reg: v.epsilon_reg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_reference_values() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.system.n_antennas, 4);
        assert_eq!(cfg.system.ris_elements, 512);
        assert_eq!(cfg.system.surviving_bs, 7);
        assert_eq!(cfg.system.p_max_w, 5.0);
        assert_eq!(cfg.system.bandwidth_hz, 1e9);
        assert_eq!(cfg.system.carrier_hz, 28e9);
        assert_eq!(cfg.system.noise_w, 1e-12);
        assert_eq!(cfg.system.bbu_capacity_bps, 1e9);
        assert_eq!(cfg.system.inter_site_m, 100.0);
        assert_eq!(cfg.system.rician_factor_db, 9.0);
        assert_eq!(cfg.experiment.trials, 20);
        assert_eq!(cfg.experiment.eta_grid.len(), 9);

        let params = cfg.system_params();
        // 9 dB converts to about 7.943 linear.
        assert!((params.rician_factor - 7.943).abs() < 0.001);
        // epsilon_reg default is 1e-6 / sqrt(N).
        assert!((params.epsilon_reg - 1e-6 / 2.0).abs() < 1e-18);
        assert_eq!(params.big_m, 1e10);
    }

    #[test]
    fn empty_json_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"system": {"n_antennas": 2}}"#).unwrap();
        assert_eq!(cfg.system.n_antennas, 2);
        assert_eq!(cfg.system.ris_elements, 512);
        assert_eq!(cfg.traffic.intensity, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"system": {"n_antenas": 2}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("n_antenas"), "message was: {msg}");
        assert!(matches!(err, Error::InvalidInput(_)));

        assert!(RunConfig::from_json(r#"{"sistem": {}}"#).is_err());
    }

    #[test]
    fn out_of_range_fields_name_themselves() {
        let mut cfg = RunConfig::default();
        cfg.traffic.alpha = 1.2;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("traffic.alpha"), "message was: {msg}");

        let mut cfg = RunConfig::default();
        cfg.system.noise_w = 0.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("noise_w"), "message was: {msg}");

        let mut cfg = RunConfig::default();
        cfg.solver.backtracking_factor = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn strategy_names_parse() {
        let cfg = RunConfig::from_json(r#"{"solver": {"strategy": "greedy"}}"#).unwrap();
        assert_eq!(cfg.solver.strategy, SelectionStrategy::Greedy);
        let cfg = RunConfig::from_json(r#"{"solver": {"strategy": "per-iter"}}"#).unwrap();
        assert_eq!(cfg.solver.strategy, SelectionStrategy::PerIterationEnumeration);
        assert!(RunConfig::from_json(r#"{"solver": {"strategy": "magic"}}"#).is_err());
    }
}
