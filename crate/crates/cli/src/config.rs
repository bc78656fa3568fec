//! Scenario files: JSON, `schema: 1`, SI quantities in unit-suffixed keys.

#![allow(non_snake_case)]

use std::path::Path;

use phbt_core::counting::{calibrate_heating, OccupancyTarget, PredictOptions};
use phbt_core::dynamics::{DeviceParams, HeatingModel, PulseSchedule};
use phbt_core::inference::HeraldPolicy;
use phbt_core::ode::SolverOptions;
use phbt_core::trajectories::{DetectorModel, SimulationConfig};
use phbt_core::Window;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    #[serde(default)]
    pub device: DeviceBlock,
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub heating: HeatingBlock,
    #[serde(default = "paper_detectors")]
    pub detectors: [DetectorBlock; 2],
    #[serde(default)]
    pub run: RunBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceBlock {
    pub g0_over_2pi_kHz: f64,
    pub kappa_over_2pi_MHz: f64,
    pub kappa_e_over_kappa: f64,
    pub omega_m_over_2pi_GHz: f64,
    pub wavelength_nm: f64,
    pub Q_m: f64,
}

impl Default for DeviceBlock {
    fn default() -> Self {
        Self {
            g0_over_2pi_kHz: 869.0,
            kappa_over_2pi_MHz: 846.0,
            kappa_e_over_kappa: 0.5,
            omega_m_over_2pi_GHz: 5.25,
            wavelength_nm: 1554.35,
            Q_m: 3.8e5,
        }
    }
}

/// Pump strength is given either as an energy or as a target scattering
/// probability, never both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_energy_fJ: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_p_b: Option<f64>,
    pub read_energy_fJ: f64,
    #[serde(default = "default_fwhm")]
    pub fwhm_ns: f64,
    pub delay_ns: f64,
    #[serde(default = "default_period")]
    pub period_us: f64,
}

fn default_fwhm() -> f64 {
    32.0
}

fn default_period() -> f64 {
    50.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Onset {
    Pump,
    Read,
}

/// Constant absorption influx switched on one FWHM before the named pulse
/// centre, shifted by `offset_ns`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluxSource {
    pub onset: Onset,
    #[serde(default)]
    pub offset_ns: f64,
    /// Phonons per microsecond.
    pub rate_per_us: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HeatingTarget {
    /// Read occupation after a D1 herald.
    HeraldedOccupation(f64),
    /// Read occupation in every cycle.
    UnconditionalOccupation(f64),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingBlock {
    #[serde(default)]
    pub n_init: f64,
    #[serde(default)]
    pub bath_n: f64,
    #[serde(default)]
    pub influx: Vec<InfluxSource>,
    /// Rescales every influx source until the target occupation is met.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<HeatingTarget>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    pub eta: f64,
    #[serde(default)]
    pub dark_rate_Hz: f64,
    #[serde(default)]
    pub dead_time_ns: f64,
}

fn paper_detectors() -> [DetectorBlock; 2] {
    DetectorModel::paper().map(|d| DetectorBlock {
        eta: d.eta,
        dark_rate_Hz: d.dark_rate,
        dead_time_ns: d.dead_time * 1e9,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub n_cycles: u64,
    pub seed: u64,
    pub dim: usize,
    /// Herald classes used by the cycle sampler.
    pub classes: usize,
    /// Relative integrator tolerance.
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub herald_window_ns: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_window_ns: Option<[f64; 2]>,
    pub herald_policy: HeraldPolicy,
    pub delta_n: i64,
    pub splitter_ratio: f64,
    /// Refuse simulations longer than this.
    pub max_cycles: u64,
    /// Herald count assumed when a prediction is given error bars.
    pub n_heralds: u64,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            n_cycles: 100_000,
            seed: 1,
            dim: 50,
            classes: 6,
            tol: 1e-8,
            herald_window_ns: None,
            read_window_ns: None,
            herald_policy: HeraldPolicy::D1,
            delta_n: 0,
            splitter_ratio: 0.5,
            max_cycles: 100_000_000,
            n_heralds: 1_200_000,
        }
    }
}

/// Inputs for the sideband calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInput {
    pub schema: u32,
    #[serde(default)]
    pub device: DeviceBlock,
    pub C_r: f64,
    pub C_b: f64,
    pub eta_sum: f64,
    pub E_probe_fJ: f64,
}

/// Reads a JSON file; parse errors carry the path of the offending field.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Config(format!("{}: {at}: {}", path.display(), e.inner()))
    })
}

fn check(path: &str, ok: bool, what: &str, v: f64) -> Result<(), CliError> {
    if ok && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{path}: {what}, got {v}")))
    }
}

fn core(path: &str) -> impl Fn(phbt_core::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{path}: {e}"))
}

fn check_schema(v: u32) -> Result<(), CliError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::Config(format!("schema: unsupported version {v}, expected {SCHEMA_VERSION}")))
    }
}

fn window(path: &str, w: Option<[f64; 2]>) -> Result<Option<Window>, CliError> {
    match w {
        None => Ok(None),
        Some([a, b]) => {
            check(path, a >= 0.0 && b > a, "needs 0 <= start < end", b - a)?;
            Ok(Some(Window::new(a * 1e-9, b * 1e-9)))
        }
    }
}

impl DeviceBlock {
    pub fn build(&self) -> Result<DeviceParams, CliError> {
        check("device.g0_over_2pi_kHz", self.g0_over_2pi_kHz > 0.0, "must be positive", self.g0_over_2pi_kHz)?;
        check("device.kappa_over_2pi_MHz", self.kappa_over_2pi_MHz > 0.0, "must be positive", self.kappa_over_2pi_MHz)?;
        check(
            "device.kappa_e_over_kappa",
            self.kappa_e_over_kappa > 0.0 && self.kappa_e_over_kappa <= 1.0,
            "must be in (0, 1]",
            self.kappa_e_over_kappa,
        )?;
        check("device.omega_m_over_2pi_GHz", self.omega_m_over_2pi_GHz > 0.0, "must be positive", self.omega_m_over_2pi_GHz)?;
        check("device.wavelength_nm", self.wavelength_nm > 0.0, "must be positive", self.wavelength_nm)?;
        check("device.Q_m", self.Q_m > 0.0, "must be positive", self.Q_m)?;
        DeviceParams::from_lab_units(
            self.g0_over_2pi_kHz,
            self.kappa_over_2pi_MHz,
            self.kappa_e_over_kappa,
            self.omega_m_over_2pi_GHz,
            self.wavelength_nm,
            self.Q_m,
        )
        .map_err(core("device"))
    }
}

impl ScheduleBlock {
    pub fn build(&self, device: &DeviceParams) -> Result<PulseSchedule, CliError> {
        let pump = match (self.pump_energy_fJ, self.pump_p_b) {
            (Some(e), None) => {
                check("schedule.pump_energy_fJ", e >= 0.0, "must be non-negative", e)?;
                e * 1e-15
            }
            (None, Some(p)) => {
                check("schedule.pump_p_b", (0.0..1.0).contains(&p), "must be in [0, 1)", p)?;
                device.energy_for_exponent(p.ln_1p())
            }
            _ => {
                return Err(CliError::Config(
                    "schedule: give exactly one of pump_energy_fJ and pump_p_b".into(),
                ))
            }
        };
        check("schedule.read_energy_fJ", self.read_energy_fJ >= 0.0, "must be non-negative", self.read_energy_fJ)?;
        check("schedule.fwhm_ns", self.fwhm_ns > 0.0, "must be positive", self.fwhm_ns)?;
        check("schedule.delay_ns", self.delay_ns > 0.0, "must be positive", self.delay_ns)?;
        check("schedule.period_us", self.period_us > 0.0, "must be positive", self.period_us)?;
        PulseSchedule::new(
            pump,
            self.read_energy_fJ * 1e-15,
            self.fwhm_ns * 1e-9,
            self.delay_ns * 1e-9,
            self.period_us * 1e-6,
        )
        .map_err(core("schedule"))
    }
}

impl HeatingBlock {
    /// Influx model before any calibration.
    pub fn base(&self, schedule: &PulseSchedule) -> Result<HeatingModel, CliError> {
        check("heating.n_init", self.n_init >= 0.0, "must be non-negative", self.n_init)?;
        check("heating.bath_n", self.bath_n >= 0.0, "must be non-negative", self.bath_n)?;
        let mut sources = Vec::with_capacity(self.influx.len());
        for (i, s) in self.influx.iter().enumerate() {
            let path = format!("heating.influx[{i}]");
            check(&format!("{path}.rate_per_us"), s.rate_per_us >= 0.0, "must be non-negative", s.rate_per_us)?;
            check(&format!("{path}.offset_ns"), true, "must be finite", s.offset_ns)?;
            let pulse = match s.onset {
                Onset::Pump => &schedule.pump,
                Onset::Read => &schedule.read,
            };
            sources.push((pulse.center - pulse.fwhm + s.offset_ns * 1e-9, s.rate_per_us * 1e6));
        }
        HeatingModel::with_constant_influx(self.n_init, self.bath_n, &sources, schedule.horizon()).map_err(core("heating"))
    }
}

impl DetectorBlock {
    fn build(&self, i: usize) -> Result<DetectorModel, CliError> {
        let path = format!("detectors[{i}]");
        check(&format!("{path}.eta"), (0.0..=1.0).contains(&self.eta), "must be in [0, 1]", self.eta)?;
        check(&format!("{path}.dark_rate_Hz"), self.dark_rate_Hz >= 0.0, "must be non-negative", self.dark_rate_Hz)?;
        check(&format!("{path}.dead_time_ns"), self.dead_time_ns >= 0.0, "must be non-negative", self.dead_time_ns)?;
        DetectorModel::new(self.eta, self.dark_rate_Hz, self.dead_time_ns * 1e-9).map_err(core("detectors"))
    }
}

/// Validated core objects for one scenario. Heating calibration, if any,
/// has already been carried out.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub device: DeviceParams,
    pub schedule: PulseSchedule,
    pub heating: HeatingModel,
    pub sim: SimulationConfig,
    pub opts: PredictOptions,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, CliError> {
        check_schema(config.schema)?;
        let device = config.device.build()?;
        let schedule = config.schedule.build(&device)?;
        let detectors = [config.detectors[0].build(0)?, config.detectors[1].build(1)?];
        let run = &config.run;
        if run.dim < 4 {
            return Err(CliError::Config(format!("run.dim: must be at least 4, got {}", run.dim)));
        }
        if run.classes == 0 {
            return Err(CliError::Config("run.classes: must be at least 1".into()));
        }
        check("run.tol", run.tol > 0.0 && run.tol < 1.0, "must be in (0, 1)", run.tol)?;
        check("run.splitter_ratio", (0.0..=1.0).contains(&run.splitter_ratio), "must be in [0, 1]", run.splitter_ratio)?;
        let herald_window = window("run.herald_window_ns", run.herald_window_ns)?;
        let read_window = window("run.read_window_ns", run.read_window_ns)?;

        let opts = PredictOptions {
            dim: run.dim,
            solver: SolverOptions {
                rtol: run.tol,
                ..SolverOptions::default()
            },
            herald_window,
            read_window,
            ..PredictOptions::default()
        };
        let mut sim = SimulationConfig::new(device, schedule, HeatingModel::cold(0.0)).with_detectors(detectors);
        sim.splitter_ratio = run.splitter_ratio;
        sim.dim = run.dim;
        sim.classes = run.classes;
        sim.herald_window = herald_window.unwrap_or(sim.herald_window);
        sim.read_window = read_window.unwrap_or(sim.read_window);

        let base = config.heating.base(&schedule)?;
        let heating = match config.heating.calibrate {
            None => base,
            Some(target) => {
                let target = match target {
                    HeatingTarget::HeraldedOccupation(n) => OccupancyTarget::Heralded {
                        occupation: n,
                        herald_eff: sim.port_efficiencies()[0],
                    },
                    HeatingTarget::UnconditionalOccupation(n) => OccupancyTarget::Unconditional(n),
                };
                if config.heating.influx.is_empty() {
                    return Err(CliError::Config("heating.calibrate: needs at least one influx source".into()));
                }
                calibrate_heating(&device, &schedule, &base, target, &opts)?
            }
        };
        sim.heating = heating.clone();
        sim.validate().map_err(core("run"))?;
        Ok(Self {
            config,
            device,
            schedule,
            heating,
            sim,
            opts,
        })
    }

    /// Same scenario with a different initial occupation; the resolved
    /// influx is kept.
    pub fn with_n_init(&self, n_init: f64) -> Result<Self, CliError> {
        check("n_init", n_init >= 0.0, "must be non-negative", n_init)?;
        let heating = HeatingModel::new(n_init, self.heating.bath_n, self.heating.table.clone()).map_err(core("heating"))?;
        let mut out = self.clone();
        out.config.heating.n_init = n_init;
        out.sim.heating = heating.clone();
        out.heating = heating;
        Ok(out)
    }
}

impl CalibrationInput {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let input: Self = load_json(path)?;
        check_schema(input.schema)?;
        check("C_r", input.C_r >= 0.0, "must be non-negative", input.C_r)?;
        check("C_b", input.C_b > 0.0, "must be positive", input.C_b)?;
        check("eta_sum", input.eta_sum > 0.0 && input.eta_sum <= 2.0, "must be in (0, 2]", input.eta_sum)?;
        check("E_probe_fJ", input.E_probe_fJ > 0.0, "must be positive", input.E_probe_fJ)?;
        Ok(input)
    }
}
