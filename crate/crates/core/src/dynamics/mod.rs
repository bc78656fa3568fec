//! Optomechanical device model, pulse schedule and open-system dynamics.

mod full;
pub(crate) mod generator;
mod reduced;

pub use full::{liouvillian_full, partial_trace_cavity, Coupling, TwoModeModel, MAX_JOINT_DIM};
pub use generator::{
    propagate, propagate_matrix, CountingGenerator, Generator, Superoperator, ZeroGenerator,
};
pub use reduced::{liouvillian_reduced, LadderRates, ReducedModel};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::{Error, Result, Window, HBAR, SPEED_OF_LIGHT};

/// Optomechanical constants, all rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Vacuum optomechanical coupling rate.
    pub g0: f64,
    /// Cavity energy decay rate.
    pub kappa: f64,
    /// External (extraction) decay rate.
    pub kappa_e: f64,
    /// Mechanical angular frequency.
    pub omega_m: f64,
    /// Optical angular frequency.
    pub omega_c: f64,
    /// Mechanical energy decay rate.
    pub gamma: f64,
}

impl DeviceParams {
    pub fn new(g0: f64, kappa: f64, kappa_e: f64, omega_m: f64, omega_c: f64, gamma: f64) -> Result<Self> {
        let d = Self {
            g0,
            kappa,
            kappa_e,
            omega_m,
            omega_c,
            gamma,
        };
        d.validate()?;
        Ok(d)
    }

    /// Builds the constants from laboratory units.
    pub fn from_lab_units(
        g0_over_2pi_khz: f64,
        kappa_over_2pi_mhz: f64,
        kappa_e_over_kappa: f64,
        omega_m_over_2pi_ghz: f64,
        wavelength_nm: f64,
        q_m: f64,
    ) -> Result<Self> {
        if !(wavelength_nm > 0.0) {
            return Err(Error::param("wavelength_nm", "must be positive"));
        }
        if !(q_m > 0.0) {
            return Err(Error::param("q_m", "must be positive"));
        }
        let kappa = 2.0 * PI * kappa_over_2pi_mhz * 1e6;
        let omega_m = 2.0 * PI * omega_m_over_2pi_ghz * 1e9;
        Self::new(
            2.0 * PI * g0_over_2pi_khz * 1e3,
            kappa,
            kappa * kappa_e_over_kappa,
            omega_m,
            2.0 * PI * SPEED_OF_LIGHT / (wavelength_nm * 1e-9),
            omega_m / q_m,
        )
    }

    /// The nanobeam device: g0/2pi = 869 kHz, kappa/2pi = 846 MHz critically
    /// coupled, omega_m/2pi = 5.25 GHz, lambda = 1554.35 nm, Q_m = 3.8e5.
    pub fn paper() -> Self {
        Self::from_lab_units(869.0, 846.0, 0.5, 5.25, 1554.35, 3.8e5)
            .expect("reference constants are valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("g0", self.g0),
            ("kappa", self.kappa),
            ("omega_m", self.omega_m),
            ("omega_c", self.omega_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::param("gamma", "must be non-negative"));
        }
        if !(self.kappa_e > 0.0 && self.kappa_e <= self.kappa) {
            return Err(Error::param(
                "kappa_e",
                format!("need 0 < kappa_e <= kappa, got {} vs {}", self.kappa_e, self.kappa),
            ));
        }
        Ok(())
    }

    pub fn with_g0(mut self, g0: f64) -> Self {
        self.g0 = g0;
        self
    }

    pub fn g0_over_2pi_khz(&self) -> f64 {
        self.g0 / (2.0 * PI * 1e3)
    }

    /// `kappa << omega_m`.
    pub fn resolved_sideband(&self) -> bool {
        self.kappa < 0.5 * self.omega_m
    }

    /// `g0 << kappa`.
    pub fn weak_coupling(&self) -> bool {
        self.g0 < 1e-2 * self.kappa
    }

    /// Ratio of the counter-rotating to the resonant scattering rate.
    pub fn sideband_ratio(&self) -> f64 {
        let k2 = self.kappa * self.kappa;
        k2 / (k2 + 16.0 * self.omega_m * self.omega_m)
    }

    /// Time-integrated intracavity photon number for pulse energy `energy`.
    pub fn integrated_photons(&self, energy: f64) -> f64 {
        let detuning = self.omega_m * self.omega_m + 0.25 * self.kappa * self.kappa;
        self.kappa * energy / (HBAR * self.omega_c * detuning)
    }

    /// Scattering exponent `x` shared by `p_b = e^x - 1` and `p_r = 1 - e^-x`.
    pub fn scattering_exponent(&self, energy: f64) -> f64 {
        let detuning = self.omega_m * self.omega_m + 0.25 * self.kappa * self.kappa;
        (self.kappa_e / self.kappa) * 4.0 * self.g0 * self.g0 * energy
            / (HBAR * self.omega_c * detuning)
    }

    /// Pulse energy giving exponent `x`.
    pub fn energy_for_exponent(&self, x: f64) -> f64 {
        x / self.scattering_exponent(1.0)
    }
}

/// `(p_b, p_r)` for a pulse of energy `energy` (joules).
pub fn scattering_probabilities(device: &DeviceParams, energy: f64) -> Result<(f64, f64)> {
    if !(energy >= 0.0) {
        return Err(Error::param("energy", format!("must be >= 0, got {energy}")));
    }
    let x = device.scattering_exponent(energy);
    Ok((x.exp_m1(), -(-x).exp_m1()))
}

/// Drive detuning relative to the cavity, `+omega_m` or `-omega_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sideband {
    /// Pair creation (pump).
    Blue,
    /// State swap (read).
    Red,
}

/// Number of FWHMs on each side of the center kept in the envelope.
pub const ENVELOPE_HALF_WIDTH: f64 = 3.0;

/// A Gaussian drive pulse truncated at `center ± 3 FWHM`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub sideband: Sideband,
    /// Total pulse energy in joules.
    pub energy: f64,
    /// Full width at half maximum of the power envelope, seconds.
    pub fwhm: f64,
    /// Center time within the cycle, seconds.
    pub center: f64,
}

impl Pulse {
    pub fn new(sideband: Sideband, energy: f64, fwhm: f64, center: f64) -> Result<Self> {
        let p = Self {
            sideband,
            energy,
            fwhm,
            center,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy >= 0.0 && self.energy.is_finite()) {
            return Err(Error::param("energy", format!("must be >= 0, got {}", self.energy)));
        }
        if !(self.fwhm > 0.0) {
            return Err(Error::param("fwhm", format!("must be positive, got {}", self.fwhm)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    pub fn support(&self) -> Window {
        let half = ENVELOPE_HALF_WIDTH * self.fwhm;
        Window::new(self.center - half, self.center + half)
    }

    /// Normalised temporal envelope (1/s); zero outside the support.
    pub fn envelope(&self, t: f64) -> f64 {
        if !self.support().contains(t) {
            return 0.0;
        }
        let s = self.sigma();
        let z = s * (2.0 * PI).sqrt() * erf(ENVELOPE_HALF_WIDTH * self.fwhm / (s * std::f64::consts::SQRT_2));
        let x = (t - self.center) / s;
        (-0.5 * x * x).exp() / z
    }

    /// Integral of the envelope from the support start to `t`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let sup = self.support();
        if t <= sup.start {
            return 0.0;
        }
        if t >= sup.end {
            return 1.0;
        }
        let s = self.sigma() * std::f64::consts::SQRT_2;
        let edge = erf(ENVELOPE_HALF_WIDTH * self.fwhm / s);
        0.5 * (erf((t - self.center) / s) + edge) / edge
    }
}

/// Instantaneous scattering rates of one pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRates {
    /// Resonant-sideband rate Gamma_- (1/s).
    pub gamma_minus: f64,
    /// Counter-rotating sideband rate Gamma_+ (1/s).
    pub gamma_plus: f64,
    /// Intracavity photon number n_c(t).
    pub n_c: f64,
}

/// Rates `Gamma_-`, `Gamma_+` and `n_c` at time `t` for `pulse`.
///
/// `n_c` is normalised so that the time integral of `Gamma_-` equals the
/// scattering exponent of [`scattering_probabilities`].
pub fn rates(device: &DeviceParams, pulse: &Pulse, t: f64) -> PulseRates {
    let n_c = device.integrated_photons(pulse.energy) * pulse.envelope(t);
    let base = 2.0 * device.kappa_e / device.kappa * device.g0 * device.g0 * n_c;
    let re_eta_minus = 2.0 / device.kappa;
    let re_eta_plus = 2.0 * device.kappa
        / (device.kappa * device.kappa + 16.0 * device.omega_m * device.omega_m);
    PulseRates {
        gamma_minus: base * re_eta_minus,
        gamma_plus: base * re_eta_plus,
        n_c,
    }
}

/// One pump/read cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub pump: Pulse,
    pub read: Pulse,
    /// Pump-to-read center delay t_d, seconds.
    pub delay: f64,
    /// Repetition period T_r, seconds.
    pub period: f64,
}

/// Half width of the default detection windows, in FWHMs.
pub const WINDOW_HALF_WIDTH: f64 = 2.0;

impl PulseSchedule {
    /// Places the pump so that its envelope starts at `t = 0`.
    pub fn new(pump_energy: f64, read_energy: f64, fwhm: f64, delay: f64, period: f64) -> Result<Self> {
        let c = ENVELOPE_HALF_WIDTH * fwhm;
        let s = Self {
            pump: Pulse::new(Sideband::Blue, pump_energy, fwhm, c)?,
            read: Pulse::new(Sideband::Red, read_energy, fwhm, c + delay)?,
            delay,
            period,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.pump.validate()?;
        self.read.validate()?;
        if self.pump.sideband != Sideband::Blue {
            return Err(Error::param("pump", "must be blue-detuned"));
        }
        if self.read.sideband != Sideband::Red {
            return Err(Error::param("read", "must be red-detuned"));
        }
        if !(self.delay > 0.0) {
            return Err(Error::param("delay", format!("must be positive, got {}", self.delay)));
        }
        let busy = self.read.support().end - self.pump.support().start;
        if !(self.period > busy) {
            return Err(Error::param(
                "period",
                format!("{:.3e} s does not contain both pulses ({busy:.3e} s)", self.period),
            ));
        }
        Ok(())
    }

    fn midpoint(&self) -> f64 {
        0.5 * (self.pump.center + self.read.center)
    }

    /// Pump center ± 2 FWHM, clipped at the pump/read midpoint.
    pub fn herald_window(&self) -> Window {
        let half = WINDOW_HALF_WIDTH * self.pump.fwhm;
        Window::new(
            (self.pump.center - half).max(0.0),
            (self.pump.center + half).min(self.midpoint()),
        )
    }

    /// Read center ± 2 FWHM, clipped at the pump/read midpoint.
    pub fn read_window(&self) -> Window {
        let half = WINDOW_HALF_WIDTH * self.read.fwhm;
        Window::new(
            (self.read.center - half).max(self.midpoint()),
            self.read.center + half,
        )
    }

    /// End of the last pulse envelope.
    pub fn horizon(&self) -> f64 {
        self.read.support().end
    }
}

/// Phenomenological heating: initial thermal occupation, a static bath and
/// an absorption influx given as a cumulative phonon table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatingModel {
    pub n_init: f64,
    pub bath_n: f64,
    /// `(time [s], cumulative added phonons)`, non-decreasing in both.
    pub table: Vec<(f64, f64)>,
}

impl HeatingModel {
    pub fn new(n_init: f64, bath_n: f64, table: Vec<(f64, f64)>) -> Result<Self> {
        let h = Self {
            n_init,
            bath_n,
            table,
        };
        h.validate()?;
        Ok(h)
    }

    /// No absorption heating.
    pub fn cold(n_init: f64) -> Self {
        Self {
            n_init,
            bath_n: 0.0,
            table: Vec::new(),
        }
    }

    /// Constant influx `rate` (phonons/s) switched on at each `onset` and
    /// kept until `horizon`.
    pub fn with_constant_influx(n_init: f64, bath_n: f64, sources: &[(f64, f64)], horizon: f64) -> Result<Self> {
        let mut knots: Vec<f64> = sources.iter().map(|s| s.0).filter(|&t| t < horizon).collect();
        knots.push(horizon);
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        let cumulative = |t: f64| -> f64 {
            sources
                .iter()
                .map(|&(on, rate)| rate * (t - on).max(0.0))
                .sum()
        };
        let table = knots.iter().map(|&t| (t, cumulative(t))).collect();
        Self::new(n_init, bath_n, table)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_init >= 0.0) {
            return Err(Error::param("n_init", format!("must be >= 0, got {}", self.n_init)));
        }
        if !(self.bath_n >= 0.0) {
            return Err(Error::param("bath_n", format!("must be >= 0, got {}", self.bath_n)));
        }
        for w in self.table.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::param("table", "times must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::param("table", "cumulative heating must be non-decreasing"));
            }
        }
        Ok(())
    }

    /// Absorption influx `dn_abs/dt` (phonons/s).
    pub fn influx(&self, t: f64) -> f64 {
        for w in self.table.windows(2) {
            if t >= w[0].0 && t < w[1].0 {
                return (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            }
        }
        0.0
    }

    /// Cumulative added phonons `n_abs(t)`, measured from the first knot.
    pub fn cumulative(&self, t: f64) -> f64 {
        let Some(first) = self.table.first() else {
            return 0.0;
        };
        if t <= first.0 {
            return 0.0;
        }
        for w in self.table.windows(2) {
            if t < w[1].0 {
                let f = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + f * (w[1].1 - w[0].1) - first.1;
            }
        }
        self.table.last().unwrap().1 - first.1
    }

    /// Knots of the influx table, used as integrator breakpoints.
    pub fn knots(&self) -> impl Iterator<Item = f64> + '_ {
        self.table.iter().map(|k| k.0)
    }

    /// Scales the absorption influx by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let base = self.table.first().map(|k| k.1).unwrap_or(0.0);
        Self {
            n_init: self.n_init,
            bath_n: self.bath_n,
            table: self
                .table
                .iter()
                .map(|&(t, n)| (t, base + factor * (n - base)))
                .collect(),
        }
    }
}
