use super::generator::{CountingGenerator, Generator, Superoperator};
use super::{rates, DeviceParams, HeatingModel, Pulse, PulseSchedule, Sideband};
use crate::{CMatrix, Error, Result};

/// Coefficients of `D[b]` and `D[b†]` at one instant, together with the
/// detected (resonant-sideband) parts of each.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LadderRates {
    /// Total rate on `D[b]`.
    pub lower: f64,
    /// Total rate on `D[b†]`.
    pub raise: f64,
    /// Detected part of `lower` (anti-Stokes photons).
    pub emit_lower: f64,
    /// Detected part of `raise` (Stokes photons).
    pub emit_raise: f64,
}

/// Mechanics-only model with the cavity adiabatically eliminated.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub device: DeviceParams,
    pub heating: HeatingModel,
    pub pulses: Vec<Pulse>,
    pub dim: usize,
    /// Include the `Gamma_+` counter-rotating scattering.
    pub counter_rotating: bool,
    sqrt_n: Vec<f64>,
}

impl ReducedModel {
    pub fn new(device: DeviceParams, heating: HeatingModel, pulses: Vec<Pulse>, dim: usize) -> Result<Self> {
        device.validate()?;
        heating.validate()?;
        if !device.weak_coupling() {
            return Err(Error::param(
                "g0",
                "the reduced model needs g0 << kappa (weak coupling)",
            ));
        }
        if dim < 2 {
            return Err(Error::param("dim", format!("need at least 2 levels, got {dim}")));
        }
        for p in &pulses {
            p.validate()?;
        }
        Ok(Self {
            device,
            heating,
            pulses,
            dim,
            counter_rotating: true,
            sqrt_n: (0..=dim).map(|n| (n as f64).sqrt()).collect(),
        })
    }

    /// Model driven by both pulses of `schedule`.
    pub fn for_schedule(device: DeviceParams, heating: HeatingModel, schedule: &PulseSchedule, dim: usize) -> Result<Self> {
        Self::new(device, heating, vec![schedule.pump, schedule.read], dim)
    }

    pub fn with_counter_rotating(mut self, on: bool) -> Self {
        self.counter_rotating = on;
        self
    }

    pub fn rates(&self, t: f64) -> LadderRates {
        let gamma = self.device.gamma;
        let gamma_nb = gamma * self.heating.bath_n + self.heating.influx(t);
        let mut r = LadderRates {
            lower: gamma + gamma_nb,
            raise: gamma_nb,
            emit_lower: 0.0,
            emit_raise: 0.0,
        };
        for p in &self.pulses {
            let pr = rates(&self.device, p, t);
            let plus = if self.counter_rotating { pr.gamma_plus } else { 0.0 };
            match p.sideband {
                Sideband::Red => {
                    r.lower += pr.gamma_minus;
                    r.raise += plus;
                    r.emit_lower += pr.gamma_minus;
                }
                Sideband::Blue => {
                    r.raise += pr.gamma_minus;
                    r.lower += plus;
                    r.emit_raise += pr.gamma_minus;
                }
            }
        }
        r
    }

    /// `(b b†)_kk` in the truncated space.
    fn bbdag(&self, k: usize) -> f64 {
        if k + 1 < self.dim {
            (k + 1) as f64
        } else {
            0.0
        }
    }

    /// `out = down * b x b† + up * b† x b - (lower N + raise b b†, x)/2`.
    #[allow(clippy::too_many_arguments)]
    fn kernel(&self, x: &CMatrix, out: &mut CMatrix, down: f64, up: f64, lower: f64, raise: f64) {
        let d = self.dim;
        let s = &self.sqrt_n;
        for j in 0..d {
            for i in 0..d {
                let mut v = x[(i, j)]
                    * (-0.5 * (lower * (i + j) as f64 + raise * (self.bbdag(i) + self.bbdag(j))));
                if down != 0.0 && i + 1 < d && j + 1 < d {
                    v += x[(i + 1, j + 1)] * (down * s[i + 1] * s[j + 1]);
                }
                if up != 0.0 && i >= 1 && j >= 1 {
                    v += x[(i - 1, j - 1)] * (up * s[i] * s[j]);
                }
                out[(i, j)] = v;
            }
        }
    }

    fn pulse_breaks(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.heating.knots().collect();
        for p in &self.pulses {
            let s = p.support();
            v.push(s.start);
            v.push(s.end);
        }
        v
    }
}

impl Generator for ReducedModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, t: f64, rho: &CMatrix, out: &mut CMatrix) {
        let r = self.rates(t);
        self.kernel(rho, out, r.lower, r.raise, r.lower, r.raise);
    }

    fn max_step(&self) -> Option<f64> {
        self.pulses
            .iter()
            .map(|p| p.fwhm / 8.0)
            .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.min(h))))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.pulse_breaks()
    }
}

impl CountingGenerator for ReducedModel {
    fn emission(&self, t: f64, rho: &CMatrix, out: &mut CMatrix) {
        let r = self.rates(t);
        self.kernel(rho, out, r.emit_lower, r.emit_raise, 0.0, 0.0);
    }

    fn apply_adjoint(&self, t: f64, x: &CMatrix, out: &mut CMatrix) {
        let r = self.rates(t);
        // the dual of b x b† is b† x b and vice versa
        self.kernel(x, out, r.raise, r.lower, r.lower, r.raise);
    }

    fn emission_adjoint(&self, t: f64, x: &CMatrix, out: &mut CMatrix) {
        let r = self.rates(t);
        self.kernel(x, out, r.emit_raise, r.emit_lower, 0.0, 0.0);
    }
}

/// Dense generator of the reduced model for a single pulse at time `t`.
pub fn liouvillian_reduced(
    device: &DeviceParams,
    heating: &HeatingModel,
    pulse: &Pulse,
    t: f64,
    dim: usize,
) -> Result<Superoperator> {
    let m = ReducedModel::new(*device, heating.clone(), vec![*pulse], dim)?;
    Ok(m.superoperator(t))
}
