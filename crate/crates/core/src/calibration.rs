//! Inversion of measured count rates into the detection-efficiency chain,
//! the thermal occupation, the scattering probabilities and `g0`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DeviceParams, Sideband};
use crate::{Error, Result};

/// Probabilities above this leave the linear count relations.
pub const SMALL_P_LIMIT: f64 = 0.1;

/// Slack allowed on physical bounds before a calibration is rejected.
const BOUND_SLACK: f64 = 1e-9;

/// Per-detector detection efficiency and its factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyChain {
    /// Fiber-to-device coupling.
    pub eta_fc: f64,
    /// Cavity extraction efficiency `kappa_e / kappa`.
    pub eta_dev: f64,
    /// Path transmission times quantum efficiency, D1 and D2.
    pub eta_trans_qe: [f64; 2],
    /// `eta_dev eta_fc eta_trans_qe`, D1 and D2.
    pub eta_total: [f64; 2],
}

impl EfficiencyChain {
    pub fn eta_sum(&self) -> f64 {
        self.eta_total[0] + self.eta_total[1]
    }
}

fn unit_interval(name: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::param(name, format!("must be in [0, 1], got {v}")));
    }
    Ok(())
}

/// Builds the efficiency chain from off-resonant calibration pulses.
///
/// The calibration light passes the fiber coupling twice, so the counts per
/// pulse over the photons per pulse give `eta_fc^2 eta_trans eta_qe` for
/// each detector.
pub fn efficiency_chain(eta_fc: f64, eta_dev: f64, calib_counts: [f64; 2], photons_per_pulse: f64) -> Result<EfficiencyChain> {
    unit_interval("eta_fc", eta_fc)?;
    unit_interval("eta_dev", eta_dev)?;
    if !(photons_per_pulse > 0.0) {
        return Err(Error::param("photons_per_pulse", "must be positive"));
    }
    if !(eta_fc > 0.0) {
        return Err(Error::param("eta_fc", "must be positive"));
    }
    let mut tq = [0.0; 2];
    for (i, &c) in calib_counts.iter().enumerate() {
        if !(c >= 0.0) {
            return Err(Error::param("calib_counts", "must be non-negative"));
        }
        tq[i] = c / photons_per_pulse / (eta_fc * eta_fc);
        unit_interval("eta_trans_qe", tq[i])?;
    }
    Ok(EfficiencyChain {
        eta_fc,
        eta_dev,
        eta_trans_qe: tq,
        eta_total: [eta_dev * eta_fc * tq[0], eta_dev * eta_fc * tq[1]],
    })
}

/// Result of a sideband-asymmetry calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandSolution {
    pub n_th: f64,
    pub p_b: f64,
    pub p_r: f64,
    /// rad/s.
    pub g0: f64,
    /// Common scattering exponent of the two probes.
    pub x: f64,
    /// Both probabilities below [`SMALL_P_LIMIT`].
    pub small_p: bool,
}

impl SidebandSolution {
    pub fn g0_over_2pi_khz(&self) -> f64 {
        self.g0 / (2.0 * std::f64::consts::PI) / 1e3
    }
}

/// Count probabilities `(C_r, C_b)` of red and blue probes with exponent `x`.
pub fn sideband_counts(n_th: f64, x: f64, eta_sum: f64) -> (f64, f64) {
    let p_r = -(-x).exp_m1();
    let p_b = x.exp_m1();
    (eta_sum * p_r * n_th, eta_sum * p_b * (1.0 + n_th))
}

/// Solves `C_r = eta p_r n`, `C_b = eta p_b (1 + n)` with `p_r = 1 - e^-x`
/// and `p_b = e^x - 1` for the probe exponent `x` and `n`, then inverts
/// the exponent for `g0`.
///
/// `device.g0` is ignored. With `A = C_r / eta` and `B = C_b / eta` the
/// system closes to `x = ln((1 + B) / (1 + A))`.
pub fn solve_sideband(c_r: f64, c_b: f64, eta_sum: f64, e_probe: f64, device: &DeviceParams) -> Result<SidebandSolution> {
    if !(c_r >= 0.0) {
        return Err(Error::param("C_r", "must be non-negative"));
    }
    if !(c_b > 0.0) {
        return Err(Error::param("C_b", "must be positive"));
    }
    if !(eta_sum > 0.0 && eta_sum <= 2.0) {
        return Err(Error::param("eta_sum", format!("must be in (0, 2], got {eta_sum}")));
    }
    if !(e_probe > 0.0) {
        return Err(Error::param("E_probe", "must be positive"));
    }
    let a = c_r / eta_sum;
    let b = c_b / eta_sum;
    let x = ((1.0 + b) / (1.0 + a)).ln();
    if !(x > 0.0) {
        return Err(Error::Calibration(format!(
            "blue counts {c_b:.3e} do not exceed red counts {c_r:.3e} by the vacuum term; no physical root"
        )));
    }
    let p_r = -(-x).exp_m1();
    let p_b = x.exp_m1();
    let unit = device.with_g0(1.0).scattering_exponent(e_probe);
    if !(unit > 0.0) {
        return Err(Error::Calibration("probe energy gives no scattering".into()));
    }
    Ok(SidebandSolution {
        n_th: a / p_r,
        p_b,
        p_r,
        g0: (x / unit).sqrt(),
        x,
        small_p: p_b < SMALL_P_LIMIT && p_r < SMALL_P_LIMIT,
    })
}

/// Occupation from the counts of one probe with known scattering
/// probability `p`.
pub fn occupancy_from_counts(c: f64, eta_sum: f64, p: f64, sideband: Sideband) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::param("C", "must be non-negative"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("must be in (0, 1), got {p}")));
    }
    if !(eta_sum > 0.0) {
        return Err(Error::param("eta_sum", "must be positive"));
    }
    let ratio = c / (eta_sum * p);
    match sideband {
        Sideband::Red => Ok(ratio),
        Sideband::Blue => {
            let n = ratio - 1.0;
            if n < -BOUND_SLACK {
                return Err(Error::Calibration(format!(
                    "blue counts imply a negative occupation {n:.3e}; efficiency or p inconsistent"
                )));
            }
            Ok(n.max(0.0))
        }
    }
}
