//! Coincidence estimate of g2 from click records, binomial likelihood
//! intervals, p-values against the classical bound and the energy-variance
//! decomposition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::beta::beta_reg;

use crate::hilbert::{g2_zero, DensityMatrix};
use crate::trajectories::ClickRecord;
use crate::{Error, Result, Window, HBAR};

/// Probability mass below the estimate's lower and above its upper bound.
pub const TAIL_MASS: f64 = 0.16;

/// Which detectors herald a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeraldPolicy {
    #[default]
    D1,
    D2,
    Any,
    /// Every cycle counts as heralded (unconditional statistics).
    Unconditional,
}

impl HeraldPolicy {
    fn accepts(self, detector: u8) -> bool {
        match self {
            HeraldPolicy::D1 => detector == 1,
            HeraldPolicy::D2 => detector == 2,
            HeraldPolicy::Any => true,
            HeraldPolicy::Unconditional => false,
        }
    }
}

/// Coincidence estimate with its likelihood interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Estimate {
    /// `(c12 / N) / ((c1 / N) (c2 / N))`.
    pub g2: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub n_heralds: u64,
    pub c1: u64,
    pub c2: u64,
    pub c12: u64,
    /// `P(estimate <= g2 | true g2 = 1)`.
    pub p_value: f64,
}

impl G2Estimate {
    /// Builds the estimate from raw counts.
    pub fn from_counts(n_heralds: u64, c1: u64, c2: u64, c12: u64) -> Result<Self> {
        if n_heralds == 0 {
            return Err(Error::NoHeralds);
        }
        if c1 == 0 {
            return Err(Error::NoSingles(1));
        }
        if c2 == 0 {
            return Err(Error::NoSingles(2));
        }
        if c12 > c1.min(c2) || c1 > n_heralds || c2 > n_heralds {
            return Err(Error::param("counts", "need c12 <= c1, c2 <= N"));
        }
        let n = n_heralds as f64;
        let (r1, r2) = (c1 as f64 / n, c2 as f64 / n);
        let g2 = (c12 as f64 / n) / (r1 * r2);
        let (sigma_minus, sigma_plus) = confidence_interval(c12, n_heralds, r1, r2)?;
        Ok(Self {
            g2,
            sigma_plus,
            sigma_minus,
            n_heralds,
            c1,
            c2,
            c12,
            p_value: p_value(g2, n_heralds, r1, r2, 1.0)?,
        })
    }

    pub fn lower(&self) -> f64 {
        self.g2 - self.sigma_minus
    }

    pub fn upper(&self) -> f64 {
        self.g2 + self.sigma_plus
    }

    /// Whether `value` lies inside the interval.
    pub fn covers(&self, value: f64) -> bool {
        value >= self.lower() && value <= self.upper()
    }
}

const D1_READ: u8 = 1;
const D2_READ: u8 = 2;
const HERALD: u8 = 4;

/// Estimates g2 from `record`.
///
/// A cycle is heralded by a click of the `policy` detectors inside
/// `herald_window`; `E1` (`E2`) is at least one D1 (D2) click inside
/// `read_window`. For `delta_n != 0`, `E1` is taken from the heralded cycle
/// `k` and `E2` from cycle `k + delta_n`; heralds without a partner cycle
/// are skipped.
pub fn estimate_g2(
    record: &ClickRecord,
    herald_window: Window,
    read_window: Window,
    policy: HeraldPolicy,
    delta_n: i64,
) -> Result<G2Estimate> {
    let cycles = record.cycles;
    let mut flags: BTreeMap<u64, u8> = BTreeMap::new();
    for e in &record.events {
        let t = e.time();
        let mut f = 0;
        if herald_window.contains(t) && policy.accepts(e.detector) {
            f |= HERALD;
        }
        if read_window.contains(t) {
            f |= if e.detector == 1 { D1_READ } else { D2_READ };
        }
        if f != 0 {
            *flags.entry(e.cycle).or_insert(0) |= f;
        }
    }
    let partner = |k: u64| -> Option<u64> {
        let j = k as i128 + delta_n as i128;
        (j >= 0 && (j as u128) < cycles as u128).then_some(j as u64)
    };
    let read = |k: u64| flags.get(&k).copied().unwrap_or(0);
    let (mut n, mut c1, mut c2, mut c12) = (0u64, 0u64, 0u64, 0u64);
    if policy == HeraldPolicy::Unconditional {
        n = cycles.saturating_sub(delta_n.unsigned_abs());
        for (&k, &f) in &flags {
            if let Some(j) = partner(k) {
                let a = f & D1_READ != 0;
                let b = read(j) & D2_READ != 0;
                c1 += a as u64;
                c12 += (a && b) as u64;
            }
            // E2 in cycle k pairs with the herald in k - delta_n
            let back = k as i128 - delta_n as i128;
            if f & D2_READ != 0 && back >= 0 && (back as u128) < cycles as u128 {
                c2 += 1;
            }
        }
    } else {
        for (&k, &f) in &flags {
            if f & HERALD == 0 {
                continue;
            }
            let Some(j) = partner(k) else { continue };
            n += 1;
            let a = f & D1_READ != 0;
            let b = read(j) & D2_READ != 0;
            c1 += a as u64;
            c2 += b as u64;
            c12 += (a && b) as u64;
        }
    }
    G2Estimate::from_counts(n, c1, c2, c12)
}

/// Quantile of the Beta(a, b) distribution by bisection.
fn beta_quantile(a: f64, b: f64, q: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `(sigma_minus, sigma_plus)` of the estimate from the binomial likelihood
/// of `c12` in `n` trials, with the singles probabilities `rate1`, `rate2`
/// held fixed.
///
/// The normalised likelihood in `P(E1 & E2)` is `Beta(c12 + 1, n - c12 + 1)`;
/// the bounds are its 16% and 84% quantiles, so 34% of the mass lies on
/// each side of the median. For `c12 = 0` the interval is one-sided and the
/// upper bound is the 68% quantile.
pub fn confidence_interval(c12: u64, n: u64, rate1: f64, rate2: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::param("n", "need at least one herald"));
    }
    if c12 > n {
        return Err(Error::param("c12", "exceeds the number of heralds"));
    }
    if !(rate1 > 0.0 && rate2 > 0.0) {
        return Err(Error::param("rate", "singles rates must be positive"));
    }
    let scale = rate1 * rate2;
    let (a, b) = ((c12 + 1) as f64, (n - c12 + 1) as f64);
    let g = c12 as f64 / n as f64 / scale;
    if c12 == 0 {
        return Ok((0.0, beta_quantile(a, b, 1.0 - 2.0 * TAIL_MASS) / scale));
    }
    let lo = beta_quantile(a, b, TAIL_MASS) / scale;
    let hi = beta_quantile(a, b, 1.0 - TAIL_MASS) / scale;
    Ok(((g - lo).max(0.0), (hi - g).max(0.0)))
}

/// Probability of an estimate at or below `observed` when the true value is
/// `null_g2`, with `c12 ~ Binomial(n, rate1 rate2 null_g2)`.
pub fn p_value(observed: f64, n: u64, rate1: f64, rate2: f64, null_g2: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "need at least one herald"));
    }
    let p = rate1 * rate2 * null_g2;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("rate", "rate1 * rate2 * null_g2 must be in (0, 1]"));
    }
    if observed < 0.0 {
        return Ok(0.0);
    }
    let threshold = observed * n as f64 * rate1 * rate2;
    let k = (threshold + 1e-9 * threshold.max(1.0)).floor();
    if k >= n as f64 {
        return Ok(1.0);
    }
    let dist = Binomial::new(p, n).map_err(|e| Error::param("rate", e.to_string()))?;
    Ok(dist.cdf(k as u64))
}

/// Coincidence count whose interval best reproduces a published estimate
/// `value` (+`sigma_plus`, -`sigma_minus`) at `n` heralds, with the error of
/// that match.
pub fn coincidences_from_interval(value: f64, sigma_minus: f64, sigma_plus: f64, n: u64) -> Result<(u64, f64)> {
    if !(value > 0.0) {
        return Err(Error::param("value", "must be positive"));
    }
    // relative width ~ 1/sqrt(c12) bounds the search
    let rel = (sigma_minus + sigma_plus) / (2.0 * value);
    let guess = (1.0 / (rel * rel)).round().max(1.0) as u64;
    let mut best = (0, f64::INFINITY);
    for c in guess / 4..=(4 * guess + 10).min(n) {
        if c == 0 {
            continue;
        }
        let scale = c as f64 / n as f64 / value;
        let (m, p) = confidence_interval(c, n, scale, 1.0)?;
        let err = (m - sigma_minus).abs().max((p - sigma_plus).abs());
        if err < best.1 {
            best = (c, err);
        }
    }
    Ok(best)
}

/// Energy variance of `H = hbar omega_m N` split into the intensity
/// correlation part and the zero-point commutator part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    /// `Var(H)`, J^2.
    pub variance: f64,
    /// `(g2 - 1) <H>^2`.
    pub classical: f64,
    /// `hbar omega_m <H>`.
    pub commutator: f64,
}

pub fn variance_decomposition(state: &DensityMatrix, omega_m: f64) -> Result<VarianceDecomposition> {
    if !(omega_m > 0.0) {
        return Err(Error::param("omega_m", "must be positive"));
    }
    let g2 = g2_zero(state)?;
    let quantum = HBAR * omega_m;
    let n = state.mean_number();
    let h = quantum * n;
    let var_n = state.number_second_moment() - n * n;
    Ok(VarianceDecomposition {
        variance: quantum * quantum * var_n,
        classical: (g2 - 1.0) * h * h,
        commutator: quantum * h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{make_state, StateKind};
    use crate::trajectories::{ClickEvent, WindowTag};

    #[test]
    fn formula_on_raw_counts() {
        let e = G2Estimate::from_counts(1_000_000, 100, 80, 4).unwrap();
        assert!((e.g2 - 500.0).abs() < 1e-9);
        let n = e.n_heralds as f64;
        assert!((e.g2 * (e.c1 as f64 / n) * (e.c2 as f64 / n) * n - e.c12 as f64).abs() < 1e-9);
    }

    #[test]
    fn empty_coincidences_give_one_sided_interval() {
        let e = G2Estimate::from_counts(10_000, 300, 400, 0).unwrap();
        assert_eq!(e.g2, 0.0);
        assert_eq!(e.sigma_minus, 0.0);
        assert!(e.sigma_plus > 0.0);
    }

    #[test]
    fn count_errors() {
        assert!(matches!(G2Estimate::from_counts(0, 1, 1, 0), Err(Error::NoHeralds)));
        assert!(matches!(G2Estimate::from_counts(10, 0, 1, 0), Err(Error::NoSingles(1))));
        assert!(matches!(G2Estimate::from_counts(10, 1, 0, 0), Err(Error::NoSingles(2))));
        assert!(confidence_interval(0, 0, 0.1, 0.1).is_err());
    }

    #[test]
    fn beta_quantile_matches_uniform() {
        // Beta(1, 1) is uniform
        assert!((beta_quantile(1.0, 1.0, 0.3) - 0.3).abs() < 1e-12);
        // Beta(2, 1) has cdf x^2
        assert!((beta_quantile(2.0, 1.0, 0.25) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn null_median() {
        let p = p_value(1.0, 1_200_000, 0.007, 0.009, 1.0).unwrap();
        assert!((p - 0.5).abs() < 0.1, "{p}");
        assert_eq!(p_value(-1.0, 100, 0.1, 0.1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn variance_identity() {
        let w = 2.0 * std::f64::consts::PI * 5.25e9;
        let q = HBAR * w;
        let th = make_state(StateKind::Thermal(1.0), 60).unwrap();
        let v = variance_decomposition(&th, w).unwrap();
        assert!((v.variance / (q * q) - 2.0).abs() < 1e-6);
        let one = make_state(StateKind::Fock(1), 10).unwrap();
        let v = variance_decomposition(&one, w).unwrap();
        assert!(v.variance.abs() < 1e-12 * q * q);
        assert!((v.classical + v.commutator).abs() < 1e-12 * q * q);
        let coh = make_state(StateKind::Coherent(crate::C64::new(1.2, 0.3)), 50).unwrap();
        let v = variance_decomposition(&coh, w).unwrap();
        assert!(v.classical.abs() < 1e-8 * q * q);
        assert!(((v.classical + v.commutator) / v.variance - 1.0).abs() < 1e-9);
        assert!(variance_decomposition(&make_state(StateKind::Vacuum, 5).unwrap(), w).is_err());
    }

    fn ev(cycle: u64, t_ns: u64, detector: u8, window: WindowTag) -> ClickEvent {
        ClickEvent {
            cycle,
            t_ps: t_ns * 1000,
            detector,
            window,
        }
    }

    #[test]
    fn record_bookkeeping() {
        let hw = Window::new(30e-9, 150e-9);
        let rw = Window::new(150e-9, 280e-9);
        let events = vec![
            ev(0, 90, 1, WindowTag::Pump),
            ev(0, 200, 1, WindowTag::Read),
            ev(0, 210, 2, WindowTag::Read),
            ev(1, 95, 2, WindowTag::Pump),
            ev(1, 205, 1, WindowTag::Read),
            ev(2, 100, 1, WindowTag::Pump),
            ev(2, 220, 2, WindowTag::Read),
            ev(3, 230, 2, WindowTag::Read),
        ];
        let r = ClickRecord::from_events(4, events).unwrap();
        let d1 = estimate_g2(&r, hw, rw, HeraldPolicy::D1, 0).unwrap();
        assert_eq!((d1.n_heralds, d1.c1, d1.c2, d1.c12), (2, 1, 2, 1));
        let any = estimate_g2(&r, hw, rw, HeraldPolicy::Any, 0).unwrap();
        assert_eq!((any.n_heralds, any.c1, any.c2, any.c12), (3, 2, 2, 1));
        let unc = estimate_g2(&r, hw, rw, HeraldPolicy::Unconditional, 0).unwrap();
        assert_eq!((unc.n_heralds, unc.c1, unc.c2, unc.c12), (4, 2, 3, 1));
        // herald in k, E1 from k, E2 from k + 1
        let lag = estimate_g2(&r, hw, rw, HeraldPolicy::D1, 1).unwrap();
        assert_eq!((lag.n_heralds, lag.c1, lag.c2, lag.c12), (2, 1, 1, 0));
        let unc_lag = estimate_g2(&r, hw, rw, HeraldPolicy::Unconditional, 1).unwrap();
        assert_eq!((unc_lag.n_heralds, unc_lag.c1, unc_lag.c2, unc_lag.c12), (3, 2, 2, 1));
        assert!(matches!(estimate_g2(&r, hw, rw, HeraldPolicy::D1, 10), Err(Error::NoHeralds)));
    }
}
