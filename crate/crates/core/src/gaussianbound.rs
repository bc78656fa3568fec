//! Lowest `g2(0)` reachable by displacing and squeezing a thermal state.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hilbert::{apply_gaussian, g2_zero, make_state, GaussianParams, StateKind};
use crate::{Error, Result};

/// Smallest occupation a candidate state may have.
pub const MIN_OCCUPATION: f64 = 1e-6;

pub const ALPHA_MAX: f64 = 4.0;
pub const SQUEEZE_MAX: f64 = 1.2;
const ALPHA_GRID: usize = 41;
const SQUEEZE_GRID: usize = 25;
const PHASE_GRID: usize = 8;
const GOLDEN_TOL: f64 = 1e-10;
const REFINE_TOL: f64 = 1e-8;

/// Relation between displacement phase `phi` and squeezing phase `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaConstraint {
    /// `theta = 2 phi`.
    #[default]
    Locked,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub g2_min: f64,
    pub params: GaussianParams,
    pub occupation: f64,
    pub constrained: bool,
}

/// Moments `(<N>, <b†b†bb>)` of `D S rho_th S† D†`.
///
/// Only `theta - 2 phi` enters, since a phase rotation leaves the number
/// operator unchanged.
pub fn gaussian_moments(n_init: f64, p: &GaussianParams) -> (f64, f64) {
    let a2 = p.alpha_mag * p.alpha_mag;
    let h = n_init + 0.5;
    let r2 = 2.0 * p.squeeze_mag;
    let n_fl = h * r2.cosh() - 0.5;
    let m_abs = h * r2.sinh();
    let rel = p.squeeze_phase - 2.0 * p.alpha_phase;
    let mean = a2 + n_fl;
    let fact2 = a2 * a2 + 4.0 * a2 * n_fl - 2.0 * a2 * m_abs * rel.cos() + m_abs * m_abs + 2.0 * n_fl * n_fl;
    (mean, fact2)
}

/// `g2(0)` from the closed-form Gaussian moments, without truncation.
pub fn gaussian_g2_moments(n_init: f64, p: &GaussianParams) -> Result<f64> {
    let (mean, fact2) = gaussian_moments(n_init, p);
    if mean <= MIN_OCCUPATION {
        return Err(Error::VacuumDenominator(mean));
    }
    Ok(fact2 / (mean * mean))
}

/// `g2(0)` of the transformed state built in a truncated Fock space.
pub fn gaussian_g2(n_init: f64, params: &GaussianParams, dim: usize) -> Result<f64> {
    if !(n_init >= 0.0) {
        return Err(Error::param("n_init", "must be non-negative"));
    }
    let rho = make_state(StateKind::Thermal(n_init), dim)?;
    let out = apply_gaussian(&rho, params)?;
    out.check_truncation()?;
    g2_zero(&out)
}

fn fluct_occupation(n_init: f64, r: f64) -> f64 {
    (n_init + 0.5) * (2.0 * r).cosh() - 0.5
}

struct Search {
    n_init: f64,
    window: (f64, f64),
}

impl Search {
    /// Feasible displacement interval at squeezing `r`.
    fn alpha_range(&self, r: f64) -> Option<(f64, f64)> {
        let nf = fluct_occupation(self.n_init, r);
        let hi = self.window.1 - nf;
        if hi < 0.0 {
            return None;
        }
        let lo = (self.window.0 - nf).max(0.0).sqrt();
        let hi = hi.sqrt().min(ALPHA_MAX);
        (lo <= hi).then_some((lo, hi))
    }

    fn value(&self, alpha: f64, r: f64, rel: f64) -> f64 {
        let p = GaussianParams {
            alpha_mag: alpha,
            alpha_phase: 0.0,
            squeeze_mag: r,
            squeeze_phase: rel,
        };
        let (mean, fact2) = gaussian_moments(self.n_init, &p);
        if mean <= MIN_OCCUPATION.max(self.window.0 * (1.0 - 1e-12)) || mean > self.window.1 * (1.0 + 1e-12) {
            return f64::INFINITY;
        }
        fact2 / (mean * mean)
    }

    /// Best displacement for fixed `(r, rel)`: grid then golden section.
    fn inner(&self, r: f64, rel: f64) -> (f64, f64) {
        let Some((lo, hi)) = self.alpha_range(r) else {
            return (f64::INFINITY, 0.0);
        };
        let step = ALPHA_MAX / (ALPHA_GRID - 1) as f64;
        let mut pts: Vec<f64> = (0..ALPHA_GRID).map(|i| i as f64 * step).filter(|a| *a > lo && *a < hi).collect();
        pts.insert(0, lo);
        pts.push(hi);
        let (mut best_i, mut best) = (0, f64::INFINITY);
        for (i, &a) in pts.iter().enumerate() {
            let v = self.value(a, r, rel);
            if v < best {
                best = v;
                best_i = i;
            }
        }
        let a = pts[best_i.saturating_sub(1)];
        let b = pts[(best_i + 1).min(pts.len() - 1)];
        let (x, v) = golden(|x| self.value(x, r, rel), a, b);
        if v < best {
            (v, x)
        } else {
            (best, pts[best_i])
        }
    }
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Minimizes `g2(0)` over displacement and squeezing of a thermal state
/// with `n_init` phonons, optionally restricted to `lo < <N> < hi`.
///
/// A grid over squeezing (and the relative phase when free) with the best
/// displacement per node seeds a coordinate-wise parabolic refinement.
pub fn minimize_gaussian_g2(n_init: f64, constraint: ThetaConstraint, window: Option<(f64, f64)>) -> Result<BoundResult> {
    if !(n_init >= 0.0) {
        return Err(Error::param("n_init", "must be non-negative"));
    }
    if let Some((lo, hi)) = window {
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::param("occupation_window", format!("needs 0 <= lo < hi, got [{lo}, {hi}]")));
        }
    }
    let search = Search {
        n_init,
        window: window.unwrap_or((0.0, f64::INFINITY)),
    };
    let phases: Vec<f64> = match constraint {
        ThetaConstraint::Locked => vec![0.0],
        ThetaConstraint::Free => (0..PHASE_GRID).map(|k| k as f64 * TAU / PHASE_GRID as f64).collect(),
    };
    let nodes: Vec<(f64, f64)> = (0..SQUEEZE_GRID)
        .flat_map(|i| {
            let r = i as f64 * SQUEEZE_MAX / (SQUEEZE_GRID - 1) as f64;
            phases.iter().map(move |&ph| (r, ph))
        })
        .collect();
    let seeds: Vec<(f64, f64, f64, f64)> = nodes
        .par_iter()
        .map(|&(r, ph)| {
            let (v, a) = search.inner(r, ph);
            (v, a, r, ph)
        })
        .collect();
    let (mut best, mut alpha, mut r, mut rel) = seeds
        .iter()
        .copied()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .filter(|s| s.0.is_finite())
        .ok_or_else(|| Error::param("occupation_window", "no feasible Gaussian state"))?;

    let mut steps = [SQUEEZE_MAX / (SQUEEZE_GRID - 1) as f64, TAU / PHASE_GRID as f64];
    let free = constraint == ThetaConstraint::Free;
    while steps[0] > REFINE_TOL || (free && steps[1] > REFINE_TOL) {
        let mut improved = false;
        #[allow(clippy::needless_range_loop)]
        for axis in 0..if free { 2 } else { 1 } {
            let h = steps[axis];
            let eval = |x: f64| {
                let (rr, pp) = if axis == 0 { (x.clamp(0.0, SQUEEZE_MAX), rel) } else { (r, x) };
                let (v, a) = search.inner(rr, pp);
                (v, a, rr, pp)
            };
            let x0 = if axis == 0 { r } else { rel };
            let lo = eval(x0 - h);
            let hi = eval(x0 + h);
            let mut cand = vec![lo, hi];
            let denom = lo.0 - 2.0 * best + hi.0;
            if denom.is_finite() && denom > 0.0 {
                let shift = 0.5 * h * (lo.0 - hi.0) / denom;
                cand.push(eval(x0 + shift.clamp(-h, h)));
            }
            for c in cand {
                if c.0 < best {
                    (best, alpha, r, rel) = c;
                    improved = true;
                }
            }
        }
        if !improved {
            steps[0] *= 0.5;
            steps[1] *= 0.5;
        }
    }
    let params = GaussianParams::new(alpha, 0.0, r, rel.rem_euclid(TAU))?;
    Ok(BoundResult {
        g2_min: best,
        occupation: gaussian_moments(n_init, &params).0,
        params,
        constrained: window.is_some(),
    })
}
