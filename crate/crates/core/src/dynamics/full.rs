use super::generator::{CountingGenerator, Generator, Superoperator};
use super::{rates, DeviceParams, HeatingModel, Pulse, Sideband};
use crate::{CMatrix, Error, Result, C64};

/// Largest joint (cavity x mechanics) dimension the dense full model accepts.
pub const MAX_JOINT_DIM: usize = 300;

/// Interaction picked by the pulse detuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `a†b + a b†`, red detuning.
    Swap,
    /// `a†b† + a b`, blue detuning.
    DownConversion,
}

impl From<Sideband> for Coupling {
    fn from(s: Sideband) -> Self {
        match s {
            Sideband::Red => Coupling::Swap,
            Sideband::Blue => Coupling::DownConversion,
        }
    }
}

/// Sparse real matrix stored as `(row, col, value)` triplets.
#[derive(Debug, Clone, Default)]
struct Sparse {
    entries: Vec<(usize, usize, f64)>,
}

impl Sparse {
    fn adjoint(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        }
    }

    fn product(&self, other: &Sparse, n: usize) -> Sparse {
        let mut dense = vec![0.0; n * n];
        for &(r, k, v) in &self.entries {
            for &(k2, c, w) in &other.entries {
                if k == k2 {
                    dense[r + n * c] += v * w;
                }
            }
        }
        let mut entries = Vec::new();
        for c in 0..n {
            for r in 0..n {
                let v = dense[r + n * c];
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Sparse { entries }
    }

    fn sum(&self, other: &Sparse) -> Sparse {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        Sparse { entries }
    }

    fn diagonal(&self, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for &(r, c, v) in &self.entries {
            if r == c {
                d[r] += v;
            }
        }
        d
    }

    /// `out += coeff * (S x - x S)`.
    fn commutator(&self, x: &CMatrix, coeff: C64, out: &mut CMatrix) {
        let n = x.nrows();
        for &(r, c, v) in &self.entries {
            let f = coeff * v;
            for j in 0..n {
                out[(r, j)] += x[(c, j)] * f;
                out[(j, c)] -= x[(j, r)] * f;
            }
        }
    }

    /// `out += coeff * S x S†`.
    fn sandwich(&self, x: &CMatrix, coeff: f64, out: &mut CMatrix) {
        for &(r1, c1, v1) in &self.entries {
            for &(r2, c2, v2) in &self.entries {
                out[(r1, r2)] += x[(c1, c2)] * (coeff * v1 * v2);
            }
        }
    }
}

/// Cavity plus mechanics with the optomechanical interaction kept explicit.
///
/// The linearised coupling is `G(t) = sqrt(kappa Gamma_-(t) / 4)`, which
/// makes the adiabatic limit reproduce the reduced-model rates exactly.
#[derive(Debug, Clone)]
pub struct TwoModeModel {
    pub device: DeviceParams,
    pub heating: HeatingModel,
    pub pulses: Vec<Pulse>,
    pub cavity_dim: usize,
    pub mech_dim: usize,
    /// Cavity energy decay used in the dissipator; `device.kappa` by default.
    pub cavity_decay: f64,
    a: Sparse,
    b: Sparse,
    bd: Sparse,
    swap: Sparse,
    down_conversion: Sparse,
    n_a: Vec<f64>,
    n_b: Vec<f64>,
    bbdag: Vec<f64>,
}

impl TwoModeModel {
    pub fn new(
        device: DeviceParams,
        heating: HeatingModel,
        pulses: Vec<Pulse>,
        cavity_dim: usize,
        mech_dim: usize,
    ) -> Result<Self> {
        device.validate()?;
        heating.validate()?;
        if cavity_dim < 2 {
            return Err(Error::param("cavity_dim", format!("need at least 2 levels, got {cavity_dim}")));
        }
        if mech_dim < 2 {
            return Err(Error::param("mech_dim", format!("need at least 2 levels, got {mech_dim}")));
        }
        let n = cavity_dim * mech_dim;
        if n > MAX_JOINT_DIM {
            return Err(Error::param(
                "cavity_dim",
                format!("joint dimension {n} exceeds {MAX_JOINT_DIM}"),
            ));
        }
        let idx = |c: usize, m: usize| c * mech_dim + m;
        let mut a = Sparse::default();
        let mut b = Sparse::default();
        for c in 0..cavity_dim {
            for m in 0..mech_dim {
                if c + 1 < cavity_dim {
                    a.entries.push((idx(c, m), idx(c + 1, m), ((c + 1) as f64).sqrt()));
                }
                if m + 1 < mech_dim {
                    b.entries.push((idx(c, m), idx(c, m + 1), ((m + 1) as f64).sqrt()));
                }
            }
        }
        let ad = a.adjoint();
        let bd = b.adjoint();
        let swap = ad.product(&b, n).sum(&a.product(&bd, n));
        let down_conversion = ad.product(&bd, n).sum(&a.product(&b, n));
        let n_a = ad.product(&a, n).diagonal(n);
        let n_b = bd.product(&b, n).diagonal(n);
        let bbdag = b.product(&bd, n).diagonal(n);
        Ok(Self {
            cavity_decay: device.kappa,
            device,
            heating,
            pulses,
            cavity_dim,
            mech_dim,
            a,
            b,
            bd,
            swap,
            down_conversion,
            n_a,
            n_b,
            bbdag,
        })
    }

    pub fn with_cavity_decay(mut self, kappa: f64) -> Self {
        self.cavity_decay = kappa;
        self
    }

    /// Coupling amplitudes `(G_swap, G_dc)` at time `t`.
    pub fn couplings(&self, t: f64) -> (f64, f64) {
        let mut g = (0.0, 0.0);
        for p in &self.pulses {
            let gm = rates(&self.device, p, t).gamma_minus;
            let amp = (self.device.kappa * gm / 4.0).sqrt();
            match Coupling::from(p.sideband) {
                Coupling::Swap => g.0 += amp,
                Coupling::DownConversion => g.1 += amp,
            }
        }
        g
    }

    fn thermal_rates(&self, t: f64) -> (f64, f64) {
        let gamma_nb = self.device.gamma * self.heating.bath_n + self.heating.influx(t);
        (self.device.gamma + gamma_nb, gamma_nb)
    }

    /// Joint product state `cavity ⊗ mechanics`.
    pub fn product_state(&self, cavity: &CMatrix, mech: &CMatrix) -> Result<CMatrix> {
        if cavity.nrows() != self.cavity_dim {
            return Err(Error::DimensionMismatch(cavity.nrows(), self.cavity_dim));
        }
        if mech.nrows() != self.mech_dim {
            return Err(Error::DimensionMismatch(mech.nrows(), self.mech_dim));
        }
        Ok(cavity.kronecker(mech))
    }

    fn dissipate(&self, x: &CMatrix, out: &mut CMatrix, t: f64) {
        let n = x.nrows();
        let (lower, raise) = self.thermal_rates(t);
        let k = self.cavity_decay;
        for j in 0..n {
            for i in 0..n {
                let damp = k * (self.n_a[i] + self.n_a[j])
                    + lower * (self.n_b[i] + self.n_b[j])
                    + raise * (self.bbdag[i] + self.bbdag[j]);
                out[(i, j)] -= x[(i, j)] * (0.5 * damp);
            }
        }
        self.a.sandwich(x, k, out);
        self.b.sandwich(x, lower, out);
        self.bd.sandwich(x, raise, out);
    }
}

/// `out += coeff * S† x S`.
fn sandwich_adjoint(s: &Sparse, x: &CMatrix, coeff: f64, out: &mut CMatrix) {
    for &(r1, c1, v1) in &s.entries {
        for &(r2, c2, v2) in &s.entries {
            out[(c1, c2)] += x[(r1, r2)] * (coeff * v1 * v2);
        }
    }
}

impl Generator for TwoModeModel {
    fn dim(&self) -> usize {
        self.cavity_dim * self.mech_dim
    }

    fn apply(&self, t: f64, rho: &CMatrix, out: &mut CMatrix) {
        out.fill(C64::new(0.0, 0.0));
        let (gs, gd) = self.couplings(t);
        let mi = C64::new(0.0, -1.0);
        if gs != 0.0 {
            self.swap.commutator(rho, mi * gs, out);
        }
        if gd != 0.0 {
            self.down_conversion.commutator(rho, mi * gd, out);
        }
        self.dissipate(rho, out, t);
    }

    fn max_step(&self) -> Option<f64> {
        self.pulses
            .iter()
            .map(|p| p.fwhm / 8.0)
            .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.min(h))))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.heating.knots().collect();
        for p in &self.pulses {
            v.push(p.support().start);
            v.push(p.support().end);
        }
        v
    }
}

impl CountingGenerator for TwoModeModel {
    fn emission(&self, _t: f64, rho: &CMatrix, out: &mut CMatrix) {
        out.fill(C64::new(0.0, 0.0));
        self.a.sandwich(rho, self.cavity_decay, out);
    }

    fn apply_adjoint(&self, t: f64, x: &CMatrix, out: &mut CMatrix) {
        out.fill(C64::new(0.0, 0.0));
        let (gs, gd) = self.couplings(t);
        let pi = C64::new(0.0, 1.0);
        if gs != 0.0 {
            self.swap.commutator(x, pi * gs, out);
        }
        if gd != 0.0 {
            self.down_conversion.commutator(x, pi * gd, out);
        }
        let n = x.nrows();
        let (lower, raise) = self.thermal_rates(t);
        let k = self.cavity_decay;
        for j in 0..n {
            for i in 0..n {
                let damp = k * (self.n_a[i] + self.n_a[j])
                    + lower * (self.n_b[i] + self.n_b[j])
                    + raise * (self.bbdag[i] + self.bbdag[j]);
                out[(i, j)] -= x[(i, j)] * (0.5 * damp);
            }
        }
        sandwich_adjoint(&self.a, x, k, out);
        sandwich_adjoint(&self.b, x, lower, out);
        sandwich_adjoint(&self.bd, x, raise, out);
    }

    fn emission_adjoint(&self, _t: f64, x: &CMatrix, out: &mut CMatrix) {
        out.fill(C64::new(0.0, 0.0));
        sandwich_adjoint(&self.a, x, self.cavity_decay, out);
    }
}

/// Mechanical marginal `Tr_cav rho` of a joint state.
pub fn partial_trace_cavity(rho: &CMatrix, cavity_dim: usize, mech_dim: usize) -> Result<CMatrix> {
    if rho.nrows() != cavity_dim * mech_dim {
        return Err(Error::DimensionMismatch(rho.nrows(), cavity_dim * mech_dim));
    }
    Ok(CMatrix::from_fn(mech_dim, mech_dim, |i, j| {
        (0..cavity_dim)
            .map(|c| rho[(c * mech_dim + i, c * mech_dim + j)])
            .sum()
    }))
}

/// Dense generator of the two-mode model for a single pulse at time `t`.
pub fn liouvillian_full(
    device: &DeviceParams,
    heating: &HeatingModel,
    pulse: &Pulse,
    t: f64,
    cavity_dim: usize,
    mech_dim: usize,
) -> Result<Superoperator> {
    let m = TwoModeModel::new(*device, heating.clone(), vec![*pulse], cavity_dim, mech_dim)?;
    Ok(m.superoperator(t))
}
