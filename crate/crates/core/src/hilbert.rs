//! Single-mode truncated Fock-space algebra.
//!
//! States live in the span of `|0>, ..., |dim-1>`. Ladder operators are the
//! exact truncations, so `create * annihilate` is the number operator while
//! `annihilate * create` loses its top diagonal entry.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::{CMatrix, Error, Result, C64};

/// Default truncation, matching a maximal phonon number of 50.
pub const DEFAULT_DIM: usize = 50;

/// Extra levels used internally by the Gaussian channels.
pub const GUARD_LEVELS: usize = 30;

/// Largest tolerated population of the top retained level.
pub const LEAK_LIMIT: f64 = 1e-6;

pub const TRACE_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Below this mean occupation g2 is treated as undefined.
pub const VACUUM_THRESHOLD: f64 = 1e-12;

/// Ladder and number operators of one truncated mode.
#[derive(Debug, Clone)]
pub struct ModeOps {
    pub dim: usize,
    pub annihilate: CMatrix,
    pub create: CMatrix,
    pub number: CMatrix,
}

impl ModeOps {
    pub fn new(dim: usize) -> Self {
        let annihilate = CMatrix::from_fn(dim, dim, |i, j| {
            if j == i + 1 {
                C64::new((j as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let create = annihilate.adjoint();
        let number = &create * &annihilate;
        Self {
            dim,
            annihilate,
            create,
            number,
        }
    }
}

/// Canonical single-mode states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateKind {
    Vacuum,
    Fock(usize),
    Thermal(f64),
    Coherent(C64),
}

/// A Hermitian, unit-trace, positive matrix in a truncated Fock basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    elements: CMatrix,
}

/// Outcome of [`DensityMatrix::health`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Health {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub top_population: f64,
}

impl Health {
    pub fn is_valid(&self) -> bool {
        self.trace_error < TRACE_TOL
            && self.hermiticity_error < HERMITIAN_TOL
            && self.min_eigenvalue >= -POSITIVITY_TOL
    }

    pub fn truncation_ok(&self) -> bool {
        self.top_population < LEAK_LIMIT
    }
}

impl DensityMatrix {
    /// Wraps a matrix after checking trace, Hermiticity and positivity.
    pub fn from_matrix(elements: CMatrix) -> Result<Self> {
        if !elements.is_square() {
            return Err(Error::InvalidState(format!(
                "matrix is {}x{}",
                elements.nrows(),
                elements.ncols()
            )));
        }
        let rho = Self { elements };
        let h = rho.health();
        if h.trace_error >= TRACE_TOL {
            return Err(Error::InvalidState(format!(
                "trace deviates from one by {:.3e}",
                h.trace_error
            )));
        }
        if h.hermiticity_error >= HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (max deviation {:.3e})",
                h.hermiticity_error
            )));
        }
        if h.min_eigenvalue < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {:.3e}",
                h.min_eigenvalue
            )));
        }
        Ok(rho)
    }

    /// Symmetrises and normalises `elements` without the positivity check.
    ///
    /// Used for integrator output, where the matrix is already a density
    /// matrix up to round-off.
    pub(crate) fn from_raw(mut elements: CMatrix) -> Result<Self> {
        hermitize(&mut elements);
        let tr = elements.trace().re;
        if !(tr.is_finite() && tr > 0.0) {
            return Err(Error::InvalidState(format!("trace {tr:.3e}")));
        }
        elements /= C64::new(tr, 0.0);
        Ok(Self { elements })
    }

    /// Symmetrises `elements` and keeps the trace as is.
    pub(crate) fn from_evolved(mut elements: CMatrix) -> Self {
        hermitize(&mut elements);
        Self { elements }
    }

    pub fn from_populations(p: &[f64]) -> Result<Self> {
        let d = p.len();
        let m = CMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(p[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self::from_matrix(m)
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.elements
    }

    pub fn into_matrix(self) -> CMatrix {
        self.elements
    }

    pub fn trace(&self) -> f64 {
        self.elements.trace().re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.elements[(n, n)].re).collect()
    }

    pub fn top_population(&self) -> f64 {
        let d = self.dim();
        self.elements[(d - 1, d - 1)].re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.elements.clone());
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.elements.clone());
        let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn health(&self) -> Health {
        let m = &self.elements;
        let herm = (m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        Health {
            trace_error: (self.trace() - 1.0).abs(),
            hermiticity_error: herm,
            min_eigenvalue: self.min_eigenvalue(),
            top_population: self.top_population(),
        }
    }

    /// Fails with [`Error::TruncationLeak`] if the top level is populated.
    pub fn check_truncation(&self) -> Result<()> {
        let top = self.top_population();
        if top >= LEAK_LIMIT {
            return Err(Error::TruncationLeak {
                population: top,
                level: self.dim() - 1,
                limit: LEAK_LIMIT,
                dim: self.dim(),
            });
        }
        Ok(())
    }

    /// Mean occupation `<b†b>`.
    pub fn mean_number(&self) -> f64 {
        (0..self.dim())
            .map(|n| n as f64 * self.elements[(n, n)].re)
            .sum()
    }

    /// Normally ordered second moment `<b†b†bb>`.
    pub fn factorial_moment2(&self) -> f64 {
        (0..self.dim())
            .map(|n| (n * n.saturating_sub(1)) as f64 * self.elements[(n, n)].re)
            .sum()
    }

    /// `<(b†b)^2>`.
    pub fn number_second_moment(&self) -> f64 {
        (0..self.dim())
            .map(|n| (n * n) as f64 * self.elements[(n, n)].re)
            .sum()
    }

    /// Copies the state into a larger space, zero-padding new levels.
    pub fn embed(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(Error::DimensionMismatch(self.dim(), dim));
        }
        let mut m = CMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (self.dim(), self.dim()))
            .copy_from(&self.elements);
        Ok(Self { elements: m })
    }
}

pub(crate) fn hermitize(m: &mut CMatrix) {
    let adj = m.adjoint();
    *m += adj;
    *m *= C64::new(0.5, 0.0);
}

fn top_level_guard(p: &[f64]) -> Result<()> {
    let d = p.len();
    if p[d - 1] >= LEAK_LIMIT {
        return Err(Error::TruncationLeak {
            population: p[d - 1],
            level: d - 1,
            limit: LEAK_LIMIT,
            dim: d,
        });
    }
    Ok(())
}

/// Builds a canonical state in a `dim`-level space.
///
/// Thermal and coherent distributions are renormalised over the retained
/// levels. Occupancies that still populate the top level are rejected.
pub fn make_state(kind: StateKind, dim: usize) -> Result<DensityMatrix> {
    if dim < 2 {
        return Err(Error::param("dim", format!("need at least 2 levels, got {dim}")));
    }
    match kind {
        StateKind::Vacuum => make_state(StateKind::Fock(0), dim),
        StateKind::Fock(n) => {
            if n >= dim {
                return Err(Error::param(
                    "n",
                    format!("Fock level {n} not representable at dim {dim}"),
                ));
            }
            let mut p = vec![0.0; dim];
            p[n] = 1.0;
            if n == dim - 1 {
                top_level_guard(&p)?;
            }
            DensityMatrix::from_populations(&p)
        }
        StateKind::Thermal(nbar) => {
            if !(nbar >= 0.0 && nbar.is_finite()) {
                return Err(Error::param("nbar", format!("must be >= 0, got {nbar}")));
            }
            let q = nbar / (1.0 + nbar);
            let mut p: Vec<f64> = (0..dim).map(|n| q.powi(n as i32)).collect();
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= z);
            top_level_guard(&p)?;
            DensityMatrix::from_populations(&p)
        }
        StateKind::Coherent(alpha) => {
            // amplitudes by recursion c_n = c_{n-1} alpha / sqrt(n)
            let mut c = vec![C64::new(0.0, 0.0); dim];
            c[0] = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
            for n in 1..dim {
                c[n] = c[n - 1] * alpha / (n as f64).sqrt();
            }
            let norm: f64 = c.iter().map(|z| z.norm_sqr()).sum();
            let p: Vec<f64> = c.iter().map(|z| z.norm_sqr() / norm).collect();
            top_level_guard(&p)?;
            let m = CMatrix::from_fn(dim, dim, |i, j| c[i] * c[j].conj() / norm);
            DensityMatrix::from_matrix(m)
        }
    }
}

/// Displacement and squeezing parameters `alpha = |alpha| e^{i phi}`,
/// `xi = r e^{i theta}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub alpha_mag: f64,
    pub alpha_phase: f64,
    pub squeeze_mag: f64,
    pub squeeze_phase: f64,
}

impl GaussianParams {
    pub fn new(alpha_mag: f64, alpha_phase: f64, squeeze_mag: f64, squeeze_phase: f64) -> Result<Self> {
        if !(alpha_mag >= 0.0) {
            return Err(Error::param("alpha_mag", "must be non-negative"));
        }
        if !(squeeze_mag >= 0.0) {
            return Err(Error::param("squeeze_mag", "must be non-negative"));
        }
        Ok(Self {
            alpha_mag,
            alpha_phase,
            squeeze_mag,
            squeeze_phase,
        })
    }

    /// Parameters on the `theta = 2 phi` slice.
    pub fn locked(alpha_mag: f64, phi: f64, squeeze_mag: f64) -> Result<Self> {
        Self::new(alpha_mag, phi, squeeze_mag, 2.0 * phi)
    }

    pub fn alpha(&self) -> C64 {
        C64::from_polar(self.alpha_mag, self.alpha_phase)
    }

    pub fn xi(&self) -> C64 {
        C64::from_polar(self.squeeze_mag, self.squeeze_phase)
    }
}

/// Conjugates `state` by `exp(generator)` inside a guard-banded space and
/// projects back onto the working dimension.
fn unitary_channel(state: &DensityMatrix, generator: impl Fn(&ModeOps) -> CMatrix) -> Result<DensityMatrix> {
    let dim = state.dim();
    let big = dim + GUARD_LEVELS;
    let ops = ModeOps::new(big);
    let u = generator(&ops).exp();
    let rho = state.embed(big)?;
    let out = &u * rho.matrix() * u.adjoint();

    let leaked: f64 = (dim - 1..big).map(|n| out[(n, n)].re).sum();
    if leaked >= LEAK_LIMIT {
        return Err(Error::TruncationLeak {
            population: leaked,
            level: dim - 1,
            limit: LEAK_LIMIT,
            dim,
        });
    }
    let block = out.view((0, 0), (dim, dim)).into_owned();
    DensityMatrix::from_raw(block)
}

/// `D(alpha) rho D(alpha)†` with `D(alpha) = exp(alpha b† - alpha* b)`.
pub fn apply_displacement(state: &DensityMatrix, alpha: C64) -> Result<DensityMatrix> {
    unitary_channel(state, |ops| {
        &ops.create * alpha - &ops.annihilate * alpha.conj()
    })
}

/// `S(xi) rho S(xi)†` with `S(xi) = exp((xi* b^2 - xi b†^2) / 2)`.
pub fn apply_squeeze(state: &DensityMatrix, xi: C64) -> Result<DensityMatrix> {
    unitary_channel(state, |ops| {
        let a2 = &ops.annihilate * &ops.annihilate;
        let c2 = &ops.create * &ops.create;
        (a2 * xi.conj() - c2 * xi) * C64::new(0.5, 0.0)
    })
}

/// `D(alpha) S(xi) rho S(xi)† D(alpha)†`.
pub fn apply_gaussian(state: &DensityMatrix, params: &GaussianParams) -> Result<DensityMatrix> {
    let squeezed = apply_squeeze(state, params.xi())?;
    apply_displacement(&squeezed, params.alpha())
}

/// Zero-delay intensity correlation `<b†b†bb> / <b†b>^2`.
pub fn g2_zero(state: &DensityMatrix) -> Result<f64> {
    let n = state.mean_number();
    if n <= VACUUM_THRESHOLD {
        return Err(Error::VacuumDenominator(n));
    }
    Ok(state.factorial_moment2() / (n * n))
}

/// `Tr[operator * state]`.
pub fn expect(state: &DensityMatrix, operator: &CMatrix) -> Result<C64> {
    if operator.nrows() != state.dim() || operator.ncols() != state.dim() {
        return Err(Error::DimensionMismatch(operator.nrows(), state.dim()));
    }
    Ok((operator * state.matrix()).trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ladder_action_and_commutator() {
        let ops = ModeOps::new(12);
        for n in 1..12 {
            assert_eq!(ops.annihilate[(n - 1, n)].re, (n as f64).sqrt());
        }
        assert_eq!(ops.number, &ops.create * &ops.annihilate);
        let comm = &ops.annihilate * &ops.create - &ops.create * &ops.annihilate;
        for i in 0..11 {
            for j in 0..11 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((comm[(i, j)] - C64::new(target, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn canonical_states() {
        let vac = make_state(StateKind::Vacuum, 10).unwrap();
        assert_eq!(vac.mean_number(), 0.0);

        let th = make_state(StateKind::Thermal(0.2), 50).unwrap();
        assert_abs_diff_eq!(th.mean_number(), 0.2, epsilon = 1e-9);

        let coh = make_state(StateKind::Coherent(C64::new(2.0, 0.0)), 50).unwrap();
        assert_abs_diff_eq!(coh.mean_number(), 4.0, epsilon = 1e-6);
    }

    #[test]
    fn state_errors() {
        assert!(make_state(StateKind::Vacuum, 1).is_err());
        assert!(make_state(StateKind::Fock(10), 10).is_err());
        assert!(make_state(StateKind::Thermal(-0.1), 10).is_err());
        assert!(matches!(
            make_state(StateKind::Thermal(5.0), 20),
            Err(Error::TruncationLeak { .. })
        ));
        assert!(matches!(
            make_state(StateKind::Coherent(C64::new(6.0, 0.0)), 20),
            Err(Error::TruncationLeak { .. })
        ));
    }

    #[test]
    fn g2_of_canonical_states() {
        let one = make_state(StateKind::Fock(1), 10).unwrap();
        assert_eq!(g2_zero(&one).unwrap(), 0.0);
        let two = make_state(StateKind::Fock(2), 10).unwrap();
        assert_abs_diff_eq!(g2_zero(&two).unwrap(), 0.5, epsilon = 1e-15);
        let th = make_state(StateKind::Thermal(0.7), 80).unwrap();
        assert_abs_diff_eq!(g2_zero(&th).unwrap(), 2.0, epsilon = 1e-9);
        let coh = make_state(StateKind::Coherent(C64::new(2.0, 0.0)), 50).unwrap();
        assert_abs_diff_eq!(g2_zero(&coh).unwrap(), 1.0, epsilon = 1e-9);
        let vac = make_state(StateKind::Vacuum, 10).unwrap();
        assert!(matches!(g2_zero(&vac), Err(Error::VacuumDenominator(_))));
    }

    #[test]
    fn g2_invariant_sets() {
        for n in 1..=5 {
            let g = g2_zero(&make_state(StateKind::Fock(n), 50).unwrap()).unwrap();
            assert!((g - (1.0 - 1.0 / n as f64)).abs() < 1e-8);
        }
        for (nbar, dim) in [(0.1, 50), (0.2, 50), (1.0, 50), (5.0, 160)] {
            let g = g2_zero(&make_state(StateKind::Thermal(nbar), dim).unwrap()).unwrap();
            assert!((g - 2.0).abs() < 1e-8, "{nbar}: {g}");
            let g = g2_zero(&make_state(StateKind::Coherent(C64::new(nbar.sqrt(), 0.0)), 50).unwrap()).unwrap();
            assert!((g - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn expectation_values() {
        let ops = ModeOps::new(50);
        let th = make_state(StateKind::Thermal(0.104), 50).unwrap();
        assert_abs_diff_eq!(expect(&th, &ops.number).unwrap().re, 0.104, epsilon = 1e-9);
        let vac = make_state(StateKind::Vacuum, 50).unwrap();
        assert_eq!(expect(&vac, &ops.number).unwrap().re, 0.0);
        let one = make_state(StateKind::Fock(1), 50).unwrap();
        let n2 = &ops.number * &ops.number;
        assert_abs_diff_eq!(expect(&one, &n2).unwrap().re, 1.0, epsilon = 1e-15);
        let small = ModeOps::new(10);
        assert!(matches!(
            expect(&one, &small.number),
            Err(Error::DimensionMismatch(10, 50))
        ));
    }

    #[test]
    fn gaussian_channels() {
        let vac = make_state(StateKind::Vacuum, 50).unwrap();
        let d = apply_displacement(&vac, C64::new(1.5, 0.0)).unwrap();
        assert_abs_diff_eq!(d.mean_number(), 2.25, epsilon = 1e-6);
        assert_abs_diff_eq!(d.trace(), 1.0, epsilon = 1e-8);

        let s = apply_squeeze(&vac, C64::new(0.44, 0.0)).unwrap();
        assert_abs_diff_eq!(s.mean_number(), 0.44f64.sinh().powi(2), epsilon = 1e-6);
    }

    #[test]
    fn displacement_leak_is_reported() {
        let vac = make_state(StateKind::Vacuum, 20).unwrap();
        assert!(matches!(
            apply_displacement(&vac, C64::new(4.0, 0.0)),
            Err(Error::TruncationLeak { .. })
        ));
    }

    #[test]
    fn from_matrix_rejects_invalid() {
        let mut m = CMatrix::identity(3, 3);
        assert!(DensityMatrix::from_matrix(m.clone()).is_err());
        m /= C64::new(3.0, 0.0);
        assert!(DensityMatrix::from_matrix(m.clone()).is_ok());
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::from_matrix(m).is_err());
        let neg = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.1, 0.0),
            C64::new(-0.1, 0.0),
        ]));
        assert!(DensityMatrix::from_matrix(neg).is_err());
    }
}
