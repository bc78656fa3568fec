use crate::hilbert::DensityMatrix;
use crate::ode::{integrate, SolverOptions};
use crate::{CMatrix, Error, Result, C64};

/// Time-dependent Lindblad generator acting on `dim x dim` operators.
pub trait Generator: Sync {
    fn dim(&self) -> usize;

    /// Writes `L(t) rho` into `out`.
    fn apply(&self, t: f64, rho: &CMatrix, out: &mut CMatrix);

    /// Step bound that keeps the integrator from skipping over pulses.
    fn max_step(&self) -> Option<f64> {
        None
    }

    /// Times where the generator is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Dense matrix of `L(t)` in the column-stacking convention.
    fn superoperator(&self, t: f64) -> Superoperator {
        let d = self.dim();
        let mut m = CMatrix::zeros(d * d, d * d);
        let mut basis = CMatrix::zeros(d, d);
        let mut out = CMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                basis[(i, j)] = C64::new(1.0, 0.0);
                self.apply(t, &basis, &mut out);
                basis[(i, j)] = C64::new(0.0, 0.0);
                let col = i + d * j;
                for (k, v) in out.iter().enumerate() {
                    m[(k, col)] = *v;
                }
            }
        }
        Superoperator { dim: d, matrix: m }
    }
}

/// Generator with a designated detection channel `J`, split as
/// `L = (L - J) + J`.
pub trait CountingGenerator: Generator {
    /// Writes `J(t) rho` into `out`, at unit detection efficiency.
    fn emission(&self, t: f64, rho: &CMatrix, out: &mut CMatrix);

    /// Writes the Heisenberg-picture dual `L†(t) x` into `out`.
    fn apply_adjoint(&self, t: f64, x: &CMatrix, out: &mut CMatrix);

    /// Writes `J†(t) x` into `out`.
    fn emission_adjoint(&self, t: f64, x: &CMatrix, out: &mut CMatrix);
}

/// Dense superoperator on column-stacked density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    /// Hilbert-space dimension.
    pub dim: usize,
    /// `dim^2 x dim^2` matrix.
    pub matrix: CMatrix,
}

impl Superoperator {
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        let d = self.dim;
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::DimensionMismatch(rho.nrows(), d));
        }
        let v = nalgebra::DVector::from_column_slice(rho.as_slice());
        let w = &self.matrix * v;
        Ok(CMatrix::from_column_slice(d, d, w.as_slice()))
    }

    /// Largest magnitude of the trace functional applied to `L`; zero for a
    /// trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let d = self.dim;
        (0..d * d)
            .map(|col| {
                (0..d)
                    .map(|i| self.matrix[(i + d * i, col)])
                    .sum::<C64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `L = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroGenerator {
    pub dim: usize,
}

impl Generator for ZeroGenerator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, _t: f64, _rho: &CMatrix, out: &mut CMatrix) {
        out.fill(C64::new(0.0, 0.0));
    }
}

fn check_interval(t0: f64, t1: f64, opts: &SolverOptions) -> Result<()> {
    if !(t1 >= t0) {
        return Err(Error::param("t1", format!("must be >= t0 ({t1:e} < {t0:e})")));
    }
    if !(opts.rtol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    Ok(())
}

/// Splits `[t0, t1]` at the generator's breakpoints.
pub(crate) fn segments(breaks: &[f64], t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&b| b > t0 && b < t1).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut a = t0;
    for c in cuts {
        out.push((a, c));
        a = c;
    }
    out.push((a, t1));
    out
}

pub(crate) fn options_for(gen: &impl Generator, opts: &SolverOptions) -> SolverOptions {
    match gen.max_step() {
        Some(h) => opts.with_max_step(h),
        None => *opts,
    }
}

/// Symmetrises a column-stacked `d x d` matrix in place.
pub(crate) fn hermitize_slice(y: &mut [C64], d: usize) {
    for j in 0..d {
        let jj = j + d * j;
        y[jj] = C64::new(y[jj].re, 0.0);
        for i in j + 1..d {
            let a = i + d * j;
            let b = j + d * i;
            let v = 0.5 * (y[a] + y[b].conj());
            y[a] = v;
            y[b] = v.conj();
        }
    }
}

/// Evolves an arbitrary operator (not necessarily a state) under `gen`.
pub fn propagate_matrix(m: &mut CMatrix, gen: &impl Generator, t0: f64, t1: f64, opts: &SolverOptions) -> Result<()> {
    check_interval(t0, t1, opts)?;
    let d = gen.dim();
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(m.nrows(), d));
    }
    let opts = options_for(gen, opts);
    let mut scratch_in = CMatrix::zeros(d, d);
    let mut scratch_out = CMatrix::zeros(d, d);
    for (a, b) in segments(&gen.breakpoints(), t0, t1) {
        integrate(
            m.as_mut_slice(),
            a,
            b,
            &opts,
            |t, y, dy| {
                scratch_in.as_mut_slice().copy_from_slice(y);
                gen.apply(t, &scratch_in, &mut scratch_out);
                dy.copy_from_slice(scratch_out.as_slice());
            },
            |y| hermitize_slice(y, d),
        )?;
    }
    Ok(())
}

/// Evolves `state` from `t0` to `t1`.
///
/// The trace is not renormalised, so any drift is visible to the caller.
/// Fails if the top Fock level ends up populated.
pub fn propagate(state: &DensityMatrix, gen: &impl Generator, t0: f64, t1: f64, opts: &SolverOptions) -> Result<DensityMatrix> {
    let mut m = state.matrix().clone();
    propagate_matrix(&mut m, gen, t0, t1, opts)?;
    let out = DensityMatrix::from_evolved(m);
    out.check_truncation()?;
    Ok(out)
}
