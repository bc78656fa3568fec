//! Heralded states and intensity correlations from the photon-counting
//! expansion of the master equation.
//!
//! A generator `L` with detection channel `J` is split into the no-click
//! evolution `S` (generated by `L - eta 1_W J`) and the click terms. The
//! heralded state is `(T - S) rho` normalised, evolved here as the
//! difference `D = rho_T - rho_S` with `dD/dt = L D + eta 1_W J rho_S` so
//! that no cancellation happens when clicks are rare.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::generator::{hermitize_slice, options_for, segments};
use crate::dynamics::{
    propagate_matrix, CountingGenerator, DeviceParams, Generator, HeatingModel, Pulse, PulseSchedule, ReducedModel,
};
use crate::hilbert::{make_state, DensityMatrix, StateKind, DEFAULT_DIM, VACUUM_THRESHOLD};
use crate::ode::{integrate, SolverOptions};
use crate::{CMatrix, Error, Result, Window, C64};

/// Smallest herald probability that still defines a conditional state.
pub const MIN_HERALD_PROB: f64 = 1e-15;

/// How the herald condition is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeraldMethod {
    /// At least one detection, `T - S`.
    #[default]
    Exact,
    /// First order in the detection efficiency: `int J(t) rho(t) dt`.
    /// Error is `O(p_b)` relative; independent of the efficiency.
    OneJump,
}

/// Conditional state after a herald click.
#[derive(Debug, Clone)]
pub struct HeraldResult {
    /// Normalised conditional state at `time`.
    pub state: DensityMatrix,
    /// Probability of at least one herald detection.
    pub click_prob: f64,
    /// Herald acceptance window.
    pub window: Window,
    /// Time at which `state` is given (end of the window).
    pub time: f64,
}

fn trace(y: &[C64], d: usize) -> f64 {
    (0..d).map(|i| y[i + d * i].re).sum()
}

fn check_eff(eff: f64) -> Result<()> {
    if !(eff > 0.0 && eff <= 1.0) {
        return Err(Error::param("detect_eff", format!("must be in (0, 1], got {eff}")));
    }
    Ok(())
}

/// Heralds on detections inside `window`, starting from `initial` at `t0`.
///
/// The returned state lives at `window.end`.
pub fn herald_with<G: CountingGenerator>(
    gen: &G,
    initial: &DensityMatrix,
    t0: f64,
    detect_eff: f64,
    window: Window,
    method: HeraldMethod,
    opts: &SolverOptions,
) -> Result<HeraldResult> {
    check_eff(detect_eff)?;
    let d = gen.dim();
    if initial.dim() != d {
        return Err(Error::DimensionMismatch(initial.dim(), d));
    }
    if window.is_empty() || window.end < t0 {
        return Err(Error::param("window", "herald window must end after the start time"));
    }
    let n = d * d;
    // y = [rho_a, rho_b]; Exact: a = no-click, b = D. OneJump: a = total, b = sigma.
    let mut y = vec![C64::new(0.0, 0.0); 2 * n];
    y[..n].copy_from_slice(initial.matrix().as_slice());
    let opts = options_for(gen, opts);
    let mut breaks = gen.breakpoints();
    breaks.push(window.start);
    let mut a = CMatrix::zeros(d, d);
    let mut b = CMatrix::zeros(d, d);
    let mut la = CMatrix::zeros(d, d);
    let mut lb = CMatrix::zeros(d, d);
    let mut ja = CMatrix::zeros(d, d);
    for (s0, s1) in segments(&breaks, t0, window.end) {
        let inside = s0 >= window.start;
        integrate(
            &mut y,
            s0,
            s1,
            &opts,
            |t, y, dy| {
                a.as_mut_slice().copy_from_slice(&y[..n]);
                b.as_mut_slice().copy_from_slice(&y[n..]);
                gen.apply(t, &a, &mut la);
                gen.apply(t, &b, &mut lb);
                if inside {
                    gen.emission(t, &a, &mut ja);
                    let w = match method {
                        HeraldMethod::Exact => detect_eff,
                        HeraldMethod::OneJump => 1.0,
                    };
                    for k in 0..n {
                        let jk = ja.as_slice()[k] * w;
                        dy[n + k] = lb.as_slice()[k] + jk;
                        dy[k] = match method {
                            HeraldMethod::Exact => la.as_slice()[k] - jk,
                            HeraldMethod::OneJump => la.as_slice()[k],
                        };
                    }
                } else {
                    dy[..n].copy_from_slice(la.as_slice());
                    dy[n..].copy_from_slice(lb.as_slice());
                }
            },
            |y| {
                hermitize_slice(&mut y[..n], d);
                hermitize_slice(&mut y[n..], d);
            },
        )?;
    }
    let raw = trace(&y[n..], d);
    let click_prob = match method {
        HeraldMethod::Exact => raw,
        HeraldMethod::OneJump => detect_eff * raw,
    };
    if !(click_prob >= MIN_HERALD_PROB) {
        return Err(Error::ZeroProbabilityHerald(click_prob));
    }
    let state = DensityMatrix::from_raw(CMatrix::from_column_slice(d, d, &y[n..]))?;
    state.check_truncation()?;
    Ok(HeraldResult {
        state,
        click_prob: click_prob.min(1.0),
        window,
        time: window.end,
    })
}

/// Heralds a single pump pulse acting on `initial` in the reduced model.
#[allow(clippy::too_many_arguments)]
pub fn herald(
    initial: &DensityMatrix,
    device: &DeviceParams,
    pump: &Pulse,
    heating: &HeatingModel,
    detect_eff: f64,
    window: Window,
    method: HeraldMethod,
    opts: &SolverOptions,
) -> Result<HeraldResult> {
    if pump.sideband != crate::dynamics::Sideband::Blue {
        return Err(Error::param("pump", "heralding needs a blue-detuned pump"));
    }
    let model = ReducedModel::new(*device, heating.clone(), vec![*pump], initial.dim())?;
    herald_with(&model, initial, pump.support().start.min(window.start), detect_eff, window, method, opts)
}

/// Normalised detection weight `p(t)` on a read window.
#[derive(Debug, Clone)]
pub struct EffectivePulseShape {
    pub window: Window,
    /// Single-pole filter bandwidth (rad/s); `None` passes the envelope.
    pub filter_bandwidth: Option<f64>,
    pulse: Pulse,
    norm: f64,
    grid: Vec<(f64, f64)>,
}

const FILTER_GRID: usize = 4001;

impl EffectivePulseShape {
    /// Envelope of `read` restricted to `window`.
    pub fn identity(read: &Pulse, window: Window) -> Result<Self> {
        if window.is_empty() {
            return Err(Error::param("window", "read window is empty"));
        }
        let norm = read.cumulative(window.end) - read.cumulative(window.start);
        if !(norm > 0.0) {
            return Err(Error::ZeroDenominator("read envelope vanishes on the window"));
        }
        Ok(Self {
            window,
            filter_bandwidth: None,
            pulse: *read,
            norm,
            grid: Vec::new(),
        })
    }

    /// Envelope passed through a single-pole low-pass of bandwidth `omega`.
    pub fn filtered(read: &Pulse, window: Window, omega: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::param("filter_bandwidth", "must be positive"));
        }
        if window.is_empty() {
            return Err(Error::param("window", "read window is empty"));
        }
        let start = read.support().start.min(window.start);
        let h = (window.end - start) / (FILTER_GRID - 1) as f64;
        let decay = (-omega * h).exp();
        let mut y = 0.0;
        let mut prev = read.envelope(start);
        let mut raw = Vec::with_capacity(FILTER_GRID);
        raw.push((start, 0.0));
        for i in 1..FILTER_GRID {
            let t = start + i as f64 * h;
            let e = read.envelope(t);
            // exact for a linear input between grid points
            let w1 = 1.0 - (1.0 - decay) / (omega * h);
            let w0 = 1.0 - decay - w1;
            y = y * decay + w0 * prev + w1 * e;
            prev = e;
            raw.push((t, y.max(0.0)));
        }
        let mut grid: Vec<(f64, f64)> = raw.into_iter().filter(|&(t, _)| t >= window.start - h).collect();
        if let Some(first) = grid.first_mut() {
            if first.0 < window.start {
                *first = (window.start, first.1);
            }
        }
        let norm: f64 = grid.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
        if !(norm > 0.0) {
            return Err(Error::ZeroDenominator("filtered envelope vanishes on the window"));
        }
        Ok(Self {
            window,
            filter_bandwidth: Some(omega),
            pulse: *read,
            norm,
            grid,
        })
    }

    /// `p(t)`, zero outside the window.
    pub fn weight(&self, t: f64) -> f64 {
        if !self.window.contains(t) {
            return 0.0;
        }
        match self.filter_bandwidth {
            None => self.pulse.envelope(t) / self.norm,
            Some(_) => {
                let i = self.grid.partition_point(|&(x, _)| x <= t).clamp(1, self.grid.len() - 1);
                let (t0, y0) = self.grid[i - 1];
                let (t1, y1) = self.grid[i];
                let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                (y0 + f * (y1 - y0)) / self.norm
            }
        }
    }

    /// Integral of `p` over the window.
    pub fn total(&self) -> f64 {
        match self.filter_bandwidth {
            None => (self.pulse.cumulative(self.window.end) - self.pulse.cumulative(self.window.start)) / self.norm,
            Some(_) => {
                self.grid
                    .windows(2)
                    .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
                    .sum::<f64>()
                    / self.norm
            }
        }
    }
}

/// `Tr[N rho]` of a column-stacked matrix.
fn number_of(y: &[C64], d: usize) -> f64 {
    (0..d).map(|i| i as f64 * y[i + d * i].re).sum()
}

/// `out = b x b†` for column-stacked matrices.
fn lower_sandwich(x: &[C64], out: &mut [C64], d: usize, sqrt_n: &[f64]) {
    for j in 0..d {
        for i in 0..d {
            out[i + d * j] = if i + 1 < d && j + 1 < d {
                x[(i + 1) + d * (j + 1)] * (sqrt_n[i + 1] * sqrt_n[j + 1])
            } else {
                C64::new(0.0, 0.0)
            };
        }
    }
}

/// Evolves `state` from `t0` to `t1` and returns the matrix.
fn evolve<G: Generator>(gen: &G, state: &CMatrix, t0: f64, t1: f64, opts: &SolverOptions) -> Result<CMatrix> {
    let mut m = state.clone();
    propagate_matrix(&mut m, gen, t0, t1, opts)?;
    Ok(m)
}

/// Detected photon rate `eta Tr[J(t) rho(t)]` after a click at `t_click`.
pub fn intensity<G: CountingGenerator>(
    state_at_click: &DensityMatrix,
    t_click: f64,
    gen: &G,
    detect_eff: f64,
    t: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    if t < t_click {
        return Err(Error::param("t", "must not precede the click"));
    }
    let rho = evolve(gen, state_at_click.matrix(), t_click, t, opts)?;
    let mut j = CMatrix::zeros(gen.dim(), gen.dim());
    gen.emission(t, &rho, &mut j);
    Ok((detect_eff * j.trace().re).max(0.0))
}

/// Normally ordered detection correlation `<:I(t1) I(t2):>`, `t2 >= t1`.
#[allow(clippy::too_many_arguments)]
pub fn correlation<G: CountingGenerator>(
    state_at_click: &DensityMatrix,
    t_click: f64,
    gen: &G,
    detect_eff: f64,
    t1: f64,
    t2: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    if !(t_click <= t1 && t1 <= t2) {
        return Err(Error::param("t2", "need t_click <= t1 <= t2"));
    }
    let d = gen.dim();
    let rho = evolve(gen, state_at_click.matrix(), t_click, t1, opts)?;
    let mut sigma = CMatrix::zeros(d, d);
    gen.emission(t1, &rho, &mut sigma);
    let sigma = evolve(gen, &sigma, t1, t2, opts)?;
    let mut j = CMatrix::zeros(d, d);
    gen.emission(t2, &sigma, &mut j);
    Ok((detect_eff * detect_eff * j.trace().re).max(0.0))
}

/// `<:N(t1) N(t2):>` for `t2 >= t1` in the reduced model.
pub fn number_correlation(
    state_at_click: &DensityMatrix,
    t_click: f64,
    model: &ReducedModel,
    t1: f64,
    t2: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    if !(t_click <= t1 && t1 <= t2) {
        return Err(Error::param("t2", "need t_click <= t1 <= t2"));
    }
    let d = model.dim;
    let sqrt_n: Vec<f64> = (0..=d).map(|n| (n as f64).sqrt()).collect();
    let rho = evolve(model, state_at_click.matrix(), t_click, t1, opts)?;
    let mut s = CMatrix::zeros(d, d);
    lower_sandwich(rho.as_slice(), s.as_mut_slice(), d, &sqrt_n);
    let s = evolve(model, &s, t1, t2, opts)?;
    Ok(number_of(s.as_slice(), d))
}

/// Correlation lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lag {
    /// Both detections from the same read pulse.
    Zero,
    /// Detections from read pulses `n` cycles apart.
    Cycles(i64),
}

/// Window-integrated moments of a read pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadMoments {
    /// `int p <N>`.
    pub weighted_number: f64,
    /// `int int p p <:N N:>` over the full square.
    pub weighted_pairs: f64,
    /// Emitted photons in the window at unit efficiency, `int Tr[J rho]`.
    pub emitted: f64,
}

impl ReadMoments {
    pub fn g2(&self) -> Result<f64> {
        if !(self.weighted_number > VACUUM_THRESHOLD * 1e-3) {
            return Err(Error::ZeroDenominator("no intensity in the read window"));
        }
        Ok(self.weighted_pairs / (self.weighted_number * self.weighted_number))
    }
}

/// Integrates the read-window moments for `state` given at `t_start`.
pub fn read_moments(
    state: &CMatrix,
    t_start: f64,
    model: &ReducedModel,
    shape: &EffectivePulseShape,
    opts: &SolverOptions,
) -> Result<ReadMoments> {
    let d = model.dim;
    let n = d * d;
    let w = shape.window;
    if t_start > w.start {
        return Err(Error::param("shape", "read window starts before the state is given"));
    }
    let rho = evolve(model, state, t_start, w.start, opts)?;
    // y = [rho, sigma, acc_n, acc_nn, acc_c]
    let mut y = vec![C64::new(0.0, 0.0); 2 * n + 3];
    y[..n].copy_from_slice(rho.as_slice());
    let sqrt_n: Vec<f64> = (0..=d).map(|k| (k as f64).sqrt()).collect();
    let o = options_for(model, opts);
    let mut a = CMatrix::zeros(d, d);
    let mut b = CMatrix::zeros(d, d);
    let mut la = CMatrix::zeros(d, d);
    let mut lb = CMatrix::zeros(d, d);
    let mut src = vec![C64::new(0.0, 0.0); n];
    for (s0, s1) in segments(&model.breakpoints(), w.start, w.end) {
        integrate(
            &mut y,
            s0,
            s1,
            &o,
            |t, y, dy| {
                a.as_mut_slice().copy_from_slice(&y[..n]);
                b.as_mut_slice().copy_from_slice(&y[n..2 * n]);
                model.apply(t, &a, &mut la);
                model.apply(t, &b, &mut lb);
                let p = shape.weight(t);
                lower_sandwich(&y[..n], &mut src, d, &sqrt_n);
                dy[..n].copy_from_slice(la.as_slice());
                for k in 0..n {
                    dy[n + k] = lb.as_slice()[k] + src[k] * p;
                }
                let r = model.rates(t);
                let nr = number_of(&y[..n], d);
                dy[2 * n] = C64::new(p * nr, 0.0);
                dy[2 * n + 1] = C64::new(p * number_of(&y[n..2 * n], d), 0.0);
                // Tr[b rho b†] = <N>, Tr[b† rho b] = <N> + 1 up to truncation
                let tr_up: f64 = (0..d.saturating_sub(1)).map(|i| (i + 1) as f64 * y[i + d * i].re).sum();
                dy[2 * n + 2] = C64::new(r.emit_lower * nr + r.emit_raise * tr_up, 0.0);
            },
            |y| {
                hermitize_slice(&mut y[..n], d);
                hermitize_slice(&mut y[n..2 * n], d);
            },
        )?;
    }
    Ok(ReadMoments {
        weighted_number: y[2 * n].re,
        weighted_pairs: 2.0 * y[2 * n + 1].re,
        emitted: y[2 * n + 2].re,
    })
}

/// Pulse-averaged `g2_obs` of the read pulse.
///
/// For `Lag::Cycles` the two reads belong to independent cycles, so the
/// numerator factorises into the product of the marginals.
pub fn g2_observed(
    state_at_click: &DensityMatrix,
    t_click: f64,
    model: &ReducedModel,
    shape: &EffectivePulseShape,
    lag: Lag,
    opts: &SolverOptions,
) -> Result<f64> {
    let m = read_moments(state_at_click.matrix(), t_click, model, shape, opts)?;
    match lag {
        Lag::Zero | Lag::Cycles(0) => m.g2(),
        Lag::Cycles(_) => {
            if !(m.weighted_number > 0.0) {
                return Err(Error::ZeroDenominator("no intensity in the read window"));
            }
            Ok(1.0)
        }
    }
}

/// Options shared by the prediction routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub dim: usize,
    pub solver: SolverOptions,
    pub method: HeraldMethod,
    pub herald_window: Option<Window>,
    pub read_window: Option<Window>,
    pub filter_bandwidth: Option<f64>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            solver: SolverOptions::default(),
            method: HeraldMethod::Exact,
            herald_window: None,
            read_window: None,
            filter_bandwidth: None,
        }
    }
}

impl PredictOptions {
    fn windows(&self, schedule: &PulseSchedule) -> (Window, Window) {
        (
            self.herald_window.unwrap_or_else(|| schedule.herald_window()),
            self.read_window.unwrap_or_else(|| schedule.read_window()),
        )
    }

    fn shape(&self, schedule: &PulseSchedule, window: Window) -> Result<EffectivePulseShape> {
        match self.filter_bandwidth {
            None => EffectivePulseShape::identity(&schedule.read, window),
            Some(w) => EffectivePulseShape::filtered(&schedule.read, window, w),
        }
    }
}

/// Model prediction for one pump/read configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Heralded `g2_obs(0)`.
    pub g2: f64,
    /// Heralded occupation inferred from read counts, `n = C / (eta p_r)`.
    pub heralded_occupation: f64,
    /// Herald probability per cycle.
    pub click_prob: f64,
    /// Unconditional occupation inferred the same way.
    pub unconditional_occupation: f64,
    /// Mean occupation of the heralded state at the end of the herald window.
    pub heralded_mean_number: f64,
    /// Read-pulse swap probability `p_r`.
    pub p_r: f64,
}

/// End-to-end model prediction of the heralded `g2(0)`.
pub fn predict_g2(
    device: &DeviceParams,
    schedule: &PulseSchedule,
    heating: &HeatingModel,
    detect_eff: f64,
    opts: &PredictOptions,
) -> Result<Prediction> {
    schedule.validate()?;
    check_eff(detect_eff)?;
    let model = ReducedModel::for_schedule(*device, heating.clone(), schedule, opts.dim)?;
    let (hw, rw) = opts.windows(schedule);
    let shape = opts.shape(schedule, rw)?;
    let rho0 = make_state(StateKind::Thermal(heating.n_init), opts.dim)?;
    let t0 = schedule.pump.support().start;
    let (_, p_r) = crate::dynamics::scattering_probabilities(device, schedule.read.energy)?;
    if !(p_r > 0.0) {
        return Err(Error::param("read.energy", "read pulse must have positive energy"));
    }

    let (her, unc) = rayon::join(
        || -> Result<(HeraldResult, ReadMoments)> {
            let h = herald_with(&model, &rho0, t0, detect_eff, hw, opts.method, &opts.solver)?;
            let m = read_moments(h.state.matrix(), h.time, &model, &shape, &opts.solver)?;
            Ok((h, m))
        },
        || read_moments(rho0.matrix(), t0, &model, &shape, &opts.solver),
    );
    let (h, hm) = her?;
    let um = unc?;
    Ok(Prediction {
        g2: hm.g2()?,
        heralded_occupation: hm.emitted / p_r,
        click_prob: h.click_prob,
        unconditional_occupation: um.emitted / p_r,
        heralded_mean_number: h.state.mean_number(),
        p_r,
    })
}

/// Click-level expectation of the coincidence estimator for finite
/// detector efficiencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickPrediction {
    /// `P(E1 & E2) / (P(E1) P(E2))` given a herald.
    pub g2: f64,
    /// Herald probability per cycle.
    pub herald_prob: f64,
    /// `P(E1)` given a herald.
    pub p1: f64,
    /// `P(E2)` given a herald.
    pub p2: f64,
    /// `P(E1 & E2)` given a herald.
    pub p12: f64,
}

/// Probability of no detection in `window` at efficiency `eff`.
pub fn no_click_probability<G: CountingGenerator>(
    gen: &G,
    state: &CMatrix,
    t_start: f64,
    window: Window,
    eff: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&eff) {
        return Err(Error::param("eff", format!("must be in [0, 1], got {eff}")));
    }
    let mut m = evolve(gen, state, t_start, window.start, opts)?;
    evolve_thinned(gen, &mut m, window.start, window.end, eff, &options_for(gen, opts))?;
    Ok(m.trace().re)
}

/// Expected coincidence ratio of click detectors: the herald is at least one
/// click at efficiency `herald_eff`, and the read photons are split onto two
/// detectors with efficiencies `read_eff`.
///
/// Tends to [`predict_g2`] as the read efficiencies go to zero. Evaluated
/// through no-click probabilities, so it loses precision when
/// `read_eff` is below about `1e-3`.
pub fn predict_click_g2(
    device: &DeviceParams,
    schedule: &PulseSchedule,
    heating: &HeatingModel,
    herald_eff: f64,
    read_eff: [f64; 2],
    opts: &PredictOptions,
) -> Result<ClickPrediction> {
    schedule.validate()?;
    check_eff(herald_eff)?;
    if read_eff.iter().any(|e| !(*e > 0.0)) || read_eff[0] + read_eff[1] > 1.0 {
        return Err(Error::param("read_eff", "need positive efficiencies summing to at most 1"));
    }
    let model = ReducedModel::for_schedule(*device, heating.clone(), schedule, opts.dim)?;
    let (hw, rw) = opts.windows(schedule);
    let rho0 = make_state(StateKind::Thermal(heating.n_init), opts.dim)?;
    let h = herald_with(&model, &rho0, schedule.pump.support().start, herald_eff, hw, HeraldMethod::Exact, &opts.solver)?;
    let effs = [read_eff[0], read_eff[1], read_eff[0] + read_eff[1]];
    let p0: Vec<f64> = effs
        .par_iter()
        .map(|&e| no_click_probability(&model, h.state.matrix(), h.time, rw, e, &opts.solver))
        .collect::<Result<_>>()?;
    let p1 = 1.0 - p0[0];
    let p2 = 1.0 - p0[1];
    let p12 = 1.0 - p0[0] - p0[1] + p0[2];
    if !(p1 > 0.0 && p2 > 0.0) {
        return Err(Error::ZeroDenominator("no read clicks expected"));
    }
    Ok(ClickPrediction {
        g2: p12 / (p1 * p2),
        herald_prob: h.click_prob,
        p1,
        p2,
        p12,
    })
}

/// Emitted-photon statistics of one detection window at unit efficiency.
#[derive(Debug, Clone)]
pub struct WindowStatistics {
    pub window: Window,
    /// `P(k)` for `k = 0..K-1`; the last entry lumps `k >= K-1`.
    pub probabilities: Vec<f64>,
    /// Unnormalised post-window states for each count class, at `window.end`.
    pub states: Vec<CMatrix>,
    /// Time grid (cell centres) used for the timestamp densities.
    pub grid: Vec<f64>,
    /// Exclusive one-click density on the grid (unnormalised).
    pub single_density: Vec<f64>,
    /// Exclusive two-click density, `pair_density[i][j]` for `i <= j`.
    /// Diagonal entries are halved so that the sum times the squared cell
    /// width is the two-click probability.
    pub pair_density: Vec<Vec<f64>>,
    /// Intensity profile `Tr[J rho_T]`, used for three or more clicks.
    pub intensity: Vec<f64>,
}

/// Number of grid cells for timestamp densities.
pub const TIMESTAMP_GRID: usize = 32;

/// Photon-number hierarchy `sigma_k` (exactly `k` emissions) over `window`,
/// plus exclusive timestamp densities for one and two emissions.
pub fn window_statistics<G: CountingGenerator>(
    gen: &G,
    state: &CMatrix,
    t_start: f64,
    window: Window,
    classes: usize,
    opts: &SolverOptions,
) -> Result<WindowStatistics> {
    if classes < 3 {
        return Err(Error::param("classes", "need at least three count classes"));
    }
    let d = gen.dim();
    let n = d * d;
    let rho = evolve(gen, state, t_start, window.start, opts)?;
    let o = options_for(gen, opts);
    let cells = TIMESTAMP_GRID;
    let h = window.len() / cells as f64;
    let grid: Vec<f64> = (0..cells).map(|i| window.start + (i as f64 + 0.5) * h).collect();

    // forward hierarchy; sigma_0 and rho_T recorded at grid points
    let mut y = vec![C64::new(0.0, 0.0); classes * n];
    y[..n].copy_from_slice(rho.as_slice());
    let mut sigma0_at = Vec::with_capacity(cells);
    let mut total_at = Vec::with_capacity(cells);
    let mut x = CMatrix::zeros(d, d);
    let mut lx = CMatrix::zeros(d, d);
    let mut jx = CMatrix::zeros(d, d);
    let mut jprev = CMatrix::zeros(d, d);
    let mut t = window.start;
    let mut stops: Vec<f64> = grid.clone();
    stops.push(window.end);
    let breaks = gen.breakpoints();
    for &stop in &stops {
        for (s0, s1) in segments(&breaks, t, stop) {
            integrate(
                &mut y,
                s0,
                s1,
                &o,
                |tt, y, dy| {
                    let mut carry_in = false;
                    for k in 0..classes {
                        x.as_mut_slice().copy_from_slice(&y[k * n..(k + 1) * n]);
                        gen.apply(tt, &x, &mut lx);
                        gen.emission(tt, &x, &mut jx);
                        let last = k + 1 == classes;
                        for i in 0..n {
                            let mut v = lx.as_slice()[i];
                            if !last {
                                v -= jx.as_slice()[i];
                            }
                            if carry_in {
                                v += jprev.as_slice()[i];
                            }
                            dy[k * n + i] = v;
                        }
                        std::mem::swap(&mut jprev, &mut jx);
                        carry_in = !last;
                    }
                },
                |y| {
                    for k in 0..classes {
                        hermitize_slice(&mut y[k * n..(k + 1) * n], d);
                    }
                },
            )?;
        }
        t = stop;
        if stop < window.end {
            sigma0_at.push(CMatrix::from_column_slice(d, d, &y[..n]));
            let mut tot = CMatrix::zeros(d, d);
            for k in 0..classes {
                tot += CMatrix::from_column_slice(d, d, &y[k * n..(k + 1) * n]);
            }
            total_at.push(tot);
        }
    }
    let probabilities: Vec<f64> = (0..classes).map(|k| trace(&y[k * n..(k + 1) * n], d).max(0.0)).collect();
    let states: Vec<CMatrix> = (0..classes)
        .map(|k| CMatrix::from_column_slice(d, d, &y[k * n..(k + 1) * n]))
        .collect();

    // backward no-click effect operator E0(t) = S†(t_end, t) I
    let mut e = CMatrix::identity(d, d);
    let mut e0_at = vec![CMatrix::zeros(d, d); cells];
    let mut tb = window.end;
    for i in (0..cells).rev() {
        evolve_effect_back(gen, &mut e, tb, grid[i], &o)?;
        tb = grid[i];
        e0_at[i] = e.clone();
    }

    let emit = |tt: f64, m: &CMatrix| -> CMatrix {
        let mut out = CMatrix::zeros(d, d);
        gen.emission(tt, m, &mut out);
        out
    };
    let inner = |a: &CMatrix, b: &CMatrix| -> f64 { (a.adjoint() * b).trace().re };

    let intensity: Vec<f64> = (0..cells).map(|i| emit(grid[i], &total_at[i]).trace().re.max(0.0)).collect();
    let jumped: Vec<CMatrix> = (0..cells).map(|i| emit(grid[i], &sigma0_at[i])).collect();
    let single_density: Vec<f64> = (0..cells).map(|i| inner(&e0_at[i], &jumped[i]).max(0.0)).collect();

    let pair_density: Vec<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut row = vec![0.0; cells];
            // both clicks in one cell: second jump taken at the cell centre
            row[i] = 0.5 * inner(&e0_at[i], &emit(grid[i], &jumped[i])).max(0.0);
            let mut m = jumped[i].clone();
            let mut tt = grid[i];
            for j in i + 1..cells {
                evolve_no_click(gen, &mut m, tt, grid[j], &o)?;
                tt = grid[j];
                row[j] = inner(&e0_at[j], &emit(grid[j], &m)).max(0.0);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    Ok(WindowStatistics {
        window,
        probabilities,
        states,
        grid,
        single_density,
        pair_density,
        intensity,
    })
}

fn evolve_no_click<G: CountingGenerator>(gen: &G, m: &mut CMatrix, t0: f64, t1: f64, o: &SolverOptions) -> Result<()> {
    evolve_thinned(gen, m, t0, t1, 1.0, o)
}

/// Integrates `dX/dt = (L - eff J) X`.
fn evolve_thinned<G: CountingGenerator>(
    gen: &G,
    m: &mut CMatrix,
    t0: f64,
    t1: f64,
    eff: f64,
    o: &SolverOptions,
) -> Result<()> {
    let d = gen.dim();
    let mut x = CMatrix::zeros(d, d);
    let mut lx = CMatrix::zeros(d, d);
    let mut jx = CMatrix::zeros(d, d);
    for (s0, s1) in segments(&gen.breakpoints(), t0, t1) {
        integrate(
            m.as_mut_slice(),
            s0,
            s1,
            o,
            |t, y, dy| {
                x.as_mut_slice().copy_from_slice(y);
                gen.apply(t, &x, &mut lx);
                gen.emission(t, &x, &mut jx);
                for ((d, l), j) in dy.iter_mut().zip(lx.as_slice()).zip(jx.as_slice()) {
                    *d = l - j * eff;
                }
            },
            |y| hermitize_slice(y, d),
        )?;
    }
    Ok(())
}

/// Integrates `dE/dt = -(L - J)† E` backwards from `t_hi` to `t_lo`.
fn evolve_effect_back<G: CountingGenerator>(gen: &G, e: &mut CMatrix, t_hi: f64, t_lo: f64, o: &SolverOptions) -> Result<()> {
    let d = gen.dim();
    let mut x = CMatrix::zeros(d, d);
    let mut lx = CMatrix::zeros(d, d);
    let mut jx = CMatrix::zeros(d, d);
    let segs = segments(&gen.breakpoints(), t_lo, t_hi);
    for &(s0, s1) in segs.iter().rev() {
        integrate(
            e.as_mut_slice(),
            s1,
            s0,
            o,
            |t, y, dy| {
                x.as_mut_slice().copy_from_slice(y);
                gen.apply_adjoint(t, &x, &mut lx);
                gen.emission_adjoint(t, &x, &mut jx);
                for ((d, l), j) in dy.iter_mut().zip(lx.as_slice()).zip(jx.as_slice()) {
                    *d = j - l;
                }
            },
            |y| hermitize_slice(y, d),
        )?;
    }
    Ok(())
}

/// Read-pulse occupation a heating calibration aims for, as inferred from
/// read counts `n = C / (eta p_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccupancyTarget {
    /// Occupation seen by the read pulse in every cycle.
    Unconditional(f64),
    /// Occupation seen by the read pulse after a herald at `herald_eff`.
    Heralded { occupation: f64, herald_eff: f64 },
}

/// Cumulative absorption-heating scale for which the inferred read
/// occupation equals `target`, found by bisection on `scale * base`.
pub fn calibrate_heating(
    device: &DeviceParams,
    schedule: &PulseSchedule,
    base: &HeatingModel,
    target: OccupancyTarget,
    opts: &PredictOptions,
) -> Result<HeatingModel> {
    let (_, p_r) = crate::dynamics::scattering_probabilities(device, schedule.read.energy)?;
    if !(p_r > 0.0) {
        return Err(Error::param("read.energy", "read pulse must have positive energy"));
    }
    let (target, herald_eff) = match target {
        OccupancyTarget::Unconditional(n) => (n, None),
        OccupancyTarget::Heralded { occupation, herald_eff } => {
            check_eff(herald_eff)?;
            (occupation, Some(herald_eff))
        }
    };
    let (hw, rw) = opts.windows(schedule);
    let shape = opts.shape(schedule, rw)?;
    let occupancy = |scale: f64| -> Result<f64> {
        let h = base.scaled(scale);
        let model = ReducedModel::for_schedule(*device, h.clone(), schedule, opts.dim)?;
        let rho0 = make_state(StateKind::Thermal(h.n_init), opts.dim)?;
        let t0 = schedule.pump.support().start;
        let m = match herald_eff {
            None => read_moments(rho0.matrix(), t0, &model, &shape, &opts.solver)?,
            Some(eff) => {
                let her = herald_with(&model, &rho0, t0, eff, hw, opts.method, &opts.solver)?;
                read_moments(her.state.matrix(), her.time, &model, &shape, &opts.solver)?
            }
        };
        Ok(m.emitted / p_r)
    };
    let lo_val = occupancy(0.0)?;
    if target < lo_val {
        return Err(Error::Calibration(format!(
            "target occupation {target:.4} is below the heating-free value {lo_val:.4}"
        )));
    }
    let mut hi = 1.0;
    let mut hi_val = occupancy(hi)?;
    let mut guard = 0;
    while hi_val < target {
        hi *= 2.0;
        hi_val = occupancy(hi)?;
        guard += 1;
        if guard > 40 {
            return Err(Error::Calibration("heating influx cannot reach the target".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if occupancy(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    Ok(base.scaled(0.5 * (lo + hi)))
}
