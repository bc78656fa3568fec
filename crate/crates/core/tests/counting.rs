use phbt_core::counting::*;
use phbt_core::dynamics::*;
use phbt_core::hilbert::{g2_zero, make_state, DensityMatrix, StateKind};
use phbt_core::ode::SolverOptions;
use phbt_core::{CMatrix, Window};

fn lossless() -> DeviceParams {
    let d = DeviceParams::paper();
    DeviceParams::new(d.g0, d.kappa, d.kappa_e, d.omega_m, d.omega_c, 0.0).unwrap()
}


/// Phonon distribution after heralding a pure-gain pulse.
///
/// Without damping or anti-Stokes terms the pulse is a birth process with
/// rate `Gamma (n + 1)`: starting at `n0`, the final number is negative
/// binomial, `P(n | n0) = C(n, n0) e^{-x (n0 + 1)} (1 - e^{-x})^{n - n0}`,
/// and every birth emits one photon. `weight(k)` is the herald probability
/// given `k` emitted photons.
fn birth_oracle(nbar: f64, x: f64, dim: usize, weight: impl Fn(usize) -> f64) -> (Vec<f64>, f64) {
    let q0 = nbar / (1.0 + nbar);
    let p = (-x).exp();
    let mut lf = vec![0.0; dim + 1];
    for i in 1..=dim {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    let ln_choose = |n: usize, k: usize| lf[n] - lf[k] - lf[n - k];
    let mut out = vec![0.0; dim];
    for n0 in 0..dim {
        let p0 = (1.0 - q0) * q0.powi(n0 as i32);
        if p0 < 1e-300 {
            break;
        }
        for (n, slot) in out.iter_mut().enumerate().skip(n0) {
            let ln = ln_choose(n, n0) + (n0 + 1) as f64 * p.ln() + (n - n0) as f64 * (1.0 - p).ln();
            *slot += p0 * ln.exp() * weight(n - n0);
        }
    }
    let total: f64 = out.iter().sum();
    (out.into_iter().map(|v| v / total).collect(), total)
}

fn g2_of_populations(p: &[f64]) -> f64 {
    let n: f64 = p.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let nn: f64 = p.iter().enumerate().map(|(k, v)| (k * k.saturating_sub(1)) as f64 * v).sum();
    nn / (n * n)
}

fn gain_setup(energy: f64, nbar: f64, dim: usize) -> (ReducedModel, DensityMatrix, Window, f64) {
    let device = lossless();
    let pump = Pulse::new(Sideband::Blue, energy, 32e-9, 96e-9).unwrap();
    let model = ReducedModel::new(device, HeatingModel::cold(nbar), vec![pump], dim)
        .unwrap()
        .with_counter_rotating(false);
    let rho = make_state(StateKind::Thermal(nbar), dim).unwrap();
    (model, rho, pump.support(), device.scattering_exponent(energy))
}

#[test]
fn exact_herald_matches_birth_process() {
    let opts = SolverOptions::with_tol(1e-10);
    for &(nbar, eta) in &[(0.0, 0.05), (0.0, 1.0), (0.2, 0.05), (1.0, 0.3)] {
        let (model, rho, win, x) = gain_setup(27e-15, nbar, 50);
        let h = herald_with(&model, &rho, win.start, eta, win, HeraldMethod::Exact, &opts).unwrap();
        let (pops, prob) = birth_oracle(nbar, x, 50, |k| 1.0 - (1.0 - eta).powi(k as i32));
        assert!((h.click_prob / prob - 1.0).abs() < 1e-6, "{nbar} {eta}: {} vs {prob}", h.click_prob);
        let got = g2_zero(&h.state).unwrap();
        let want = g2_of_populations(&pops);
        assert!((got - want).abs() < 1e-6 * want.max(1e-2), "{nbar} {eta}: {got} vs {want}");
    }
}

#[test]
fn one_jump_herald_matches_birth_process() {
    let opts = SolverOptions::with_tol(1e-10);
    for &nbar in &[0.0, 0.2, 1.0, 5.0] {
        let dim = if nbar > 2.0 { 140 } else { 50 };
        let (model, rho, win, x) = gain_setup(27e-15, nbar, dim);
        let h = herald_with(&model, &rho, win.start, 0.01, win, HeraldMethod::OneJump, &opts).unwrap();
        let (pops, _) = birth_oracle(nbar, x, dim, |k| k as f64);
        let got = g2_zero(&h.state).unwrap();
        let want = g2_of_populations(&pops);
        assert!((got - want).abs() < 1e-6 * want.max(1e-2), "{nbar}: {got} vs {want}");
    }
}

#[test]
fn hot_herald_tends_to_photon_added_limit() {
    // a single added phonon on a hot thermal state gives g2 = 3/2, not 2
    let (pops, _) = birth_oracle(200.0, 1e-4, 4000, |k| k as f64);
    assert!((g2_of_populations(&pops) - 1.5).abs() < 0.01);
}

#[test]
fn ideal_herald_tracks_pair_state() {
    let (model, rho, win, x) = gain_setup(27e-15, 0.0, 50);
    let p_b = x.exp_m1();
    let h = herald_with(&model, &rho, win.start, 0.01, win, HeraldMethod::Exact, &SolverOptions::default()).unwrap();
    let g2 = g2_zero(&h.state).unwrap();
    // |00> + sqrt(p)|11> + p|22>; a weak herald weights |nn> by n
    let (a1, a2) = (p_b, 2.0 * p_b * p_b);
    let pair = 2.0 * a2 * (a1 + a2) / (a1 + 2.0 * a2).powi(2);
    assert!((g2 / pair - 1.0).abs() < 0.1, "{g2} vs {pair}");
    assert!((g2 / (4.0 * p_b) - 1.0).abs() < 0.1);
}

#[test]
fn herald_click_probability_is_linear_in_efficiency() {
    let (model, rho, win, _) = gain_setup(27e-15, 0.2, 50);
    let opts = SolverOptions::default();
    let a = herald_with(&model, &rho, win.start, 0.002, win, HeraldMethod::Exact, &opts).unwrap();
    let b = herald_with(&model, &rho, win.start, 0.02, win, HeraldMethod::Exact, &opts).unwrap();
    assert!((b.click_prob / a.click_prob / 10.0 - 1.0).abs() < 0.01);
    let c = herald_with(&model, &rho, win.start, 0.002, win, HeraldMethod::OneJump, &opts).unwrap();
    let d = herald_with(&model, &rho, win.start, 0.02, win, HeraldMethod::OneJump, &opts).unwrap();
    let diff = (c.state.matrix() - d.state.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(diff < 1e-14);
}

fn integrate_intensity(state: &DensityMatrix, model: &ReducedModel, eta: f64, read: &Pulse) -> f64 {
    // Simpson over the read support
    let s = read.support();
    let k = 80;
    let h = s.len() / k as f64;
    let opts = SolverOptions::with_tol(1e-10);
    (0..=k)
        .map(|i| {
            let t = s.start + i as f64 * h;
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * intensity(state, s.start, model, eta, t, &opts).unwrap()
        })
        .sum::<f64>()
        * h
        / 3.0
}

#[test]
fn integrated_intensity_counts_phonons() {
    let device = DeviceParams::paper();
    let read = Pulse::new(Sideband::Red, 55.16e-15, 32e-9, 96e-9).unwrap();
    let (_, p_r) = scattering_probabilities(&device, read.energy).unwrap();
    let eta = 0.0266;
    let model = ReducedModel::new(device, HeatingModel::cold(0.0), vec![read], 30).unwrap();
    let thermal = make_state(StateKind::Thermal(0.104), 30).unwrap();
    let c = integrate_intensity(&thermal, &model, eta, &read);
    assert!((c / (eta * p_r * 0.104) - 1.0).abs() < 0.02, "{c}");
    let one = make_state(StateKind::Fock(1), 30).unwrap();
    let c = integrate_intensity(&one, &model, eta, &read);
    assert!((c / (eta * p_r) - 1.0).abs() < 0.02, "{c}");
}

#[test]
fn same_time_correlations() {
    let device = DeviceParams::paper();
    let read = Pulse::new(Sideband::Red, 924e-15, 32e-9, 96e-9).unwrap();
    let model = ReducedModel::new(device, HeatingModel::cold(0.0), vec![read], 30).unwrap();
    let opts = SolverOptions::default();
    let t0 = read.support().start;
    let t = read.center;
    let one = make_state(StateKind::Fock(1), 30).unwrap();
    assert!(correlation(&one, t, &model, 0.1, t, t, &opts).unwrap() < 1e-12);
    assert!(correlation(&one, t0, &model, 0.1, t, t, &opts).unwrap() > 0.0);

    let th = make_state(StateKind::Thermal(0.7), 30).unwrap();
    // start at the pulse centre so no evolution precedes the correlation
    let i = intensity(&th, t, &model, 0.1, t, &opts).unwrap();
    let c = correlation(&th, t, &model, 0.1, t, t, &opts).unwrap();
    assert!((c / (i * i) - 2.0).abs() < 1e-6);
}

#[test]
fn damped_thermal_autocorrelation() {
    let device = DeviceParams::paper();
    let nbar = 0.6;
    let model = ReducedModel::new(device, HeatingModel::new(nbar, nbar, vec![]).unwrap(), vec![], 30).unwrap();
    let th = make_state(StateKind::Thermal(nbar), 30).unwrap();
    let opts = SolverOptions::with_tol(1e-10);
    for tau in [0.0, 2e-6, 11.5e-6, 30e-6] {
        let c = number_correlation(&th, 0.0, &model, 0.0, tau, &opts).unwrap() / (nbar * nbar);
        let want = 1.0 + (-device.gamma * tau).exp();
        assert!((c - want).abs() < 1e-4, "{tau}: {c} vs {want}");
    }
}

#[test]
fn observed_g2_of_stationary_states() {
    let device = DeviceParams::paper();
    let nbar = 0.3;
    let read = Pulse::new(Sideband::Red, 0.01e-15, 4e-9, 50e-9).unwrap();
    let model = ReducedModel::new(device, HeatingModel::new(nbar, nbar, vec![]).unwrap(), vec![read], 30).unwrap();
    let shape = EffectivePulseShape::identity(&read, Window::new(read.center - 8e-9, read.center + 8e-9)).unwrap();
    let opts = SolverOptions::default();
    let th = make_state(StateKind::Thermal(nbar), 30).unwrap();
    let g = g2_observed(&th, 0.0, &model, &shape, Lag::Zero, &opts).unwrap();
    assert!((g - 2.0).abs() < 1e-3, "{g}");
    assert_eq!(g2_observed(&th, 0.0, &model, &shape, Lag::Cycles(1), &opts).unwrap(), 1.0);

    let cold = ReducedModel::new(device, HeatingModel::cold(0.0), vec![read], 30)
        .unwrap()
        .with_counter_rotating(false);
    let one = make_state(StateKind::Fock(1), 30).unwrap();
    assert!(g2_observed(&one, 0.0, &cold, &shape, Lag::Zero, &opts).unwrap().abs() < 1e-9);
    let vac = make_state(StateKind::Vacuum, 30).unwrap();
    assert!(g2_observed(&vac, 0.0, &cold, &shape, Lag::Zero, &opts).is_err());
}

fn schedule(delay: f64) -> PulseSchedule {
    PulseSchedule::new(27e-15, 924e-15, 32e-9, delay, 50e-6).unwrap()
}

fn heated(n_init: f64, s: &PulseSchedule, read_rate: f64) -> HeatingModel {
    let onsets = [(s.pump.center - s.pump.fwhm, 0.23e6), (s.read.center - s.read.fwhm, read_rate)];
    HeatingModel::with_constant_influx(n_init, 0.0, &onsets, s.horizon()).unwrap()
}

#[test]
fn prediction_ignores_efficiency() {
    let device = DeviceParams::paper();
    let s = schedule(115e-9);
    let h = heated(0.2, &s, 3e6);
    let exact = PredictOptions::default();
    let a = predict_g2(&device, &s, &h, 1e-5, &exact).unwrap();
    let b = predict_g2(&device, &s, &h, 1e-4, &exact).unwrap();
    assert!((a.g2 - b.g2).abs() < 1e-6, "{} {}", a.g2, b.g2);
    let one = PredictOptions { method: HeraldMethod::OneJump, ..exact };
    let c = predict_g2(&device, &s, &h, 1e-3, &one).unwrap();
    let d = predict_g2(&device, &s, &h, 1e-2, &one).unwrap();
    assert!((c.g2 - d.g2).abs() < 1e-12);
}

#[test]
fn prediction_is_monotone_in_temperature() {
    let device = DeviceParams::paper();
    let s = schedule(115e-9);
    let opts = PredictOptions { dim: 110, ..Default::default() };
    let mut last = -1.0;
    for n in [0.0, 0.2, 0.5, 1.0, 2.0, 5.0] {
        let p = predict_g2(&device, &s, &HeatingModel::cold(n), 0.0266, &opts).unwrap();
        assert!(p.g2 >= last, "{n}: {} < {last}", p.g2);
        assert!(p.g2 >= 0.0 && p.g2 <= 2.0 + 1e-6);
        last = p.g2;
    }
    assert!(last > 1.3);
}

#[test]
fn longer_delay_degrades_g2() {
    let device = DeviceParams::paper();
    let opts = PredictOptions::default();
    let short = schedule(115e-9);
    let long = schedule(350e-9);
    let a = predict_g2(&device, &short, &heated(0.2, &short, 3e6), 0.0266, &opts).unwrap();
    let b = predict_g2(&device, &long, &heated(0.2, &long, 3e6), 0.0266, &opts).unwrap();
    assert!(b.g2 >= a.g2, "{} vs {}", b.g2, a.g2);
}

#[test]
fn truncation_converges() {
    let device = DeviceParams::paper();
    let s = schedule(115e-9);
    let h = heated(0.2, &s, 3e6);
    let a = predict_g2(&device, &s, &h, 0.0266, &PredictOptions { dim: 50, ..Default::default() }).unwrap();
    let b = predict_g2(&device, &s, &h, 0.0266, &PredictOptions { dim: 80, ..Default::default() }).unwrap();
    assert!((a.g2 - b.g2).abs() < 1e-4);
}

#[test]
fn heating_calibration_hits_target() {
    let device = DeviceParams::paper();
    let s = schedule(115e-9);
    let base = heated(0.2, &s, 1e6);
    let opts = PredictOptions::default();
    let h = calibrate_heating(&device, &s, &base, OccupancyTarget::Unconditional(0.3), &opts).unwrap();
    let p = predict_g2(&device, &s, &h, 0.0266, &opts).unwrap();
    assert!((p.unconditional_occupation - 0.3).abs() < 1e-5);
    assert!(calibrate_heating(&device, &s, &base, OccupancyTarget::Unconditional(0.01), &opts).is_err());
    let target = OccupancyTarget::Heralded { occupation: 1.6, herald_eff: 0.0116 };
    let h = calibrate_heating(&device, &s, &base, target, &opts).unwrap();
    let p = predict_g2(&device, &s, &h, 0.0116, &opts).unwrap();
    assert!((p.heralded_occupation - 1.6).abs() < 1e-5);
}

#[test]
fn window_hierarchy_is_geometric_for_thermal_swap() {
    let device = lossless();
    let read = Pulse::new(Sideband::Red, 924e-15, 32e-9, 96e-9).unwrap();
    let (_, p_r) = scattering_probabilities(&device, read.energy).unwrap();
    let model = ReducedModel::new(device, HeatingModel::cold(0.0), vec![read], 40)
        .unwrap()
        .with_counter_rotating(false);
    let nbar = 0.5;
    let th = make_state(StateKind::Thermal(nbar), 40).unwrap();
    let w = read.support();
    let ws = window_statistics(&model, th.matrix(), w.start, w, 4, &SolverOptions::with_tol(1e-10)).unwrap();
    // each phonon is swapped out independently, so thermal in gives thermal counts
    let m = nbar * p_r;
    let geo = |k: i32| (m / (1.0 + m)).powi(k) / (1.0 + m);
    for k in 0..3 {
        assert!((ws.probabilities[k] - geo(k as i32)).abs() < 1e-7, "{k}");
    }
    assert!((ws.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-8);

    let h = w.len() / TIMESTAMP_GRID as f64;
    let single: f64 = ws.single_density.iter().sum::<f64>() * h;
    assert!((single / ws.probabilities[1] - 1.0).abs() < 0.01, "{single}");
    let pairs: f64 = ws.pair_density.iter().flatten().sum::<f64>() * h * h;
    assert!((pairs / ws.probabilities[2] - 1.0).abs() < 0.02, "{pairs}");
    let total: f64 = ws.intensity.iter().sum::<f64>() * h;
    assert!((total / m - 1.0).abs() < 0.01);
}

#[test]
fn window_statistics_of_single_phonon() {
    let device = lossless();
    let read = Pulse::new(Sideband::Red, 924e-15, 32e-9, 96e-9).unwrap();
    let (_, p_r) = scattering_probabilities(&device, read.energy).unwrap();
    let model = ReducedModel::new(device, HeatingModel::cold(0.0), vec![read], 10)
        .unwrap()
        .with_counter_rotating(false);
    let one = make_state(StateKind::Fock(1), 10).unwrap();
    let w = read.support();
    let ws = window_statistics(&model, one.matrix(), w.start, w, 3, &SolverOptions::default()).unwrap();
    assert!((ws.probabilities[1] - p_r).abs() < 1e-7);
    assert!(ws.probabilities[2].abs() < 1e-12);
    let zero_state: &CMatrix = &ws.states[0];
    assert!((zero_state[(1, 1)].re - (1.0 - p_r)).abs() < 1e-7);
}

#[test]
fn full_model_herald_agrees_with_reduced() {
    let device = DeviceParams::paper();
    let pump = Pulse::new(Sideband::Blue, 27e-15, 32e-9, 96e-9).unwrap();
    let heating = HeatingModel::cold(0.2);
    let (cd, md) = (4, 30);
    let full = TwoModeModel::new(device, heating.clone(), vec![pump], cd, md).unwrap();
    let reduced = ReducedModel::new(device, heating, vec![pump], md).unwrap();
    let mech = make_state(StateKind::Thermal(0.2), md).unwrap();
    let cav = make_state(StateKind::Vacuum, cd).unwrap();
    let joint = DensityMatrix::from_matrix(full.product_state(cav.matrix(), mech.matrix()).unwrap()).unwrap();
    let win = Window::new(pump.support().start, pump.support().end + 20e-9);
    let opts = SolverOptions::default();
    let hf = herald_with(&full, &joint, win.start, 0.01, win, HeraldMethod::Exact, &opts).unwrap();
    let hr = herald_with(&reduced, &mech, win.start, 0.01, win, HeraldMethod::Exact, &opts).unwrap();
    let mf = DensityMatrix::from_matrix(partial_trace_cavity(hf.state.matrix(), cd, md).unwrap()).unwrap();
    let gf = g2_zero(&mf).unwrap();
    let gr = g2_zero(&hr.state).unwrap();
    assert!((gf / gr - 1.0).abs() < 0.02, "{gf} vs {gr}");
    assert!((mf.mean_number() / hr.state.mean_number() - 1.0).abs() < 0.02);
    assert!((hf.click_prob / hr.click_prob - 1.0).abs() < 0.02);
}
