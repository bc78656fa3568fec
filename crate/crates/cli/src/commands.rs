use std::path::{Path, PathBuf};

use phbt_core::calibration::solve_sideband;
use phbt_core::counting::{predict_click_g2, predict_g2};
use phbt_core::gaussianbound::{minimize_gaussian_g2, ThetaConstraint};
use phbt_core::inference::{confidence_interval, estimate_g2, HeraldPolicy};
use phbt_core::trajectories::{ClickRecord, CycleSampler, WindowTag};
use serde_json::{json, Value};

use crate::config::{load_json, CalibrationInput, Scenario, ScenarioConfig};
use crate::{Axis, CliError, Common, SweepMode, Theta};

const CSV_HEADER: &str = "axis_value,g2,sigma_minus,sigma_plus";

fn config_path(c: &Common) -> Result<&Path, CliError> {
    c.config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))
}

fn scenario(c: &Common) -> Result<Scenario, CliError> {
    let mut cfg: ScenarioConfig = load_json(config_path(c)?)?;
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = c.cycles {
        cfg.run.n_cycles = n;
    }
    if let Some(d) = c.dim {
        cfg.run.dim = d;
    }
    Scenario::from_config(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes the JSON result to `--out` when given and hands it back for stdout.
fn finish(c: &Common, v: Value) -> Result<Value, CliError> {
    if let Some(out) = &c.out {
        write_file(out, &format!("{v}\n"))?;
    }
    Ok(v)
}

fn herald_eff(s: &Scenario, policy: HeraldPolicy) -> Result<f64, CliError> {
    let eff = s.sim.port_efficiencies();
    match policy {
        HeraldPolicy::D1 => Ok(eff[0]),
        HeraldPolicy::D2 => Ok(eff[1]),
        HeraldPolicy::Any => Ok((eff[0] + eff[1]).min(1.0)),
        HeraldPolicy::Unconditional => Err(CliError::Config(
            "run.herald_policy: unconditional statistics have no heralded prediction".into(),
        )),
    }
}

pub fn predict(c: &Common, click: bool) -> Result<Value, CliError> {
    let s = scenario(c)?;
    let eta = herald_eff(&s, s.config.run.herald_policy)?;
    let p = predict_g2(&s.device, &s.schedule, &s.heating, eta, &s.opts)?;
    let mut v = json!({
        "g2": p.g2,
        "heralded_occupation": p.heralded_occupation,
        "unconditional_occupation": p.unconditional_occupation,
        "click_prob": p.click_prob,
        "herald_eff": eta,
    });
    if click {
        let k = predict_click_g2(&s.device, &s.schedule, &s.heating, eta, s.sim.port_efficiencies(), &s.opts)?;
        v["click"] = serde_json::to_value(k).map_err(|e| CliError::Numeric(e.to_string()))?;
    }
    v["params_echo"] = serde_json::to_value(&s.config).map_err(|e| CliError::Numeric(e.to_string()))?;
    finish(c, v)
}

fn check_cycles(s: &Scenario) -> Result<u64, CliError> {
    let (n, cap) = (s.config.run.n_cycles, s.config.run.max_cycles);
    if n == 0 {
        return Err(CliError::Config("run.n_cycles: must be positive".into()));
    }
    if n > cap {
        return Err(CliError::Config(format!(
            "run.n_cycles: {n} exceeds the cap of {cap}; run several seeds and combine the counts, or raise run.max_cycles"
        )));
    }
    Ok(n)
}

pub fn simulate(c: &Common) -> Result<Value, CliError> {
    let out = c
        .out
        .clone()
        .ok_or_else(|| CliError::Config("simulate needs --out <path.csv>".into()))?;
    let s = scenario(c)?;
    let n = check_cycles(&s)?;
    let sampler = CycleSampler::new(&s.sim, &s.opts.solver)?;
    let record = sampler.run(n, s.config.run.seed)?;
    record.save(&out)?;
    Ok(json!({
        "cycles": record.cycles,
        "seed": s.config.run.seed,
        "events": record.events.len(),
        "heralds": [record.count(1, WindowTag::Pump), record.count(2, WindowTag::Pump)],
        "read_clicks": [record.count(1, WindowTag::Read), record.count(2, WindowTag::Read)],
        "csv": out,
        "metadata": ClickRecord::sidecar_path(&out),
    }))
}

pub fn estimate(c: &Common, record: &Path, policy: Option<HeraldPolicy>, delta_n: Option<i64>) -> Result<Value, CliError> {
    let rec = ClickRecord::load(record)?;
    let from_config = match &c.config {
        Some(_) => Some(scenario(c)?),
        None => None,
    };
    let (hw, rw) = match (&from_config, &rec.config) {
        (Some(s), _) => (s.sim.herald_window, s.sim.read_window),
        (None, Some(cfg)) => (cfg.herald_window, cfg.read_window),
        (None, None) => {
            return Err(CliError::Config(
                "record carries no configuration; pass --config for the windows".into(),
            ))
        }
    };
    let run = from_config.as_ref().map(|s| &s.config.run);
    let policy = policy.or(run.map(|r| r.herald_policy)).unwrap_or_default();
    let delta_n = delta_n.or(run.map(|r| r.delta_n)).unwrap_or(0);
    let e = estimate_g2(&rec, hw, rw, policy, delta_n)?;
    let mut v = serde_json::to_value(e).map_err(|e| CliError::Numeric(e.to_string()))?;
    v["policy"] = serde_json::to_value(policy).map_err(|e| CliError::Numeric(e.to_string()))?;
    v["delta_n"] = json!(delta_n);
    finish(c, v)
}

pub fn calibrate(c: &Common) -> Result<Value, CliError> {
    let input = CalibrationInput::load(config_path(c)?)?;
    let device = input.device.build()?;
    let s = solve_sideband(input.C_r, input.C_b, input.eta_sum, input.E_probe_fJ * 1e-15, &device)?;
    finish(
        c,
        json!({
            "n_th": s.n_th,
            "p_b": s.p_b,
            "p_r": s.p_r,
            "g0_over_2pi_kHz": s.g0_over_2pi_khz(),
            "x": s.x,
            "small_p": s.small_p,
        }),
    )
}

pub fn gaussian_bound(c: &Common, n_init: Option<f64>, theta: Theta, window: Option<Vec<f64>>) -> Result<Value, CliError> {
    let n_init = match (n_init, &c.config) {
        (Some(n), _) => n,
        (None, Some(p)) => load_json::<ScenarioConfig>(p)?.heating.n_init,
        (None, None) => return Err(CliError::Config("give --n-init or --config".into())),
    };
    if !(n_init >= 0.0 && n_init.is_finite()) {
        return Err(CliError::Config(format!("n_init: must be non-negative, got {n_init}")));
    }
    let window = match window.as_deref() {
        None => None,
        Some(&[lo, hi]) if lo >= 0.0 && hi > lo => Some((lo, hi)),
        Some(w) => return Err(CliError::Config(format!("window: need 0 <= LO < HI, got {w:?}"))),
    };
    let constraint = match theta {
        Theta::Locked => ThetaConstraint::Locked,
        Theta::Free => ThetaConstraint::Free,
    };
    let b = minimize_gaussian_g2(n_init, constraint, window)?;
    finish(
        c,
        json!({
            "g2_min": b.g2_min,
            "n_init": n_init,
            "alpha_mag": b.params.alpha_mag,
            "alpha_phase": b.params.alpha_phase,
            "squeeze_mag": b.params.squeeze_mag,
            "squeeze_phase": b.params.squeeze_phase,
            "occupation": b.occupation,
            "constrained": b.constrained,
            "window": window.map(|(lo, hi)| [lo, hi]),
        }),
    )
}

struct Row {
    x: f64,
    g2: f64,
    minus: f64,
    plus: f64,
}

fn predicted_row(s: &Scenario, x: f64) -> Result<Row, CliError> {
    let eta = herald_eff(s, s.config.run.herald_policy)?;
    let k = predict_click_g2(&s.device, &s.schedule, &s.heating, eta, s.sim.port_efficiencies(), &s.opts)?;
    let n = s.config.run.n_heralds;
    let c12 = (k.p12 * n as f64).round() as u64;
    let (minus, plus) = confidence_interval(c12, n, k.p1, k.p2)?;
    Ok(Row { x, g2: k.g2, minus, plus })
}

fn simulated_row(s: &Scenario, sampler: &CycleSampler, rec: Option<&ClickRecord>, x: f64, delta_n: i64) -> Result<Row, CliError> {
    let owned;
    let rec = match rec {
        Some(r) => r,
        None => {
            owned = sampler.run(check_cycles(s)?, s.config.run.seed)?;
            &owned
        }
    };
    let e = estimate_g2(rec, s.sim.herald_window, s.sim.read_window, s.config.run.herald_policy, delta_n)?;
    Ok(Row {
        x,
        g2: e.g2,
        minus: e.sigma_minus,
        plus: e.sigma_plus,
    })
}

pub fn sweep(c: &Common, axis: Axis, values: &[f64], mode: SweepMode) -> Result<Value, CliError> {
    let s = scenario(c)?;
    let mut rows = Vec::with_capacity(values.len());
    match (axis, mode) {
        (Axis::NInit, SweepMode::Predict) => {
            for &x in values {
                rows.push(predicted_row(&s.with_n_init(x)?, x)?);
            }
        }
        (Axis::NInit, SweepMode::Simulate) => {
            for &x in values {
                let point = s.with_n_init(x)?;
                let sampler = CycleSampler::new(&point.sim, &point.opts.solver)?;
                rows.push(simulated_row(&point, &sampler, None, x, point.config.run.delta_n)?);
            }
        }
        (Axis::DeltaN, SweepMode::Predict) => {
            return Err(CliError::Config("a delta-n sweep needs --mode simulate".into()));
        }
        (Axis::DeltaN, SweepMode::Simulate) => {
            if let Some(x) = values.iter().find(|x| x.fract() != 0.0) {
                return Err(CliError::Config(format!("values: delta-n must be an integer, got {x}")));
            }
            let sampler = CycleSampler::new(&s.sim, &s.opts.solver)?;
            let rec = sampler.run(check_cycles(&s)?, s.config.run.seed)?;
            for &x in values {
                rows.push(simulated_row(&s, &sampler, Some(&rec), x, x as i64)?);
            }
        }
    }

    let mut csv = format!("{CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.x, r.g2, r.minus, r.plus));
    }
    let out: Option<PathBuf> = c.out.clone();
    if let Some(path) = &out {
        write_file(path, &csv)?;
    }
    let axis = match axis {
        Axis::NInit => "n_init",
        Axis::DeltaN => "delta_n",
    };
    let mode = match mode {
        SweepMode::Predict => "predict",
        SweepMode::Simulate => "simulate",
    };
    Ok(json!({
        "axis": axis,
        "mode": mode,
        "rows": rows
            .iter()
            .map(|r| json!({"axis_value": r.x, "g2": r.g2, "sigma_minus": r.minus, "sigma_plus": r.plus}))
            .collect::<Vec<_>>(),
        "csv": out,
    }))
}
