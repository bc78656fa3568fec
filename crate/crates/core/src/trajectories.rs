//! Seeded Monte Carlo generation of per-cycle detector click records.
//!
//! Photon numbers are drawn window by window from the counting hierarchy:
//! first the number of Stokes photons emitted in the herald window, then the
//! number of anti-Stokes photons in the read window conditioned on that
//! outcome. Each photon is routed through the beam splitter and detected
//! with the detector efficiency; dark counts and a non-paralyzable dead
//! time are applied last.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, weighted::WeightedAliasIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{window_statistics, WindowStatistics};
use crate::dynamics::{DeviceParams, HeatingModel, PulseSchedule, ReducedModel};
use crate::hilbert::{make_state, StateKind, DEFAULT_DIM};
use crate::ode::SolverOptions;
use crate::{Error, Result, Window};

/// Cycles per RNG stream.
pub const CHUNK_CYCLES: u64 = 1024;

/// Default number of photon-count classes per window (last one lumped).
pub const DEFAULT_CLASSES: usize = 6;

/// Single-photon detector.
///
/// `eta` is the total detection efficiency of this detector behind a 50:50
/// splitter, so a photon reaches and fires detector `i` with probability
/// `2 r_i eta_i` for splitter share `r_i`. The dead time is non-paralyzable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub eta: f64,
    /// False clicks per second.
    pub dark_rate: f64,
    /// Seconds.
    pub dead_time: f64,
}

impl DetectorModel {
    pub fn new(eta: f64, dark_rate: f64, dead_time: f64) -> Result<Self> {
        let d = Self {
            eta,
            dark_rate,
            dead_time,
        };
        d.validate()?;
        Ok(d)
    }

    /// Measured detectors, D1 then D2.
    pub fn paper() -> [Self; 2] {
        [
            Self {
                eta: 0.0116,
                dark_rate: 0.0,
                dead_time: 60e-9,
            },
            Self {
                eta: 0.0150,
                dark_rate: 0.0,
                dead_time: 120e-9,
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", format!("must be in [0, 1], got {}", self.eta)));
        }
        if !(self.dark_rate >= 0.0) {
            return Err(Error::param("dark_rate", "must be >= 0"));
        }
        if !(self.dead_time >= 0.0) {
            return Err(Error::param("dead_time", "must be >= 0"));
        }
        Ok(())
    }
}

/// Which detection window an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowTag {
    Pump,
    Read,
}

impl WindowTag {
    fn as_str(self) -> &'static str {
        match self {
            WindowTag::Pump => "pump",
            WindowTag::Read => "read",
        }
    }
}

/// One detector click. Times are integer picoseconds from the cycle start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClickEvent {
    pub cycle: u64,
    pub t_ps: u64,
    /// 1 or 2.
    pub detector: u8,
    pub window: WindowTag,
}

impl ClickEvent {
    pub fn time(&self) -> f64 {
        self.t_ps as f64 * 1e-12
    }
}

fn to_ps(t: f64) -> u64 {
    (t * 1e12).round().max(0.0) as u64
}

/// Everything needed to regenerate a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub device: DeviceParams,
    pub schedule: PulseSchedule,
    pub heating: HeatingModel,
    /// D1, D2.
    pub detectors: [DetectorModel; 2],
    /// Fraction of photons sent to D1.
    pub splitter_ratio: f64,
    pub dim: usize,
    pub classes: usize,
    pub herald_window: Window,
    pub read_window: Window,
}

impl SimulationConfig {
    /// Default windows, 50:50 splitter and the measured detectors.
    pub fn new(device: DeviceParams, schedule: PulseSchedule, heating: HeatingModel) -> Self {
        Self {
            device,
            schedule,
            heating,
            detectors: DetectorModel::paper(),
            splitter_ratio: 0.5,
            dim: DEFAULT_DIM,
            classes: DEFAULT_CLASSES,
            herald_window: schedule.herald_window(),
            read_window: schedule.read_window(),
        }
    }

    pub fn with_detectors(mut self, detectors: [DetectorModel; 2]) -> Self {
        self.detectors = detectors;
        self
    }

    /// Probability that an emitted photon fires D1 and D2.
    pub fn port_efficiencies(&self) -> [f64; 2] {
        let r = self.splitter_ratio;
        [2.0 * r * self.detectors[0].eta, 2.0 * (1.0 - r) * self.detectors[1].eta]
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.schedule.validate()?;
        self.heating.validate()?;
        for d in &self.detectors {
            d.validate()?;
        }
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(Error::param("splitter_ratio", format!("must be in (0, 1), got {}", self.splitter_ratio)));
        }
        let [e1, e2] = self.port_efficiencies();
        if e1 > 1.0 || e2 > 1.0 {
            return Err(Error::param("eta", "2 x splitter share x eta exceeds 1 for a detector"));
        }
        if self.classes < 3 {
            return Err(Error::param("classes", "need at least 3"));
        }
        for (name, w) in [("herald_window", self.herald_window), ("read_window", self.read_window)] {
            if w.is_empty() || w.start < 0.0 || w.end > self.schedule.period {
                return Err(Error::param(name, "must be a non-empty interval inside the period"));
            }
        }
        if self.read_window.start < self.herald_window.end {
            return Err(Error::param("read_window", "must start after the herald window ends"));
        }
        Ok(())
    }
}

/// Photon-number and timestamp samplers for one window.
#[derive(Debug, Clone)]
struct WindowTable {
    window: Window,
    cell: f64,
    counts: WeightedAliasIndex<f64>,
    single: Option<WeightedAliasIndex<f64>>,
    pair: Option<PairTable>,
    intensity: Option<WeightedAliasIndex<f64>>,
}

fn alias(w: &[f64]) -> Option<WeightedAliasIndex<f64>> {
    let w: Vec<f64> = w.iter().map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 }).collect();
    if w.iter().sum::<f64>() > 0.0 {
        WeightedAliasIndex::new(w).ok()
    } else {
        None
    }
}

/// Alias table over cell pairs `(i, j)`, `i <= j`.
type PairTable = (WeightedAliasIndex<f64>, Vec<(u16, u16)>);

impl WindowTable {
    fn new(ws: &WindowStatistics) -> Result<Self> {
        let counts = alias(&ws.probabilities).ok_or(Error::ZeroDenominator("window has no probability mass"))?;
        let mut pw = Vec::new();
        let mut idx = Vec::new();
        for (i, row) in ws.pair_density.iter().enumerate() {
            for (j, &v) in row.iter().enumerate().skip(i) {
                pw.push(v);
                idx.push((i as u16, j as u16));
            }
        }
        Ok(Self {
            window: ws.window,
            cell: ws.window.len() / ws.grid.len() as f64,
            counts,
            single: alias(&ws.single_density),
            pair: alias(&pw).map(|a| (a, idx)),
            intensity: alias(&ws.intensity),
        })
    }

    fn time_in(&self, cell: usize, rng: &mut impl Rng) -> f64 {
        self.window.start + (cell as f64 + rng.random::<f64>()) * self.cell
    }

    fn uniform(&self, rng: &mut impl Rng) -> f64 {
        self.window.start + rng.random::<f64>() * self.window.len()
    }

    fn draw_time(&self, a: &Option<WeightedAliasIndex<f64>>, rng: &mut impl Rng) -> f64 {
        match a {
            Some(a) => {
                let c = a.sample(rng);
                self.time_in(c, rng)
            }
            None => self.uniform(rng),
        }
    }

    /// Emission times for `k` photons.
    fn times(&self, k: usize, out: &mut Vec<f64>, rng: &mut impl Rng) {
        out.clear();
        match k {
            0 => {}
            1 => {
                let t = self.draw_time(&self.single, rng);
                out.push(t);
            }
            2 => match &self.pair {
                Some((a, idx)) => {
                    let (i, j) = idx[a.sample(rng)];
                    let t1 = self.time_in(i as usize, rng);
                    let t2 = self.time_in(j as usize, rng);
                    out.push(t1);
                    out.push(t2);
                }
                None => {
                    for _ in 0..2 {
                        let t = self.draw_time(&self.intensity, rng);
                        out.push(t);
                    }
                }
            },
            _ => {
                for _ in 0..k {
                    let t = self.draw_time(&self.intensity, rng);
                    out.push(t);
                }
            }
        }
    }
}

/// Precomputed window statistics for a configuration; sampling is cheap.
#[derive(Debug, Clone)]
pub struct CycleSampler {
    config: SimulationConfig,
    herald: WindowTable,
    /// Read-window tables conditioned on each herald-window photon class.
    read: Vec<Option<WindowTable>>,
    /// Probability of each herald-window photon class.
    pub herald_probabilities: Vec<f64>,
}

/// Conditional states below this probability are never sampled.
const NEGLIGIBLE_CLASS: f64 = 1e-300;

impl CycleSampler {
    pub fn new(config: &SimulationConfig, opts: &SolverOptions) -> Result<Self> {
        config.validate()?;
        let model = ReducedModel::for_schedule(config.device, config.heating.clone(), &config.schedule, config.dim)?;
        let rho0 = make_state(StateKind::Thermal(config.heating.n_init), config.dim)?;
        let t0 = config.schedule.pump.support().start.min(config.herald_window.start);
        let hw = window_statistics(&model, rho0.matrix(), t0, config.herald_window, config.classes, opts)?;
        let herald = WindowTable::new(&hw)?;
        let read = hw
            .states
            .par_iter()
            .zip(hw.probabilities.par_iter())
            .map(|(state, &p)| -> Result<Option<WindowTable>> {
                if !(p > NEGLIGIBLE_CLASS) {
                    return Ok(None);
                }
                let normed = state.map(|z| z / p);
                let rs = window_statistics(&model, &normed, hw.window.end, config.read_window, config.classes, opts)?;
                WindowTable::new(&rs).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            herald,
            read,
            herald_probabilities: hw.probabilities.clone(),
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    /// Same photon statistics with different detectors.
    pub fn with_detectors(&self, detectors: [DetectorModel; 2]) -> Result<Self> {
        let mut s = self.clone();
        s.config.detectors = detectors;
        s.config.validate()?;
        Ok(s)
    }

    fn read_table(&self, k: usize) -> &WindowTable {
        // a class with negligible weight is only reachable through round-off
        self.read[..=k]
            .iter()
            .rev()
            .flatten()
            .next()
            .or_else(|| self.read.iter().flatten().next())
            .expect("at least one herald class has weight")
    }

    fn route(&self, eff: [f64; 2], rng: &mut impl Rng) -> Option<u8> {
        let u = rng.random::<f64>();
        if u < eff[0] {
            Some(1)
        } else if u < eff[0] + eff[1] {
            Some(2)
        } else {
            None
        }
    }

    fn cycle(&self, cycle: u64, rng: &mut ChaCha8Rng, times: &mut Vec<f64>, out: &mut Vec<ClickEvent>) {
        let eff = self.config.port_efficiencies();
        let start = out.len();
        let kp = self.herald.counts.sample(rng);
        self.herald.times(kp, times, rng);
        for &t in times.iter() {
            if let Some(d) = self.route(eff, rng) {
                out.push(ClickEvent {
                    cycle,
                    t_ps: to_ps(t),
                    detector: d,
                    window: WindowTag::Pump,
                });
            }
        }
        let rt = self.read_table(kp);
        let kr = rt.counts.sample(rng);
        rt.times(kr, times, rng);
        for &t in times.iter() {
            if let Some(d) = self.route(eff, rng) {
                out.push(ClickEvent {
                    cycle,
                    t_ps: to_ps(t),
                    detector: d,
                    window: WindowTag::Read,
                });
            }
        }
        for (i, det) in self.config.detectors.iter().enumerate() {
            if det.dark_rate > 0.0 {
                for (w, tag) in [(self.config.herald_window, WindowTag::Pump), (self.config.read_window, WindowTag::Read)] {
                    let n = Poisson::new(det.dark_rate * w.len()).map(|p| p.sample(rng) as u64).unwrap_or(0);
                    for _ in 0..n {
                        let t = w.start + rng.random::<f64>() * w.len();
                        out.push(ClickEvent {
                            cycle,
                            t_ps: to_ps(t),
                            detector: i as u8 + 1,
                            window: tag,
                        });
                    }
                }
            }
        }
        let tail = &mut out[start..];
        if tail.len() > 1 {
            tail.sort_unstable();
        }
        let dead = [to_ps(self.config.detectors[0].dead_time), to_ps(self.config.detectors[1].dead_time)];
        dead_time_filter(out, start, dead);
    }

    /// Generates `n_cycles` cycles. Identical seeds give identical records
    /// regardless of the thread count.
    pub fn run(&self, n_cycles: u64, seed: u64) -> Result<ClickRecord> {
        if n_cycles == 0 {
            return Err(Error::param("n_cycles", "must be at least 1"));
        }
        let chunks = n_cycles.div_ceil(CHUNK_CYCLES);
        let parts: Vec<Vec<ClickEvent>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c);
                let mut out = Vec::new();
                let mut times = Vec::with_capacity(8);
                let lo = c * CHUNK_CYCLES;
                let hi = (lo + CHUNK_CYCLES).min(n_cycles);
                for cycle in lo..hi {
                    self.cycle(cycle, &mut rng, &mut times, &mut out);
                }
                out
            })
            .collect();
        Ok(ClickRecord {
            cycles: n_cycles,
            seed: Some(seed),
            config: Some(self.config.clone()),
            events: parts.concat(),
        })
    }
}

/// Drops events within the dead time of the previous accepted event on the
/// same detector, for the time-ordered events of one cycle in `out[start..]`.
fn dead_time_filter(out: &mut Vec<ClickEvent>, start: usize, dead_ps: [u64; 2]) {
    let mut last: [Option<u64>; 2] = [None, None];
    let mut w = start;
    for r in start..out.len() {
        let e = out[r];
        let d = (e.detector - 1) as usize;
        let keep = match last[d] {
            Some(prev) => e.t_ps - prev >= dead_ps[d],
            None => true,
        };
        if keep {
            last[d] = Some(e.t_ps);
            out[w] = e;
            w += 1;
        }
    }
    out.truncate(w);
}

/// Simulates `n_cycles` cycles of `config`.
pub fn simulate_cycles(config: &SimulationConfig, n_cycles: u64, seed: u64) -> Result<ClickRecord> {
    CycleSampler::new(config, &SolverOptions::default())?.run(n_cycles, seed)
}

/// Thins ideal (unit-efficiency) clicks by `detector.eta`, then applies the
/// non-paralyzable dead time per cycle and detector.
///
/// `events` must be sorted by cycle and time.
pub fn apply_detector(events: &[ClickEvent], detector: &DetectorModel, seed: u64) -> Result<Vec<ClickEvent>> {
    detector.validate()?;
    if events.windows(2).any(|w| (w[1].cycle, w[1].t_ps) < (w[0].cycle, w[0].t_ps)) {
        return Err(Error::param("events", "must be time-ordered"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ClickEvent> = events.iter().copied().filter(|_| rng.random::<f64>() < detector.eta).collect();
    let dead = to_ps(detector.dead_time);
    let mut kept = Vec::with_capacity(out.len());
    let mut i = 0;
    while i < out.len() {
        let c = out[i].cycle;
        let j = out[i..].iter().position(|e| e.cycle != c).map_or(out.len(), |p| i + p);
        let start = kept.len();
        kept.extend_from_slice(&out[i..j]);
        dead_time_filter(&mut kept, start, [dead, dead]);
        i = j;
    }
    std::mem::swap(&mut out, &mut kept);
    Ok(out)
}

/// Detector clicks over a run of cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    pub cycles: u64,
    pub seed: Option<u64>,
    pub config: Option<SimulationConfig>,
    /// Sorted by cycle, then time.
    pub events: Vec<ClickEvent>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    cycles: u64,
    seed: Option<u64>,
    config: Option<SimulationConfig>,
}

/// CSV header of a click record.
pub const CSV_HEADER: [&str; 4] = ["cycle", "detector", "t_ns", "window"];

fn format_ns(ps: u64) -> String {
    format!("{}.{:03}", ps / 1000, ps % 1000)
}

fn parse_ns(s: &str) -> Result<u64> {
    let bad = || Error::Format(format!("timestamp `{s}` is not of the form <ns>.<3 digits>"));
    let (whole, frac) = s.split_once('.').ok_or_else(bad)?;
    if frac.len() != 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let whole: u64 = whole.parse().map_err(|_| bad())?;
    let frac: u64 = frac.parse().map_err(|_| bad())?;
    Ok(whole * 1000 + frac)
}

impl ClickRecord {
    /// Record built from explicit events; sorts them.
    pub fn from_events(cycles: u64, mut events: Vec<ClickEvent>) -> Result<Self> {
        events.sort_unstable();
        let r = Self {
            cycles,
            seed: None,
            config: None,
            events,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if e.cycle >= self.cycles {
                return Err(Error::Format(format!("cycle {} outside 0..{}", e.cycle, self.cycles)));
            }
            if !(1..=2).contains(&e.detector) {
                return Err(Error::Format(format!("detector {} is not 1 or 2", e.detector)));
            }
            if let Some(c) = &self.config {
                if e.time() >= c.schedule.period {
                    return Err(Error::Format(format!("timestamp {} ns beyond the period", format_ns(e.t_ps))));
                }
            }
        }
        if self.events.windows(2).any(|w| (w[1].cycle, w[1].t_ps) < (w[0].cycle, w[0].t_ps)) {
            return Err(Error::Format("events are not ordered by cycle and time".into()));
        }
        Ok(())
    }

    pub fn count(&self, detector: u8, window: WindowTag) -> usize {
        self.events.iter().filter(|e| e.detector == detector && e.window == window).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for e in &self.events {
            wr.write_record([
                e.cycle.to_string(),
                e.detector.to_string(),
                format_ns(e.t_ps),
                e.window.as_str().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Parses the CSV part; `cycles` comes from the sidecar.
    pub fn read_csv<R: Read>(r: R, cycles: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Format(format!("expected header {}", CSV_HEADER.join(","))));
        }
        let mut events = Vec::new();
        for row in rd.records() {
            let row = row?;
            let field = |i: usize| row.get(i).ok_or_else(|| Error::Format("short row".into()));
            let cycle: u64 = field(0)?.parse().map_err(|_| Error::Format("bad cycle".into()))?;
            let detector: u8 = field(1)?.parse().map_err(|_| Error::Format("bad detector".into()))?;
            let t_ps = parse_ns(field(2)?)?;
            let window = match field(3)? {
                "pump" => WindowTag::Pump,
                "read" => WindowTag::Read,
                other => return Err(Error::Format(format!("unknown window `{other}`"))),
            };
            events.push(ClickEvent {
                cycle,
                t_ps,
                detector,
                window,
            });
        }
        let r = Self {
            cycles,
            seed: None,
            config: None,
            events,
        };
        r.validate()?;
        Ok(r)
    }

    /// `<csv>.json`, holding the cycle count, seed and configuration.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        let mut s = csv_path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        self.write_csv(f)?;
        let side = Sidecar {
            cycles: self.cycles,
            seed: self.seed,
            config: self.config.clone(),
        };
        let mut f = std::fs::File::create(Self::sidecar_path(csv_path))?;
        serde_json::to_writer_pretty(&mut f, &side)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(Self::sidecar_path(csv_path))?))?;
        let mut r = Self::read_csv(std::io::BufReader::new(std::fs::File::open(csv_path)?), side.cycles)?;
        r.seed = side.seed;
        r.config = side.config;
        r.validate()?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(cycle: u64, t_ns: f64, detector: u8, window: WindowTag) -> ClickEvent {
        ClickEvent {
            cycle,
            t_ps: to_ps(t_ns * 1e-9),
            detector,
            window,
        }
    }

    fn perfect(dead_ns: f64) -> DetectorModel {
        DetectorModel::new(1.0, 0.0, dead_ns * 1e-9).unwrap()
    }

    #[test]
    fn dead_time_examples() {
        let pair = |gap: f64| vec![ev(0, 100.0, 1, WindowTag::Read), ev(0, 100.0 + gap, 1, WindowTag::Read)];
        assert_eq!(apply_detector(&pair(40.0), &perfect(60.0), 1).unwrap().len(), 1);
        assert_eq!(apply_detector(&pair(80.0), &perfect(60.0), 1).unwrap().len(), 2);
        let herald_read = vec![ev(0, 96.0, 1, WindowTag::Pump), ev(0, 211.0, 1, WindowTag::Read)];
        assert_eq!(apply_detector(&herald_read, &perfect(70.0), 1).unwrap().len(), 2);
        assert_eq!(apply_detector(&herald_read, &perfect(130.0), 1).unwrap().len(), 1);
    }

    #[test]
    fn dead_time_is_non_paralyzable() {
        // the dropped middle click does not extend the blind interval
        let e = vec![
            ev(0, 0.0, 1, WindowTag::Read),
            ev(0, 50.0, 1, WindowTag::Read),
            ev(0, 65.0, 1, WindowTag::Read),
        ];
        let kept = apply_detector(&e, &perfect(60.0), 1).unwrap();
        assert_eq!(kept.iter().map(|e| e.t_ps).collect::<Vec<_>>(), vec![0, 65_000]);
    }

    #[test]
    fn dead_time_resets_each_cycle() {
        let e = vec![ev(0, 100.0, 1, WindowTag::Read), ev(1, 10.0, 1, WindowTag::Pump)];
        assert_eq!(apply_detector(&e, &perfect(1e6), 1).unwrap().len(), 2);
    }

    #[test]
    fn thinning_rate() {
        let e: Vec<_> = (0..20_000).map(|c| ev(c, 100.0, 1, WindowTag::Read)).collect();
        let d = DetectorModel::new(0.3, 0.0, 0.0).unwrap();
        let kept = apply_detector(&e, &d, 5).unwrap().len() as f64;
        let sd = (20_000.0 * 0.3 * 0.7f64).sqrt();
        assert!((kept - 6000.0).abs() < 4.0 * sd);
    }

    #[test]
    fn timestamp_text_round_trip() {
        for ps in [0, 1, 999, 1000, 123_456_789] {
            assert_eq!(parse_ns(&format_ns(ps)).unwrap(), ps);
        }
        assert!(parse_ns("12.5").is_err());
        assert!(parse_ns("12").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let r = ClickRecord::from_events(
            3,
            vec![ev(2, 211.125, 2, WindowTag::Read), ev(0, 96.5, 1, WindowTag::Pump)],
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cycle,detector,t_ns,window\n0,1,96.500,pump\n"));
        let back = ClickRecord::read_csv(&buf[..], 3).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(ClickRecord::from_events(1, vec![ev(1, 1.0, 1, WindowTag::Read)]).is_err());
        assert!(ClickRecord::from_events(2, vec![ev(0, 1.0, 3, WindowTag::Read)]).is_err());
        assert!(ClickRecord::read_csv(&b"a,b,c,d\n"[..], 1).is_err());
    }

    #[test]
    fn detector_validation() {
        assert!(DetectorModel::new(1.5, 0.0, 0.0).is_err());
        assert!(DetectorModel::new(0.5, -1.0, 0.0).is_err());
        assert!(DetectorModel::new(0.5, 0.0, -1e-9).is_err());
    }
}
