//! CUSUM detection on top of the `v_t` increments.
//!
//! `V_t = max(V_{t−1}, 0) + v_t/(2σ_n²)` with `V_0 = 0`; the alarm is
//! raised at the first `t` with `V_t ≥ ζ`. Increments come from an
//! [`Increment`] source: the distributed solver, the centralized exact
//! projection, or the exact-matrix baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::async_rt::{run_solver, PlaneSource, RunConfig, SolveResult};
use crate::cutplane::{PlaneConfig, Polytope};
use crate::error::{check_dim, Error, Result};
use crate::model::{simulate_stream, ObservationStream, StateGenerator, SystemModel};
use crate::oracle::{oracle_vt, ExactHBaseline, OracleConfig};
use crate::saddle::{SaddleProblem, ScheduleConfig};
use crate::uncertainty::InnerSolverConfig;

/// One CUSUM update.
pub fn cusum_step(prev: f64, v: f64, sigma_n: f64) -> f64 {
    prev.max(0.0) + v / (2.0 * sigma_n * sigma_n)
}

/// Running CUSUM statistic with its threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorState {
    pub statistic: f64,
    pub zeta: f64,
    pub t: usize,
    /// First `t` with `V_t ≥ ζ`; never cleared once set.
    pub stopped_at: Option<usize>,
}

impl DetectorState {
    pub fn new(zeta: f64) -> Self {
        Self {
            statistic: 0.0,
            zeta,
            t: 0,
            stopped_at: None,
        }
    }

    /// Feeds `v_t`; returns whether the detector has alarmed.
    pub fn update(&mut self, v: f64, sigma_n: f64) -> bool {
        self.statistic = cusum_step(self.statistic, v, sigma_n);
        self.t += 1;
        if self.stopped_at.is_none() && self.statistic >= self.zeta {
            self.stopped_at = Some(self.t);
        }
        self.stopped_at.is_some()
    }
}

/// First 1-based `t` at which the CUSUM of `increments` reaches `zeta`.
pub fn first_passage<I: IntoIterator<Item = f64>>(increments: I, zeta: f64, sigma_n: f64) -> Option<usize> {
    let mut state = DetectorState::new(zeta);
    for v in increments {
        if state.update(v, sigma_n) {
            break;
        }
    }
    state.stopped_at
}

/// Everything the distributed solver needs per observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub run: RunConfig,
    pub schedule: ScheduleConfig,
    pub planes: PlaneConfig,
    pub inner: InnerSolverConfig,
    /// Start each solve from the previous solve's plane set.
    pub warm_start: bool,
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.planes.validate()?;
        self.inner.validate()
    }
}

/// Solves for `v_t` from the zero state over `initial`.
pub fn solve_vt_from(
    model: &SystemModel,
    y: &[f64],
    settings: &SolverSettings,
    initial: Polytope,
) -> Result<SolveResult> {
    check_dim("observation", model.m(), y.len())?;
    let prob = SaddleProblem::new(model, y)?;
    let source = PlaneSource {
        model,
        planes: &settings.planes,
        inner: &settings.inner,
    };
    run_solver(&prob, Some(source), initial, &settings.run, &settings.schedule)
}

/// `v_t` from the distributed solver. `x = 0` is always feasible, so the
/// value is clamped at zero.
pub fn solve_vt(model: &SystemModel, y: &[f64], settings: &SolverSettings) -> Result<f64> {
    let res = solve_vt_from(model, y, settings, Polytope::new(settings.planes.capacity))?;
    Ok(res.value.max(0.0))
}

/// A source of CUSUM increments.
pub trait Increment {
    fn increment(&mut self, y: &[f64]) -> Result<f64>;

    /// Forgets state carried between observations of one stream.
    fn reset(&mut self) {}
}

/// `v_t` from the distributed cutting-plane solver.
#[derive(Clone, Debug)]
pub struct SolverIncrement<'a> {
    pub model: &'a SystemModel,
    pub settings: SolverSettings,
    carried: Option<Polytope>,
}

impl<'a> SolverIncrement<'a> {
    pub fn new(model: &'a SystemModel, settings: SolverSettings) -> Self {
        Self {
            model,
            settings,
            carried: None,
        }
    }
}

impl Increment for SolverIncrement<'_> {
    fn increment(&mut self, y: &[f64]) -> Result<f64> {
        let initial = match (&self.carried, self.settings.warm_start) {
            (Some(p), true) => p.clone(),
            _ => Polytope::new(self.settings.planes.capacity),
        };
        let res = solve_vt_from(self.model, y, &self.settings, initial)?;
        if self.settings.warm_start {
            self.carried = Some(res.polytope);
        }
        Ok(res.value.max(0.0))
    }

    fn reset(&mut self) {
        self.carried = None;
    }
}

/// `v_t` from the centralized projection onto the exact robust set.
#[derive(Clone, Debug)]
pub struct ProjectionIncrement<'a> {
    pub model: &'a SystemModel,
    pub config: OracleConfig,
}

impl Increment for ProjectionIncrement<'_> {
    fn increment(&mut self, y: &[f64]) -> Result<f64> {
        Ok(oracle_vt(self.model, y, &self.config)?.0.max(0.0))
    }
}

impl Increment for ExactHBaseline {
    fn increment(&mut self, y: &[f64]) -> Result<f64> {
        Ok(self.value(y).max(0.0))
    }
}

/// Runs the CUSUM over `stream` and returns the alarm time, computing
/// increments only up to the alarm.
pub fn stopping_time(
    source: &mut dyn Increment,
    stream: &ObservationStream,
    zeta: f64,
    sigma_n: f64,
) -> Result<Option<usize>> {
    source.reset();
    let mut state = DetectorState::new(zeta);
    for y in &stream.observations {
        if state.update(source.increment(y)?, sigma_n) {
            break;
        }
    }
    Ok(state.stopped_at)
}

/// Stream generation shared by calibration and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    /// Length of every simulated stream. Change-free runs without an
    /// alarm count as stopping at `horizon`.
    pub horizon: usize,
    /// First post-change time (1-based).
    pub change_time: usize,
    pub seed_base: u64,
    pub state: StateGenerator,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            horizon: 500,
            change_time: 10,
            seed_base: 0,
            state: StateGenerator::default(),
        }
    }
}

/// Change-free increments of `runs` streams with seeds `seed_base + r`.
pub fn null_increments(
    model: &SystemModel,
    source: &mut dyn Increment,
    mc: &MonteCarloConfig,
) -> Result<Vec<Vec<f64>>> {
    (0..mc.runs)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed_base + r as u64);
            let stream = simulate_stream(model, mc.state, mc.horizon + 1, mc.horizon, &mut rng)?;
            source.reset();
            stream.observations.iter().map(|y| source.increment(y)).collect()
        })
        .collect()
}

/// Mean stopping time over precomputed change-free increment sequences,
/// counting a run without alarm as stopping at its length.
pub fn empirical_fap(null: &[Vec<f64>], zeta: f64, sigma_n: f64) -> f64 {
    let total: usize = null
        .iter()
        .map(|v| first_passage(v.iter().copied(), zeta, sigma_n).unwrap_or(v.len()))
        .sum();
    total as f64 / null.len() as f64
}

/// Outcome of [`calibrate_threshold`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub zeta: f64,
    pub fap: f64,
}

/// Relative FAP tolerance accepted by calibration.
pub const CALIBRATION_TOLERANCE: f64 = 0.05;

/// Bisection on `ζ` so that [`empirical_fap`] is within 5% of `target`.
pub fn calibrate_threshold(null: &[Vec<f64>], target: f64, sigma_n: f64) -> Result<Calibration> {
    if !(target >= 1.0) || null.is_empty() {
        return Err(Error::Calibration(format!(
            "need target >= 1 and at least one run (target {target}, {} runs)",
            null.len()
        )));
    }
    let ok = |fap: f64| (fap - target).abs() <= CALIBRATION_TOLERANCE * target;
    let fap = |zeta| empirical_fap(null, zeta, sigma_n);
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut doublings = 0;
    while fap(hi) < target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 40 {
            return Err(Error::Calibration(format!(
                "FAP stays below {target} for zeta up to {hi:e}; streams may be too short"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = fap(mid);
        if ok(f) {
            return Ok(Calibration { zeta: mid, fap: f });
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let f = fap(hi);
    if ok(f) {
        Ok(Calibration { zeta: hi, fap: f })
    } else {
        Err(Error::Calibration(format!(
            "no threshold reaches FAP {target}; closest {f} at zeta {hi}"
        )))
    }
}

/// Delays of attacked runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `τ − t_a` for each run that alarmed at or after `t_a`; `None`
    /// when the run never alarmed. Runs that alarmed before `t_a` are
    /// recorded as delay 0.
    pub delays: Vec<Option<usize>>,
    /// Runs that alarmed before the change.
    pub early_alarms: usize,
}

impl Evaluation {
    /// Mean delay over alarmed runs; `NaN` if none alarmed.
    pub fn add(&self) -> f64 {
        let (sum, n) = self
            .delays
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(s, n), d| (s + d, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum as f64 / n as f64
        }
    }

    /// Fraction of runs detected with delay at most `bound`.
    pub fn success_rate(&self, bound: usize) -> f64 {
        let hits = self.delays.iter().filter(|d| d.is_some_and(|d| d <= bound)).count();
        hits as f64 / self.delays.len() as f64
    }
}

/// Runs `mc.runs` attacked streams (seeds `seed_base + r`) and records
/// detection delays.
pub fn evaluate(
    model: &SystemModel,
    source: &mut dyn Increment,
    zeta: f64,
    mc: &MonteCarloConfig,
) -> Result<Evaluation> {
    let mut delays = Vec::with_capacity(mc.runs);
    let mut early_alarms = 0;
    for r in 0..mc.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed_base + r as u64);
        let stream = simulate_stream(model, mc.state, mc.change_time, mc.horizon, &mut rng)?;
        let tau = stopping_time(source, &stream, zeta, model.sigma_n())?;
        delays.push(tau.map(|tau| {
            if tau < mc.change_time {
                early_alarms += 1;
            }
            tau.saturating_sub(mc.change_time)
        }));
    }
    Ok(Evaluation { delays, early_alarms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn cusum_examples() {
        assert_eq!(cusum_step(0.0, 0.0, 1.0), 0.0);
        assert_eq!(cusum_step(-2.0, 4.0, 1.0), 2.0);
        assert_eq!(cusum_step(3.0, -1.0, 0.5), 1.0);
    }

    #[test]
    fn stopping_examples() {
        assert_eq!(first_passage([0.3, 0.1], 0.0, 1.0), Some(1));
        assert_eq!(first_passage(vec![5.0; 100], f64::INFINITY, 1.0), None);
        // V_t = t·c/(2σ²) = 0.75 t reaches 6 at t = 8
        assert_eq!(first_passage(vec![1.5; 100], 6.0, 1.0), Some(8));
        assert_eq!(first_passage(vec![1.5; 100], 6.1, 1.0), Some(9));
    }

    #[test]
    fn alarm_is_sticky() {
        let mut s = DetectorState::new(1.0);
        assert!(s.update(4.0, 1.0));
        assert!(s.update(0.0, 1.0));
        assert_eq!(s.stopped_at, Some(1));
    }

    fn tiny_model() -> SystemModel {
        let h = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        SystemModel::exact(h, 1.0, 1.0, 0.05).unwrap()
    }

    #[test]
    fn vt_of_zero_observation_is_zero() {
        let model = tiny_model();
        assert_eq!(solve_vt(&model, &[0.0; 3], &SolverSettings::default()).unwrap(), 0.0);
    }

    #[test]
    fn vt_unconstrained_is_norm_squared() {
        let h = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let model = SystemModel::exact(h, 1.0, 100.0, 1e6).unwrap();
        let y = [0.5, -1.0, 0.25];
        let v = solve_vt(&model, &y, &SolverSettings::default()).unwrap();
        approx::assert_relative_eq!(v, 1.3125, max_relative = 1e-3);
    }

    #[test]
    fn calibration_is_monotone_and_accurate() {
        let null: Vec<Vec<f64>> = (0..20)
            .map(|r| (0..4000).map(|t| 1.0 + ((r * 7 + t * 13) % 5) as f64 * 0.1).collect())
            .collect();
        let a = calibrate_threshold(&null, 100.0, 1.0).unwrap();
        let b = calibrate_threshold(&null, 400.0, 1.0).unwrap();
        assert!(a.zeta < b.zeta);
        assert!((a.fap - 100.0).abs() <= 5.0 && (b.fap - 400.0).abs() <= 20.0);
        assert!(matches!(calibrate_threshold(&[vec![0.0; 10]], 100.0, 1.0), Err(Error::Calibration(_))));
    }

    #[test]
    fn success_rate_is_a_cdf() {
        let e = Evaluation {
            delays: vec![Some(3), None, Some(0), Some(10)],
            early_alarms: 0,
        };
        assert_eq!(e.add(), 13.0 / 3.0);
        let rates: Vec<f64> = (0..12).map(|b| e.success_rate(b)).collect();
        assert!(rates.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(rates[11], 0.75);
    }

    #[test]
    fn zero_threshold_gives_zero_delay() {
        let model = tiny_model();
        let mut src = ProjectionIncrement {
            model: &model,
            config: OracleConfig::default(),
        };
        let mc = MonteCarloConfig {
            runs: 3,
            horizon: 30,
            ..MonteCarloConfig::default()
        };
        let e = evaluate(&model, &mut src, 0.0, &mc).unwrap();
        assert_eq!(e.add(), 0.0);
    }
}
