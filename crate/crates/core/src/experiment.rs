//! Monte Carlo experiments and their CSV tables.
//!
//! * `add_vs_fap.csv`: ADD at calibrated thresholds for each FAP target;
//! * `success_rate.csv`: fraction of attacks detected within each delay
//!   bound at a common FAP;
//! * `async_vs_sync.csv`: virtual time and stationarity per iteration of
//!   synchronous and asynchronous runs on the same instance.

use std::io::Write;

use log::info;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::async_rt::{Mode, SolveResult};
use crate::config::{Engine, ExperimentConfig};
use crate::cutplane::Polytope;
use crate::detector::{
    calibrate_threshold, evaluate, null_increments, solve_vt_from, Evaluation, Increment,
    SolverIncrement,
};
use crate::error::Result;
use crate::exact::ExactIncrement;
use crate::model::SystemModel;
use crate::uncertainty::RobustColumn;

pub const ROBUST: &str = "robust";
pub const BASELINE: &str = "exact_h_baseline";

/// The robust detector for `model` with the configured engine.
pub fn robust_increment<'a>(cfg: &ExperimentConfig, model: &'a SystemModel) -> Result<Box<dyn Increment + 'a>> {
    Ok(match cfg.detector.engine {
        Engine::Exact => Box::new(ExactIncrement::new(model)?),
        Engine::Distributed => Box::new(SolverIncrement::new(model, cfg.solver)),
    })
}

/// The detector that takes the nominal matrix as exact.
pub fn baseline_increment(model: &SystemModel) -> Result<ExactIncrement> {
    ExactIncrement::baseline(&model.nominal_matrix(), model.sigma_n(), model.rho_u())
}

/// One row of `add_vs_fap.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AddRow {
    pub detector: String,
    pub uncertainty: String,
    pub fap_target: f64,
    pub zeta: f64,
    pub fap: f64,
    pub add: f64,
    /// Attacked runs that alarmed within the horizon.
    pub detected: usize,
    pub n_runs: usize,
    pub seed_base: u64,
}

/// One row of `success_rate.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuccessRow {
    pub detector: String,
    pub uncertainty: String,
    pub delay_bound: usize,
    pub success_rate: f64,
}

/// Everything measured for one detector.
#[derive(Clone, Debug)]
pub struct DetectorReport {
    pub detector: String,
    pub uncertainty: String,
    pub add_vs_fap: Vec<AddRow>,
    /// Delays at the `success_fap` threshold.
    pub success: Evaluation,
}

/// Calibrates `source` for every FAP target and for `success_fap`, and
/// evaluates each threshold on attacked streams.
pub fn run_detector(
    cfg: &ExperimentConfig,
    model: &SystemModel,
    source: &mut dyn Increment,
    detector: &str,
    uncertainty: &str,
) -> Result<DetectorReport> {
    let sigma = model.sigma_n();
    let null = null_increments(model, source, &cfg.calibration_mc())?;
    let eval_mc = cfg.evaluation_mc();
    let mut rows = Vec::new();
    for &target in &cfg.detector.fap_targets {
        let cal = calibrate_threshold(&null, target, sigma)?;
        let ev = evaluate(model, source, cal.zeta, &eval_mc)?;
        info!("{detector}/{uncertainty}: FAP {target} -> zeta {:.3}, ADD {:.2}", cal.zeta, ev.add());
        rows.push(AddRow {
            detector: detector.into(),
            uncertainty: uncertainty.into(),
            fap_target: target,
            zeta: cal.zeta,
            fap: cal.fap,
            add: ev.add(),
            detected: ev.delays.iter().flatten().count(),
            n_runs: eval_mc.runs,
            seed_base: eval_mc.seed_base,
        });
    }
    let cal = calibrate_threshold(&null, cfg.detector.success_fap, sigma)?;
    let success = evaluate(model, source, cal.zeta, &cfg.success_mc())?;
    Ok(DetectorReport {
        detector: detector.into(),
        uncertainty: uncertainty.into(),
        add_vs_fap: rows,
        success,
    })
}

/// Ten bounds evenly spread over the detected delays of `evals`, or
/// `configured` when nonempty. Strictly increasing.
pub fn delay_grid(evals: &[&Evaluation], configured: &[usize]) -> Vec<usize> {
    if !configured.is_empty() {
        let mut g = configured.to_vec();
        g.sort_unstable();
        g.dedup();
        return g;
    }
    let delays = || evals.iter().flat_map(|e| e.delays.iter().flatten().copied());
    let (Some(lo), Some(hi)) = (delays().min(), delays().max()) else {
        return (1..=10).collect();
    };
    let mut g: Vec<usize> = (0..10)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / 9.0).round() as usize)
        .collect();
    g.dedup();
    g
}

pub fn success_rows(report: &DetectorReport, bounds: &[usize]) -> Vec<SuccessRow> {
    bounds
        .iter()
        .map(|&b| SuccessRow {
            detector: report.detector.clone(),
            uncertainty: report.uncertainty.clone(),
            delay_bound: b,
            success_rate: report.success.success_rate(b),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub detectors: Vec<DetectorReport>,
    pub delay_bounds: Vec<usize>,
}

impl ExperimentReport {
    pub fn add_vs_fap(&self) -> Vec<AddRow> {
        self.detectors.iter().flat_map(|d| d.add_vs_fap.clone()).collect()
    }

    pub fn success_rate(&self) -> Vec<SuccessRow> {
        self.detectors.iter().flat_map(|d| success_rows(d, &self.delay_bounds)).collect()
    }
}

/// The robust detector for every configured variant, then the baseline.
/// The true matrix, and hence every stream, is the same for all variants.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut detectors = Vec::new();
    for &kind in &cfg.uncertainty.kinds {
        let model = cfg.model(kind)?;
        let mut source = robust_increment(cfg, &model)?;
        detectors.push(run_detector(cfg, &model, source.as_mut(), ROBUST, kind.as_str())?);
    }
    if cfg.detector.baseline {
        let model = cfg.model(cfg.primary_kind())?;
        let mut source = baseline_increment(&model)?;
        detectors.push(run_detector(cfg, &model, &mut source, BASELINE, "none")?);
    }
    let evals: Vec<&Evaluation> = detectors.iter().map(|d| &d.success).collect();
    let delay_bounds = delay_grid(&evals, &cfg.detector.delay_bounds);
    Ok(ExperimentReport { detectors, delay_bounds })
}

/// Writes serializable rows with a header.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A random instance with `workers` regions of `rows_per_worker` meters
/// and exactly known columns, plus an observation.
pub fn bench_instance(cfg: &ExperimentConfig, seed: u64) -> Result<(SystemModel, Vec<f64>)> {
    let b = &cfg.bench;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = b.workers * b.rows_per_worker;
    let h = DMatrix::from_fn(m, b.columns, |_, _| rng.random_range(-1.0..1.0));
    let columns = (0..b.columns)
        .map(|j| RobustColumn::exact(h.column(j).iter().copied().collect()))
        .collect();
    let regions = (0..b.workers)
        .map(|l| (l * b.rows_per_worker..(l + 1) * b.rows_per_worker).collect())
        .collect();
    let model = SystemModel::new(h, columns, cfg.model.sigma_n, cfg.model.rho_u, vec![b.delta; b.columns], regions)?;
    let y = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((model, y))
}

/// One row of `async_vs_sync.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance: usize,
    pub k: usize,
    pub sync_time: f64,
    pub async_time: f64,
    pub sync_stationarity: f64,
    pub async_stationarity: f64,
}

/// First virtual time at which each run reached the bench epsilon.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchSummary {
    pub instance: usize,
    pub sync_time: Option<f64>,
    pub async_time: Option<f64>,
}

impl BenchSummary {
    pub fn ratio(&self) -> Option<f64> {
        Some(self.async_time? / self.sync_time?)
    }
}

/// Runs each bench instance in both modes for the full iteration budget.
/// The delay seed of instance `i` is `seeds.instance + i`, shared by the
/// two modes.
pub fn async_vs_sync(cfg: &ExperimentConfig) -> Result<(Vec<BenchRow>, Vec<BenchSummary>)> {
    let b = &cfg.bench;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for i in 0..b.instances {
        let seed = cfg.seeds.instance + i as u64;
        let (model, y) = bench_instance(cfg, seed)?;
        let mut settings = cfg.solver;
        settings.run.active = b.active;
        settings.run.tau = b.tau;
        settings.run.max_iters = b.max_iters;
        settings.run.epsilon = 0.0;
        settings.run.record_trace = true;
        settings.run.seed = seed;
        let mut run = |mode| -> Result<SolveResult> {
            settings.run.mode = mode;
            solve_vt_from(&model, &y, &settings, Polytope::new(settings.planes.capacity))
        };
        let sync = run(Mode::Sync)?;
        let asy = run(Mode::Async)?;
        let first = |r: &SolveResult| {
            r.trace
                .iter()
                .find(|t| t.stationarity <= b.epsilon)
                .map(|t| t.virtual_time)
        };
        summaries.push(BenchSummary {
            instance: i,
            sync_time: first(&sync),
            async_time: first(&asy),
        });
        rows.extend(sync.trace.iter().zip(&asy.trace).map(|(s, a)| BenchRow {
            instance: i,
            k: s.k,
            sync_time: s.virtual_time,
            async_time: a.virtual_time,
            sync_stationarity: s.stationarity,
            async_stationarity: a.stationarity,
        }));
    }
    Ok((rows, summaries))
}

/// Median of the async/sync time ratios; instances where either run
/// missed the epsilon count as ratio `+∞`.
pub fn median_ratio(summaries: &[BenchSummary]) -> f64 {
    let mut r: Vec<f64> = summaries.iter().map(|s| s.ratio().unwrap_or(f64::INFINITY)).collect();
    r.sort_by(f64::total_cmp);
    let n = r.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        r[n / 2]
    } else {
        0.5 * (r[n / 2 - 1] + r[n / 2])
    }
}
