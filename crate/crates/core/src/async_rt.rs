//! Deterministic virtual-time execution of the master/worker iteration.
//!
//! Each master iteration activates a set `𝒬` of workers: the `S` whose
//! results arrive first, plus any worker that would otherwise exceed the
//! staleness bound `τ`. The virtual clock advances to the latest arrival
//! in `𝒬`; every activated worker then receives the broadcast and starts
//! a new computation whose duration is log-normal.
//!
//! The duration of the computation worker `l` starts after iteration `a`
//! is a pure function of `(seed, l, a)`. Under this coupling the clock of
//! an asynchronous run never runs ahead of a synchronous run with the same
//! seed.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::cutplane::{separate, update_sets, PlaneConfig, Polytope};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::saddle::{
    divergence_guard, grad_norm_sq, lagrangian, master_update, schedule_at, stationarity,
    worker_update, DualState, PrimalState, SaddleProblem, ScheduleConfig, WorkerUpdate,
};
use crate::uncertainty::InnerSolverConfig;

static STALENESS_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of staleness-bound violations observed by any run in this
/// process.
pub fn staleness_violations() -> usize {
    STALENESS_VIOLATIONS.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sync,
    #[default]
    Async,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(Self::Sync),
            "async" => Ok(Self::Async),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Active-set size `S`.
    pub active: usize,
    /// Staleness bound `τ`.
    pub tau: usize,
    pub mode: Mode,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the projected stationarity measure falls to this value
    /// and a separation check at the current point adds no plane.
    pub epsilon: f64,
    /// Log-normal location of worker delays.
    pub delay_mu: f64,
    /// Log-normal scale of worker delays.
    pub delay_sigma: f64,
    pub record_trace: bool,
    /// Evaluate active workers on scoped threads. Results are reduced in
    /// worker order and are bitwise identical to the sequential loop.
    pub threads: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            active: 10,
            tau: 10,
            mode: Mode::Async,
            seed: 0,
            max_iters: 200_000,
            epsilon: 1e-8,
            delay_mu: 1.0,
            delay_sigma: 0.5,
            record_trace: false,
            threads: false,
        }
    }
}

impl RunConfig {
    /// `(S, τ)` in force for `workers` workers: synchronous mode uses
    /// `S = L`, `τ = 1`; asynchronous mode caps `S` at `L`.
    pub fn effective(&self, workers: usize) -> Result<(usize, usize)> {
        match self.mode {
            Mode::Sync => Ok((workers, 1)),
            Mode::Async => {
                if self.active == 0 || self.tau == 0 {
                    return Err(Error::InvalidConfig("S and tau must be >= 1".into()));
                }
                Ok((self.active.min(workers), self.tau))
            }
        }
    }
}

/// Deterministic source of worker computation times.
#[derive(Clone, Debug)]
pub struct DelaySource {
    seed: u64,
    dist: LogNormal<f64>,
}

impl DelaySource {
    pub fn new(seed: u64, mu: f64, sigma: f64) -> Result<Self> {
        let dist = LogNormal::new(mu, sigma)
            .map_err(|e| Error::InvalidConfig(format!("delay distribution: {e}")))?;
        Ok(Self { seed, dist })
    }

    /// Duration of the computation worker `l` starts after iteration `a`.
    pub fn draw(&self, l: usize, a: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(l as u64);
        rng.set_word_pos(a as u128 * 64);
        self.dist.sample(&mut rng)
    }
}

/// Per-worker bookkeeping of the virtual clock.
#[derive(Clone, Debug)]
pub struct WorkerClock {
    /// `k̂_l`: last iteration in which each worker was active (0 before
    /// the first).
    pub last_active: Vec<usize>,
    pub next_ready: Vec<f64>,
    pub now: f64,
    delays: DelaySource,
}

impl WorkerClock {
    /// All workers start computing at time 0.
    pub fn new(workers: usize, delays: DelaySource) -> Self {
        let next_ready = (0..workers).map(|l| delays.draw(l, 0)).collect();
        Self {
            last_active: vec![0; workers],
            next_ready,
            now: 0.0,
            delays,
        }
    }

    pub fn workers(&self) -> usize {
        self.next_ready.len()
    }

    /// `𝒬^k` (0-based worker indices, ascending) for master iteration `k ≥ 1`:
    /// workers with `k − k̂_l ≥ τ` are forced in, the rest of the `S`
    /// slots go to the earliest arrivals, ties to the lowest index.
    pub fn next_active_set(&self, k: usize, s: usize, tau: usize) -> Vec<usize> {
        let l = self.workers();
        let forced: Vec<usize> = (0..l).filter(|&w| k - self.last_active[w] >= tau).collect();
        let mut order: Vec<usize> = (0..l).filter(|w| !forced.contains(w)).collect();
        order.sort_by(|&a, &b| {
            self.next_ready[a]
                .total_cmp(&self.next_ready[b])
                .then(a.cmp(&b))
        });
        let free = s.saturating_sub(forced.len());
        let mut chosen = forced;
        chosen.extend(order.into_iter().take(free));
        chosen.sort_unstable();
        chosen
    }

    /// Moves the clock to the latest arrival in `chosen`, marks them
    /// active at `k` and starts their next computations. Returns the
    /// largest staleness among `chosen`.
    pub fn advance(&mut self, chosen: &[usize], k: usize) -> usize {
        let mut stale = 0;
        for &w in chosen {
            self.now = self.now.max(self.next_ready[w]);
            stale = stale.max(k - self.last_active[w]);
        }
        for &w in chosen {
            self.last_active[w] = k;
            self.next_ready[w] = self.now + self.delays.draw(w, k);
        }
        stale
    }
}

/// One row of the iteration trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub virtual_time: f64,
    pub active: Vec<bool>,
    pub grad_norm_sq: f64,
    pub stationarity: f64,
    pub lagrangian: f64,
    pub objective: f64,
    pub planes: usize,
}

/// Outcome of one solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub primal: PrimalState,
    pub dual: DualState,
    /// `v_t = −(Σ_l ‖μ_l‖² − 2y_lᵀμ_l)`.
    pub value: f64,
    pub iterations: usize,
    pub virtual_time: f64,
    pub converged: bool,
    pub stationarity: f64,
    pub polytope: Polytope,
    /// Plane count after each update that added at least one plane.
    pub plane_updates: Vec<(usize, usize)>,
    pub max_staleness: usize,
    pub trace: Vec<TraceRow>,
}

/// Where cutting planes come from during a run.
#[derive(Clone, Copy, Debug)]
pub struct PlaneSource<'a> {
    pub model: &'a SystemModel,
    pub planes: &'a PlaneConfig,
    pub inner: &'a InnerSolverConfig,
}

/// Iterates from the zero state over `initial` (and any planes generated
/// from `source`) until ε-stationary or `max_iters`.
pub fn run_solver(
    prob: &SaddleProblem,
    source: Option<PlaneSource<'_>>,
    initial: Polytope,
    run: &RunConfig,
    schedule: &ScheduleConfig,
) -> Result<SolveResult> {
    schedule.validate()?;
    let workers = prob.workers();
    let (s, tau) = run.effective(workers)?;
    let mut clock = WorkerClock::new(workers, DelaySource::new(run.seed, run.delay_mu, run.delay_sigma)?);
    let mut polytope = initial;
    let mut primal = PrimalState::zeros(prob, polytope.len());
    let mut dual = DualState::zeros(prob, polytope.len());
    let mut nu = polytope.normal_mass();
    let mut trace = Vec::new();
    let mut plane_updates = Vec::new();
    let mut max_staleness = 0;
    let mut converged = false;
    let mut metric = f64::INFINITY;
    let mut iterations = 0;
    let mut active = vec![false; workers];

    for k in 0..run.max_iters {
        let sched = schedule_at(k, schedule, nu, prob.rho)?;
        let chosen = clock.next_active_set(k + 1, s, tau);
        let updates = compute_workers(prob, &primal, &dual, &sched, &chosen, run.threads);
        active.fill(false);
        for (&w, up) in chosen.iter().zip(updates) {
            active[w] = true;
            primal.mu[w] = up.mu;
            primal.r[w] = up.r;
            primal.p[w] = up.p;
        }
        master_update(prob, &mut primal, &mut dual, polytope.planes(), &sched, &active, schedule.project_beta);
        iterations = k + 1;
        if let Err(e) = divergence_guard(&primal, &dual, iterations) {
            debug!("{e}");
            return Err(e);
        }
        let stale = clock.advance(&chosen, k + 1);
        if stale > tau {
            STALENESS_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        }
        max_staleness = max_staleness.max(stale);

        let check = source.is_some_and(|src| src.planes.is_check(k));
        let mut added = 0;
        if check {
            added = refine(source, &mut polytope, &mut primal, &mut dual, true);
        }
        metric = stationarity(prob, &primal, &dual, polytope.planes(), schedule.project_beta);
        if added > 0 {
            nu = polytope.normal_mass();
            plane_updates.push((k, polytope.len()));
        }
        if run.record_trace {
            trace.push(TraceRow {
                k: iterations,
                virtual_time: clock.now,
                active: active.clone(),
                grad_norm_sq: grad_norm_sq(prob, &primal, &dual, polytope.planes()),
                stationarity: metric,
                lagrangian: lagrangian(prob, &primal, &dual, polytope.planes()),
                objective: prob.objective(&primal.mu),
                planes: polytope.len(),
            });
        }
        if metric <= run.epsilon && added == 0 {
            let may_refine = source.is_some_and(|src| k <= src.planes.freeze_after);
            if may_refine {
                added = refine(source, &mut polytope, &mut primal, &mut dual, false);
            }
            if added == 0 {
                converged = true;
                break;
            }
            nu = polytope.normal_mass();
            plane_updates.push((k, polytope.len()));
        }
    }
    Ok(SolveResult {
        x: primal.x.clone(),
        value: -prob.objective(&primal.mu),
        primal,
        dual,
        iterations,
        virtual_time: clock.now,
        converged,
        stationarity: metric,
        polytope,
        plane_updates,
        max_staleness,
        trace,
    })
}

/// Separation check at the current `x`; returns the number of planes added.
fn refine(
    source: Option<PlaneSource<'_>>,
    polytope: &mut Polytope,
    primal: &mut PrimalState,
    dual: &mut DualState,
    gated: bool,
) -> usize {
    let Some(src) = source else { return 0 };
    if polytope.is_full() || (gated && polytope.max_violation(&primal.x) > src.planes.gate) {
        return 0;
    }
    let cuts = separate(src.model, &primal.x, src.inner, src.planes.gradient, src.planes.tolerance);
    update_sets(polytope, cuts, &mut primal.q, &mut dual.gamma, &primal.x, src.planes.dedupe)
}

fn compute_workers(
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    sched: &crate::saddle::Schedule,
    chosen: &[usize],
    threads: bool,
) -> Vec<WorkerUpdate> {
    if !threads || chosen.len() < 2 {
        return chosen
            .iter()
            .map(|&w| worker_update(w, prob, primal, dual, sched))
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = chosen
            .iter()
            .map(|&w| scope.spawn(move || worker_update(w, prob, primal, dual, sched)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Columns `k, virtual_time, active, grad_norm_sq, stationarity,
/// lagrangian, objective, planes`; `active` is a 0/1 string in worker
/// order.
pub fn write_trace<W: Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "k",
        "virtual_time",
        "active",
        "grad_norm_sq",
        "stationarity",
        "lagrangian",
        "objective",
        "planes",
    ])?;
    for row in trace {
        let mask: String = row.active.iter().map(|&a| if a { '1' } else { '0' }).collect();
        w.write_record([
            row.k.to_string(),
            format!("{:e}", row.virtual_time),
            mask,
            format!("{:e}", row.grad_norm_sq),
            format!("{:e}", row.stationarity),
            format!("{:e}", row.lagrangian),
            format!("{:e}", row.objective),
            row.planes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key=value` summary of a run.
pub fn write_summary(result: &SolveResult, run: &RunConfig, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "mode={}", match run.mode {
        Mode::Sync => "sync",
        Mode::Async => "async",
    })?;
    writeln!(f, "seed={}", run.seed)?;
    writeln!(f, "value={:e}", result.value)?;
    writeln!(f, "iterations={}", result.iterations)?;
    writeln!(f, "virtual_time={:e}", result.virtual_time)?;
    writeln!(f, "converged={}", result.converged)?;
    writeln!(f, "stationarity={:e}", result.stationarity)?;
    writeln!(f, "planes={}", result.polytope.len())?;
    writeln!(f, "max_staleness={}", result.max_staleness)?;
    let x: Vec<String> = result.x.iter().map(|v| format!("{v:e}")).collect();
    writeln!(f, "x={}", x.join(","))?;
    Ok(())
}
