//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_ocd::async_rt::{run_solver, staleness_violations, Mode, RunConfig, SolveResult};
use robust_ocd::config::ExperimentConfig;
use robust_ocd::cutplane::{CuttingPlane, Polytope};
use robust_ocd::dataset::{UncertaintyKind, NOMINAL_H4, POLY_C};
use robust_ocd::detector::{cusum_step, solve_vt_from, Evaluation, SolverSettings};
use robust_ocd::exact::polyhedron_protection_lp;
use robust_ocd::experiment::{
    async_vs_sync, baseline_increment, bench_instance, delay_grid, median_ratio, robust_increment,
    run_detector, BASELINE, ROBUST,
};
use robust_ocd::linalg::norm;
use robust_ocd::model::SystemModel;
use robust_ocd::oracle::{oracle_protection_polyhedron, oracle_vt, oracle_vt_grid, OracleConfig};
use robust_ocd::saddle::{
    gradients, regularization, regularized_lagrangian, schedule_at, DualState, PrimalState,
    PrimalSteps, SaddleProblem, ScheduleConfig,
};
use robust_ocd::uncertainty::{
    ColumnSet, GradientMode, InnerSolverConfig, RobustColumn, UncertaintySet,
};

type Outcome = Result<String, String>;

/// Staleness observed by every solve of the suite.
#[derive(Default)]
struct Staleness {
    runs: usize,
    worst_excess: i64,
}

impl Staleness {
    fn record(&mut self, res: &SolveResult, tau: usize) {
        self.runs += 1;
        self.worst_excess = self.worst_excess.max(res.max_staleness as i64 - tau as i64);
    }
}

fn tau_of(run: &RunConfig) -> usize {
    match run.mode {
        Mode::Sync => 1,
        Mode::Async => run.tau,
    }
}

/// Passes when `ok` holds and the criterion finished within `limit`.
fn verdict(ok: bool, limit: Duration, start: Instant, msg: String) -> Outcome {
    let t = start.elapsed();
    let msg = format!("{msg}, {t:.2?}");
    if t > limit {
        Err(format!("{msg} exceeds {limit:?}"))
    } else if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sigma = 0.7;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut rec = 0.0;
        for j in 0..v.len() {
            rec = cusum_step(rec, v[j], sigma);
            let mut direct = f64::NEG_INFINITY;
            let mut tail = 0.0;
            for i in (0..=j).rev() {
                tail += v[i] / (2.0 * sigma * sigma);
                direct = direct.max(tail);
            }
            worst = worst.max((rec - direct).abs());
        }
    }
    let msg = format!("max error {worst:.1e} over 1000x100");
    verdict(worst <= 1e-12, Duration::from_secs(1), start, msg)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = InnerSolverConfig {
        iterations: 500,
        ..InnerSolverConfig::default()
    };
    let center = NOMINAL_H4[0].to_vec();
    let ell = ColumnSet::new(center.clone(), UncertaintySet::Ellipsoid { radius: 0.36 }).map_err(|e| e.to_string())?;
    let dn = ColumnSet::new(center.clone(), UncertaintySet::DNorm { gamma: 4, uhat: 0.5 }).map_err(|e| e.to_string())?;
    let (mut e_ell, mut e_dn, mut e_poly): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..200 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        e_ell = e_ell.max((ell.protection_estimate(&x, &cfg) - 0.36 * norm(&x)).abs());
        e_dn = e_dn.max((dn.protection_estimate(&x, &cfg) - 0.5 * top_k_abs_sum_ref(&x, 4)).abs());
        let j = i % 3;
        let mut a = DMatrix::zeros(10, 5);
        for r in 0..5 {
            a[(r, r)] = 1.0;
            a[(r + 5, r)] = -1.0;
        }
        let c = POLY_C[j].to_vec();
        let h = NOMINAL_H4[j].to_vec();
        let vertex = oracle_protection_polyhedron(&a, &c, &h, &x).map_err(|e| e.to_string())?;
        let lp = polyhedron_protection_lp(&a, &c, &h, &x).map_err(|e| e.to_string())?;
        let set = ColumnSet::new(h, UncertaintySet::Polyhedron { a, c }).map_err(|e| e.to_string())?;
        let closed = set.protection_exact(&x).map_err(|e| e.to_string())?;
        e_poly = e_poly.max((lp - vertex).abs()).max((closed - vertex).abs());
    }
    let msg = format!("ellipsoid {e_ell:.1e}, D-norm {e_dn:.1e}, polyhedron {e_poly:.1e}");
    verdict(e_ell <= 1e-3 && e_dn <= 1e-3 && e_poly <= 1e-6, Duration::from_secs(30), start, msg)
}

/// Sum of the `k` largest magnitudes, by sorting.
fn top_k_abs_sum_ref(x: &[f64], k: usize) -> f64 {
    let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    a.sort_by(|p, q| q.total_cmp(p));
    a.iter().take(k).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_blocks(rng: &mut ChaCha8Rng, sizes: &[usize], lo: f64, hi: f64) -> Vec<Vec<f64>> {
    sizes.iter().map(|&n| random_vec(rng, n, lo, hi)).collect()
}

fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(fd).map(|(a, f)| a - f).collect();
    norm(&diff) / norm(analytic).max(1.0)
}

/// Nine blocks flattened in a fixed order, with a setter for FD.
fn flat_state(p: &PrimalState, d: &DualState) -> Vec<f64> {
    let mut v = Vec::new();
    for b in [&p.mu, &p.r, &p.p] {
        v.extend(b.iter().flatten());
    }
    v.extend(&p.q);
    v.extend(&p.x);
    for b in [&d.lambda, &d.alpha, &d.beta] {
        v.extend(b.iter().flatten());
    }
    v.extend(&d.gamma);
    v
}

fn set_flat(p: &mut PrimalState, d: &mut DualState, v: &[f64]) {
    let mut it = v.iter().copied();
    for b in [&mut p.mu, &mut p.r, &mut p.p] {
        b.iter_mut().flatten().for_each(|e| *e = it.next().unwrap());
    }
    p.q.iter_mut().for_each(|e| *e = it.next().unwrap());
    p.x.iter_mut().for_each(|e| *e = it.next().unwrap());
    for b in [&mut d.lambda, &mut d.alpha, &mut d.beta] {
        b.iter_mut().flatten().for_each(|e| *e = it.next().unwrap());
    }
    d.gamma.iter_mut().for_each(|e| *e = it.next().unwrap());
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let regions = vec![vec![0, 1], vec![2, 3, 4], vec![5]];
    let sizes: Vec<usize> = regions.iter().map(Vec::len).collect();
    let h = 1e-6;
    let mut worst_l: f64 = 0.0;
    for _ in 0..50 {
        let y = random_vec(&mut rng, 6, -1.0, 1.0);
        let prob = SaddleProblem::from_parts(&y, regions.clone(), rng.random_range(0.5..2.0));
        let planes: Vec<CuttingPlane> = (0..3)
            .map(|_| CuttingPlane::new(random_vec(&mut rng, 6, -1.0, 1.0), rng.random_range(-0.5..0.5)).unwrap())
            .collect();
        let mut primal = PrimalState {
            mu: random_blocks(&mut rng, &sizes, -1.0, 1.0),
            r: random_blocks(&mut rng, &sizes, -1.0, 1.0),
            p: random_blocks(&mut rng, &sizes, -1.0, 1.0),
            q: random_vec(&mut rng, 3, -1.0, 1.0),
            x: random_vec(&mut rng, 6, -1.0, 1.0),
        };
        let mut dual = DualState {
            lambda: random_blocks(&mut rng, &sizes, 0.0, 1.0),
            alpha: random_blocks(&mut rng, &sizes, 0.0, 1.0),
            beta: random_blocks(&mut rng, &sizes, -1.0, 1.0),
            gamma: random_vec(&mut rng, 3, 0.0, 1.0),
        };
        let c = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let g = gradients(&prob, &primal, &dual, &planes, c);
        let analytic = {
            let gp = PrimalState { mu: g.mu, r: g.r, p: g.p, q: g.q, x: g.x };
            let gd = DualState { lambda: g.lambda, alpha: g.alpha, beta: g.beta, gamma: g.gamma };
            flat_state(&gp, &gd)
        };
        let base = flat_state(&primal, &dual);
        let mut fd = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] = base[i] + h;
            set_flat(&mut primal, &mut dual, &v);
            let up = regularized_lagrangian(&prob, &primal, &dual, &planes, c);
            v[i] = base[i] - h;
            set_flat(&mut primal, &mut dual, &v);
            let down = regularized_lagrangian(&prob, &primal, &dual, &planes, c);
            fd[i] = (up - down) / (2.0 * h);
        }
        set_flat(&mut primal, &mut dual, &base);
        worst_l = worst_l.max(rel_err(&analytic, &fd));
    }

    let inner = InnerSolverConfig {
        iterations: 50,
        ..InnerSolverConfig::default()
    };
    let sets = [
        UncertaintySet::Ellipsoid { radius: 0.36 },
        UncertaintySet::DNorm { gamma: 2, uhat: 0.3 },
    ];
    let mut worst_g: f64 = 0.0;
    for i in 0..50 {
        let nominal = random_vec(&mut rng, 6, -1.0, 1.0);
        let col = RobustColumn::uncertain(nominal, vec![1, 2, 4], sets[i % 2].clone()).map_err(|e| e.to_string())?;
        let x = random_vec(&mut rng, 6, -1.0, 1.0);
        let sign = if i % 4 < 2 { 1.0 } else { -1.0 };
        let (_, grad) = col.g_value_grad(sign, &x, &inner, GradientMode::ThroughIterates);
        let fd: Vec<f64> = (0..6)
            .map(|k| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                (col.g_eval(sign, &xp, &inner) - col.g_eval(sign, &xm, &inner)) / (2.0 * h)
            })
            .collect();
        worst_g = worst_g.max(rel_err(&grad, &fd));
    }
    let msg = format!("Lagrangian blocks {worst_l:.1e}, g sensitivity {worst_g:.1e}");
    verdict(worst_l <= 1e-4 && worst_g <= 1e-4, Duration::from_secs(60), start, msg)
}

/// One uncertain column on `M = 3`, `L = 1`.
fn small_instance(rng: &mut ChaCha8Rng, delta: f64) -> (SystemModel, Vec<f64>) {
    let hb = random_vec(rng, 3, -1.0, 1.0);
    let y = random_vec(rng, 3, -1.5, 1.5);
    (small_model(&hb, delta), y)
}

fn small_model(hb: &[f64], delta: f64) -> SystemModel {
    let h = DMatrix::from_column_slice(3, 1, hb);
    let col = RobustColumn::uncertain(hb.to_vec(), vec![0, 1, 2], UncertaintySet::Ellipsoid { radius: 0.36 }).unwrap();
    SystemModel::new(h, vec![col], 1.0, 1.0, vec![delta], vec![vec![0, 1, 2]]).unwrap()
}

fn accurate_settings() -> SolverSettings {
    let mut s = SolverSettings::default();
    s.run.max_iters = 300_000;
    s.planes.freeze_after = 300_000;
    s.inner.iterations = 300;
    s
}

fn criterion_4(st: &mut Staleness) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let settings = accurate_settings();
    let oracle = OracleConfig::default();
    let (mut worst, mut worst_grid): (f64, f64) = (0.0, 0.0);
    for _ in 0..30 {
        let (model, y) = small_instance(&mut rng, 0.1);
        let (vo, _) = oracle_vt(&model, &y, &oracle).map_err(|e| e.to_string())?;
        let res = solve_vt_from(&model, &y, &settings, Polytope::new(settings.planes.capacity)).map_err(|e| e.to_string())?;
        st.record(&res, tau_of(&settings.run));
        worst = worst.max((res.value - vo).abs() / vo.abs().max(1e-12));
        // The grid resolves the δ = 0.1 slab poorly; cross-check the two
        // oracles on the same draw with a wider slab.
        let wide = small_model(model.columns()[0].nominal(), 0.5);
        let (vw, _) = oracle_vt(&wide, &y, &oracle).map_err(|e| e.to_string())?;
        let g = oracle_vt_grid(&wide, &y, 0.02).map_err(|e| e.to_string())?;
        worst_grid = worst_grid.max((g - vw).abs() / vw.abs().max(1.0));
    }
    let msg = format!("solver vs oracle rel {worst:.1e}, grid vs oracle {worst_grid:.1e}");
    verdict(worst <= 1e-3 && worst_grid <= 2e-2, Duration::from_secs(600), start, msg)
}

/// Certified optimum of `min ‖x‖² − 2yᵀx` over the box and `planes`.
fn polytope_qp(y: &[f64], planes: &[CuttingPlane], rho: f64) -> Result<f64, String> {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
    let m = y.len();
    let p = CscMatrix::from(&(0..m).map(|i| (0..m).map(|j| if i == j { 2.0 } else { 0.0 }).collect()).collect::<Vec<Vec<f64>>>());
    let q: Vec<f64> = y.iter().map(|v| -2.0 * v).collect();
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for i in 0..m {
        for sign in [1.0, -1.0] {
            let mut r = vec![0.0; m];
            r[i] = sign;
            rows.push(r);
            b.push(rho);
        }
    }
    for pl in planes {
        rows.push(pl.b.clone());
        b.push(-pl.kappa);
    }
    let a = CscMatrix::from(&rows);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .map_err(|e| e.to_string())?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &[NonnegativeConeT(rows.len())], settings).map_err(|e| e.to_string())?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved => Ok(solver.solution.obj_val),
        s => Err(format!("polytope QP: {s:?}")),
    }
}

/// Counts drops of more than `tol` below the running maximum.
fn drops(values: &[f64], tol: f64) -> (usize, f64) {
    let mut prev = f64::NEG_INFINITY;
    let (mut n, mut worst) = (0, 0.0f64);
    for &v in values {
        if v < prev - tol {
            n += 1;
            worst = worst.max(prev - v);
        }
        prev = prev.max(v);
    }
    (n, worst)
}

fn criterion_5(st: &mut Staleness) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut settings = accurate_settings();
    settings.inner.iterations = 100;
    let mut fixed = settings.run;
    fixed.max_iters = 1_000_000;
    let (mut updates, mut violations, mut unsolved, mut exact_violations) = (0, 0, 0, 0);
    let (mut worst_drop, mut worst_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let (model, y) = small_instance(&mut rng, 0.1);
        let res = solve_vt_from(&model, &y, &settings, Polytope::new(settings.planes.capacity)).map_err(|e| e.to_string())?;
        st.record(&res, tau_of(&settings.run));
        let prob = SaddleProblem::new(&model, &y).map_err(|e| e.to_string())?;
        let mut counts = vec![0];
        counts.extend(res.plane_updates.iter().map(|&(_, n)| n));
        let (mut values, mut exact) = (Vec::new(), Vec::new());
        for &n in &counts {
            let planes = &res.polytope.planes()[..n];
            let poly = Polytope::from_planes(planes.to_vec(), n.max(1)).map_err(|e| e.to_string())?;
            let sol = run_solver(&prob, None, poly, &fixed, &settings.schedule).map_err(|e| e.to_string())?;
            st.record(&sol, tau_of(&fixed));
            if !(sol.converged && sol.stationarity <= 1e-8) {
                unsolved += 1;
            }
            let value = prob.objective(&sol.primal.mu);
            let reference = polytope_qp(&y, planes, model.rho_u())?;
            worst_gap = worst_gap.max((value - reference).abs());
            values.push(value);
            exact.push(reference);
        }
        updates += values.len();
        let (n, w) = drops(&values, 1e-6);
        violations += n;
        worst_drop = worst_drop.max(w);
        exact_violations += drops(&exact, 1e-9).0;
    }
    // Reference values come from an interior point solve of the same
    // nested polytopes; they separate solver accuracy from the property.
    let msg = format!(
        "{updates} plane-set values, {violations} drops (worst {worst_drop:.1e}), {unsolved} not solved to 1e-8; \
         max |value - certified optimum| {worst_gap:.1e}, certified optima drops {exact_violations}"
    );
    verdict(violations == 0 && unsolved == 0, Duration::from_secs(600), start, msg)
}

fn criterion_6(st: &mut Staleness) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut identical = 0;
    for seed in 0..5u64 {
        let (model, y) = bench_instance(&cfg, seed).map_err(|e| e.to_string())?;
        let mut settings = cfg.solver;
        settings.run.max_iters = 500;
        settings.run.epsilon = 0.0;
        settings.run.record_trace = true;
        settings.run.seed = seed;
        settings.run.active = model.regions().len();
        settings.run.tau = 1;
        let mut results = Vec::new();
        for mode in [Mode::Sync, Mode::Async] {
            settings.run.mode = mode;
            let res = solve_vt_from(&model, &y, &settings, Polytope::new(settings.planes.capacity)).map_err(|e| e.to_string())?;
            st.record(&res, 1);
            results.push(res);
        }
        let (a, b) = (&results[0], &results[1]);
        let bits = |r: &SolveResult| -> Vec<u64> {
            let mut v: Vec<u64> = r
                .trace
                .iter()
                .flat_map(|t| {
                    [t.virtual_time, t.grad_norm_sq, t.stationarity, t.lagrangian, t.objective]
                        .map(f64::to_bits)
                        .into_iter()
                        .chain([t.k as u64, t.planes as u64])
                        .chain(t.active.iter().map(|&x| x as u64))
                })
                .collect();
            v.extend(r.x.iter().map(|x| x.to_bits()));
            v
        };
        if a.trace.len() == 500 && bits(a) == bits(b) && a.primal == b.primal && a.dual == b.dual {
            identical += 1;
        }
    }
    let msg = format!("{identical}/5 seeds bitwise identical over 500 iterations");
    verdict(identical == 5, Duration::from_secs(60), start, msg)
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let b = &cfg.bench;
    if (b.workers, b.active, b.tau, cfg.solver.run.delay_mu, cfg.solver.run.delay_sigma) != (10, 5, 10, 1.0, 0.5) {
        return Err("bench defaults differ from L = 10, S = 5, tau = 10, LN(1, 0.5)".into());
    }
    let (rows, summaries) = async_vs_sync(&cfg).map_err(|e| e.to_string())?;
    let ratio = median_ratio(&summaries);
    let dominated = rows.iter().all(|r| r.async_time <= r.sync_time);
    let msg = format!("median async/sync time to 1e-3: {ratio:.3}, clock dominance {dominated}");
    verdict(ratio <= 0.8 && dominated, Duration::from_secs(600), start, msg)
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.detector.fap_targets = vec![cfg.detector.success_fap];
    cfg.detector.calibration_runs = 40;
    cfg.detector.calibration_horizon = 600;
    cfg.detector.evaluation_runs = 1;
    cfg.detector.horizon = 500;
    cfg.validate().map_err(|e| e.to_string())?;
    if (cfg.detector.success_runs, cfg.detector.success_horizon) != (200, 500) {
        return Err("success defaults differ from 200 attacks, horizon 500".into());
    }
    let model = cfg.model(UncertaintyKind::Ellipsoid).map_err(|e| e.to_string())?;
    let mut robust = robust_increment(&cfg, &model).map_err(|e| e.to_string())?;
    let tri = run_detector(&cfg, &model, robust.as_mut(), ROBUST, "ellipsoid").map_err(|e| e.to_string())?;
    let mut base_src = baseline_increment(&model).map_err(|e| e.to_string())?;
    let base = run_detector(&cfg, &model, &mut base_src, BASELINE, "none").map_err(|e| e.to_string())?;
    let evals: [&Evaluation; 2] = [&tri.success, &base.success];
    let grid = delay_grid(&evals, &[]);
    let rt: Vec<f64> = grid.iter().map(|&b| tri.success.success_rate(b)).collect();
    let rb: Vec<f64> = grid.iter().map(|&b| base.success.success_rate(b)).collect();
    let ordered = rt.iter().zip(&rb).all(|(t, b)| t >= b);
    let msg = format!(
        "bounds {grid:?}: robust {rt:?} vs baseline {rb:?} (ADD {:.1} vs {:.1})",
        tri.success.add(),
        base.success.add()
    );
    verdict(grid.len() == 10 && ordered && nondecreasing(&rt) && nondecreasing(&rb), Duration::from_secs(1800), start, msg)
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.detector.success_runs = 1;
    if cfg.detector.fap_targets != [250.0, 500.0, 1000.0, 2000.0] {
        return Err("FAP target defaults changed".into());
    }
    let model = cfg.model(UncertaintyKind::Ellipsoid).map_err(|e| e.to_string())?;
    let mut robust = robust_increment(&cfg, &model).map_err(|e| e.to_string())?;
    let rep = run_detector(&cfg, &model, robust.as_mut(), ROBUST, "ellipsoid").map_err(|e| e.to_string())?;
    let add: Vec<f64> = rep.add_vs_fap.iter().map(|r| r.add).collect();
    let ratios: Vec<f64> = rep.add_vs_fap.iter().map(|r| r.add / r.fap_target).collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    let increasing = add.windows(2).all(|w| w[0] < w[1]);
    let all_detected = rep.add_vs_fap.iter().all(|r| r.detected == r.n_runs);
    let msg = format!("ADD {add:.1?}, ADD/FAP spread {:.1}%, all detected {all_detected}", 100.0 * spread);
    verdict(increasing && spread < 0.25 && all_detected, Duration::from_secs(1800), start, msg)
}

fn criterion_11() -> Outcome {
    let mut errors = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if got != want {
            errors.push(format!("{name}: {got:e} != {want:e}"));
        }
    };
    for eta in [0.1, 0.25, 0.2, 3.0] {
        check("c^15", regularization(15, eta, 1.0, 0.0), 1.0 / (2.0 * eta));
        check("c^0", regularization(0, eta, 1.0, 0.0), 1.0 / eta);
        check("c^80 floor", regularization(80, eta, 1.0, 1.0 / eta), 1.0 / eta);
        check("c^255", regularization(255, eta, 1.0, 0.0), 1.0 / (4.0 * eta));
    }
    let cfg = ScheduleConfig {
        eta_lambda: 0.5,
        eta_alpha: 0.5,
        eta_beta: 0.5,
        eta_gamma: 0.5,
        reg_scale: 1.0,
        floor_lambda: 0.5,
        floor_alpha: 0.5,
        floor_beta: 0.5,
        floor_gamma: 0.5,
        xi: 4.0,
        primal: PrimalSteps::Theorem,
        ..ScheduleConfig::default()
    };
    let s = schedule_at(15, &cfg, 2.0, 2.0).map_err(|e| e.to_string())?;
    // 8ξ/(η c²) = 256 for every block; sqrt(2ρ) = 2.
    check("eta_mu", s.eta_mu, 1.0 / 768.0);
    check("eta_x", s.eta_x, 1.0 / 768.0);
    check("eta_r", s.eta_r, 1.0 / 4096.0);
    check("eta_q", s.eta_q, 1.0 / 4096.0);
    check("c_lambda^15", s.c_lambda, 1.0);
    let manual = ScheduleConfig::default();
    let m = schedule_at(3, &manual, 3.0, 1.0).map_err(|e| e.to_string())?;
    check("manual eta_x", m.eta_x, 0.05);
    check("manual eta_gamma", m.eta_gamma, 0.1);
    if errors.is_empty() {
        Ok("all spot checks exact".into())
    } else {
        Err(errors.join("; "))
    }
}

/// `ACCEPTANCE_ONLY=4,5` runs a subset; criterion 7 always runs over
/// whatever solves happened.
fn selected() -> Option<Vec<u32>> {
    let v = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let mut st = Staleness::default();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut run = |n: u32, st: &mut Staleness, f: &dyn Fn(&mut Staleness) -> Outcome| {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("criterion {n:>2}: skipped");
            return;
        }
        let r = f(st);
        match &r {
            Ok(m) => println!("criterion {n:>2}: PASS  {m}"),
            Err(m) => println!("criterion {n:>2}: FAIL  {m}"),
        }
        results.push((n, r));
    };
    run(1, &mut st, &|_| criterion_1());
    run(2, &mut st, &|_| criterion_2());
    run(3, &mut st, &|_| criterion_3());
    run(4, &mut st, &criterion_4);
    run(5, &mut st, &criterion_5);
    run(6, &mut st, &criterion_6);
    run(8, &mut st, &|_| criterion_8());
    run(9, &mut st, &|_| criterion_9());
    run(10, &mut st, &|_| criterion_10());
    run(11, &mut st, &|_| criterion_11());
    let global = staleness_violations();
    let runs = st.runs;
    let excess = st.worst_excess;
    run(7, &mut st, &|_| {
        if global == 0 && excess <= 0 {
            Ok(format!("0 violations, max staleness within tau in {runs} recorded solves"))
        } else {
            Err(format!("{global} violations, worst excess over tau {excess}"))
        }
    });
    let failed: Vec<u32> = results.iter().filter(|(_, r)| r.is_err()).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
