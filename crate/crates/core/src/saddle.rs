//! Primal-dual saddle-point iteration on the (regularized) Lagrangian of
//! the slack-variable problem
//!
//! ```text
//! min  Σ_l ‖μ_l‖² − 2y_lᵀμ_l
//! s.t. −μ_l − ρ1 + r_l∘r_l = 0,   μ_l − ρ1 + p_l∘p_l = 0,
//!      μ_l = B_l x,               b_sᵀx + κ_s + q_s² = 0.
//! ```
//!
//! Workers own `(μ_l, r_l, p_l)`; the master owns `(q, x)` and every
//! multiplier. Signs follow the Lagrangian
//! `L_p = f + Σλᵀ(·) + Σαᵀ(·) + Σβᵀ(μ − Bx) + Σγ(·)`, descended in the
//! primal blocks and ascended in the duals.

use serde::{Deserialize, Serialize};

use crate::cutplane::CuttingPlane;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::model::SystemModel;

/// Magnitude above which any iterate counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Data of one `v_t` problem: local observations and selectors.
#[derive(Clone, Debug)]
pub struct SaddleProblem {
    /// `y_l = B_l y`
    pub y: Vec<Vec<f64>>,
    /// Row indices selected by each `B_l`.
    pub regions: Vec<Vec<usize>>,
    pub rho: f64,
    /// Dimension `M` of `x`.
    pub dim: usize,
}

impl SaddleProblem {
    pub fn new(model: &SystemModel, y: &[f64]) -> Result<Self> {
        check_dim("observation", model.m(), y.len())?;
        Ok(Self::from_parts(y, model.regions().to_vec(), model.rho_u()))
    }

    pub fn from_parts(y: &[f64], regions: Vec<Vec<usize>>, rho: f64) -> Self {
        let local = regions
            .iter()
            .map(|rows| rows.iter().map(|&r| y[r]).collect())
            .collect();
        Self {
            y: local,
            regions,
            rho,
            dim: y.len(),
        }
    }

    pub fn workers(&self) -> usize {
        self.regions.len()
    }

    /// `Σ_l ‖μ_l‖² − 2y_lᵀμ_l`
    pub fn objective(&self, mu: &[Vec<f64>]) -> f64 {
        mu.iter()
            .zip(&self.y)
            .map(|(m, y)| norm_sq(m) - 2.0 * dot(y, m))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalState {
    pub mu: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub lambda: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

fn zeros_like(prob: &SaddleProblem) -> Vec<Vec<f64>> {
    prob.regions.iter().map(|r| vec![0.0; r.len()]).collect()
}

impl PrimalState {
    /// All-zero state with `planes` plane slacks.
    pub fn zeros(prob: &SaddleProblem, planes: usize) -> Self {
        Self {
            mu: zeros_like(prob),
            r: zeros_like(prob),
            p: zeros_like(prob),
            q: vec![0.0; planes],
            x: vec![0.0; prob.dim],
        }
    }
}

impl DualState {
    pub fn zeros(prob: &SaddleProblem, planes: usize) -> Self {
        Self {
            lambda: zeros_like(prob),
            alpha: zeros_like(prob),
            beta: zeros_like(prob),
            gamma: vec![0.0; planes],
        }
    }
}

/// Rule for the five primal step sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimalSteps {
    /// Fixed steps; the `x` step is divided by `1 + ν` and the `γ` step by
    /// `sqrt(1 + ν)` so the plane coupling stays contractive as planes
    /// accumulate.
    Manual {
        eta_mu: f64,
        eta_r: f64,
        eta_p: f64,
        eta_q: f64,
        eta_x: f64,
    },
    /// Steps derived from the dual steps, the regularization floors, `ξ`,
    /// `ν` and the slack bounds. Requires positive floors.
    Theorem,
}

/// Step sizes, regularization and constants of the saddle iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub eta_lambda: f64,
    pub eta_alpha: f64,
    pub eta_beta: f64,
    pub eta_gamma: f64,
    /// Multiplier on the decaying regularization `1/(η(k+1)^{1/4})`; `1`
    /// gives the analysed schedule, `0` leaves only the floors.
    pub reg_scale: f64,
    pub floor_lambda: f64,
    pub floor_alpha: f64,
    pub floor_beta: f64,
    pub floor_gamma: f64,
    /// Must exceed 2.
    pub xi: f64,
    /// Slack bounds; `None` means `sqrt(2ρ)`.
    pub w_r: Option<f64>,
    pub w_p: Option<f64>,
    pub w_q: Option<f64>,
    /// Apply `(·)⁺` to the equality multiplier `β`.
    pub project_beta: bool,
    pub primal: PrimalSteps,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            eta_lambda: 0.2,
            eta_alpha: 0.2,
            eta_beta: 0.2,
            eta_gamma: 0.2,
            reg_scale: 0.0,
            floor_lambda: 0.0,
            floor_alpha: 0.0,
            floor_beta: 0.0,
            floor_gamma: 0.0,
            xi: 3.0,
            w_r: None,
            w_p: None,
            w_q: None,
            project_beta: false,
            primal: PrimalSteps::Manual {
                eta_mu: 0.2,
                eta_r: 0.1,
                eta_p: 0.1,
                eta_q: 0.1,
                eta_x: 0.2,
            },
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 2.0) {
            return Err(Error::InvalidConfig(format!("xi = {} must exceed 2", self.xi)));
        }
        let duals = [self.eta_lambda, self.eta_alpha, self.eta_beta, self.eta_gamma];
        if duals.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidConfig("dual step sizes must be positive".into()));
        }
        let floors = [self.floor_lambda, self.floor_alpha, self.floor_beta, self.floor_gamma];
        if floors.iter().any(|f| !(*f >= 0.0)) || !(self.reg_scale >= 0.0) {
            return Err(Error::InvalidConfig(
                "regularization scale and floors must be >= 0".into(),
            ));
        }
        match self.primal {
            PrimalSteps::Theorem if floors.contains(&0.0) => Err(Error::InvalidConfig(
                "theorem step sizes need positive regularization floors".into(),
            )),
            PrimalSteps::Manual {
                eta_mu,
                eta_r,
                eta_p,
                eta_q,
                eta_x,
            } if [eta_mu, eta_r, eta_p, eta_q, eta_x].iter().any(|e| !(*e > 0.0)) => Err(
                Error::InvalidConfig("primal step sizes must be positive".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Step sizes and regularization weights in force at one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub eta_mu: f64,
    pub eta_r: f64,
    pub eta_p: f64,
    pub eta_q: f64,
    pub eta_x: f64,
    pub eta_lambda: f64,
    pub eta_alpha: f64,
    pub eta_beta: f64,
    pub eta_gamma: f64,
    pub c_lambda: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_gamma: f64,
}

/// `max(scale / (η (k+1)^{1/4}), floor)`
pub fn regularization(k: usize, eta: f64, scale: f64, floor: f64) -> f64 {
    let root = ((k + 1) as f64).sqrt().sqrt();
    (scale / (eta * root)).max(floor)
}

/// Schedule at iteration `k` given `ν = Σ_s ‖b_s‖²` and the box bound.
pub fn schedule_at(k: usize, cfg: &ScheduleConfig, nu: f64, rho: f64) -> Result<Schedule> {
    cfg.validate()?;
    let c = |eta, floor| regularization(k, eta, cfg.reg_scale, floor);
    let default_w = (2.0 * rho).sqrt();
    let mut s = Schedule {
        eta_mu: 0.0,
        eta_r: 0.0,
        eta_p: 0.0,
        eta_q: 0.0,
        eta_x: 0.0,
        eta_lambda: cfg.eta_lambda,
        eta_alpha: cfg.eta_alpha,
        eta_beta: cfg.eta_beta,
        eta_gamma: cfg.eta_gamma,
        c_lambda: c(cfg.eta_lambda, cfg.floor_lambda),
        c_alpha: c(cfg.eta_alpha, cfg.floor_alpha),
        c_beta: c(cfg.eta_beta, cfg.floor_beta),
        c_gamma: c(cfg.eta_gamma, cfg.floor_gamma),
    };
    match cfg.primal {
        PrimalSteps::Manual {
            eta_mu,
            eta_r,
            eta_p,
            eta_q,
            eta_x,
        } => {
            s.eta_mu = eta_mu;
            s.eta_r = eta_r;
            s.eta_p = eta_p;
            s.eta_q = eta_q;
            s.eta_x = eta_x / (1.0 + nu);
            s.eta_gamma = cfg.eta_gamma / (1.0 + nu).sqrt();
        }
        PrimalSteps::Theorem => {
            let xi = cfg.xi;
            let inv = |eta: f64, floor: f64| 8.0 * xi / (eta * floor * floor);
            s.eta_mu = 1.0
                / (inv(cfg.eta_lambda, cfg.floor_lambda)
                    + inv(cfg.eta_alpha, cfg.floor_alpha)
                    + inv(cfg.eta_beta, cfg.floor_beta));
            s.eta_x = 1.0 / (inv(cfg.eta_beta, cfg.floor_beta) + nu * inv(cfg.eta_gamma, cfg.floor_gamma));
            let slack = |eta: f64, floor: f64, w: Option<f64>| {
                let w = w.unwrap_or(default_w);
                eta * floor * floor / (32.0 * w * w * xi)
            };
            s.eta_r = slack(cfg.eta_lambda, cfg.floor_lambda, cfg.w_r);
            s.eta_p = slack(cfg.eta_alpha, cfg.floor_alpha, cfg.w_p);
            s.eta_q = slack(cfg.eta_gamma, cfg.floor_gamma, cfg.w_q);
        }
    }
    Ok(s)
}

/// The nine gradient blocks of `L̃_p` (of `L_p` when all `c` are zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub mu: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

/// Regularization weights `[c_λ, c_α, c_β, c_γ]`.
pub type RegWeights = [f64; 4];

impl Schedule {
    pub fn reg_weights(&self) -> RegWeights {
        [self.c_lambda, self.c_alpha, self.c_beta, self.c_gamma]
    }
}

fn grad_mu_l(y: &[f64], mu: &[f64], lambda: &[f64], alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    (0..mu.len())
        .map(|j| 2.0 * mu[j] - 2.0 * y[j] - lambda[j] + alpha[j] + beta[j])
        .collect()
}

fn grad_x(prob: &SaddleProblem, beta: &[Vec<f64>], gamma: &[f64], planes: &[CuttingPlane]) -> Vec<f64> {
    let mut g = vec![0.0; prob.dim];
    for (rows, b) in prob.regions.iter().zip(beta) {
        for (&r, bj) in rows.iter().zip(b) {
            g[r] -= bj;
        }
    }
    for (plane, &gs) in planes.iter().zip(gamma) {
        crate::linalg::axpy(gs, &plane.b, &mut g);
    }
    g
}

fn local_x<'a>(rows: &'a [usize], x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    rows.iter().map(move |&r| x[r])
}

/// All gradient blocks at the given state.
pub fn gradients(
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    planes: &[CuttingPlane],
    c: RegWeights,
) -> Gradients {
    let rho = prob.rho;
    let l = prob.workers();
    let mut g = Gradients {
        mu: Vec::with_capacity(l),
        r: Vec::with_capacity(l),
        p: Vec::with_capacity(l),
        q: Vec::with_capacity(planes.len()),
        x: grad_x(prob, &dual.beta, &dual.gamma, planes),
        lambda: Vec::with_capacity(l),
        alpha: Vec::with_capacity(l),
        beta: Vec::with_capacity(l),
        gamma: Vec::with_capacity(planes.len()),
    };
    for w in 0..l {
        let (mu, r, p) = (&primal.mu[w], &primal.r[w], &primal.p[w]);
        let (la, al, be) = (&dual.lambda[w], &dual.alpha[w], &dual.beta[w]);
        g.mu.push(grad_mu_l(&prob.y[w], mu, la, al, be));
        g.r.push(r.iter().zip(la).map(|(r, la)| 2.0 * la * r).collect());
        g.p.push(p.iter().zip(al).map(|(p, al)| 2.0 * al * p).collect());
        g.lambda.push(
            (0..mu.len())
                .map(|j| -mu[j] - rho + r[j] * r[j] - c[0] * la[j])
                .collect(),
        );
        g.alpha.push(
            (0..mu.len())
                .map(|j| mu[j] - rho + p[j] * p[j] - c[1] * al[j])
                .collect(),
        );
        g.beta.push(
            mu.iter()
                .zip(local_x(&prob.regions[w], &primal.x))
                .zip(be)
                .map(|((m, bx), b)| m - bx - c[2] * b)
                .collect(),
        );
    }
    for ((plane, &q), &ga) in planes.iter().zip(&primal.q).zip(&dual.gamma) {
        g.q.push(2.0 * ga * q);
        g.gamma.push(plane.value(&primal.x) + q * q - c[3] * ga);
    }
    g
}

/// `L_p`.
pub fn lagrangian(
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    planes: &[CuttingPlane],
) -> f64 {
    let rho = prob.rho;
    let mut total = prob.objective(&primal.mu);
    for w in 0..prob.workers() {
        let (mu, r, p) = (&primal.mu[w], &primal.r[w], &primal.p[w]);
        for j in 0..mu.len() {
            total += dual.lambda[w][j] * (-mu[j] - rho + r[j] * r[j]);
            total += dual.alpha[w][j] * (mu[j] - rho + p[j] * p[j]);
        }
        for ((m, bx), b) in mu.iter().zip(local_x(&prob.regions[w], &primal.x)).zip(&dual.beta[w]) {
            total += b * (m - bx);
        }
    }
    for ((plane, &q), &ga) in planes.iter().zip(&primal.q).zip(&dual.gamma) {
        total += ga * (plane.value(&primal.x) + q * q);
    }
    total
}

/// `L̃_p = L_p − Σ (c/2)‖dual‖²`.
pub fn regularized_lagrangian(
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    planes: &[CuttingPlane],
    c: RegWeights,
) -> f64 {
    let sq = |v: &[Vec<f64>]| v.iter().map(|b| norm_sq(b)).sum::<f64>();
    lagrangian(prob, primal, dual, planes)
        - 0.5 * c[0] * sq(&dual.lambda)
        - 0.5 * c[1] * sq(&dual.alpha)
        - 0.5 * c[2] * sq(&dual.beta)
        - 0.5 * c[3] * norm_sq(&dual.gamma)
}

fn blocks_sq(v: &[Vec<f64>]) -> f64 {
    v.iter().map(|b| norm_sq(b)).sum()
}

/// `‖∇L_p‖²` summed over all nine blocks.
pub fn grad_norm_sq(
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    planes: &[CuttingPlane],
) -> f64 {
    let g = gradients(prob, primal, dual, planes, [0.0; 4]);
    blocks_sq(&g.mu)
        + blocks_sq(&g.r)
        + blocks_sq(&g.p)
        + norm_sq(&g.q)
        + norm_sq(&g.x)
        + blocks_sq(&g.lambda)
        + blocks_sq(&g.alpha)
        + blocks_sq(&g.beta)
        + norm_sq(&g.gamma)
}

/// Squared norm of the projected gradient of `L_p`: primal blocks as in
/// [`grad_norm_sq`], and for each sign-constrained multiplier `d` the
/// residual `d − (d + ∇_d)⁺`. It vanishes exactly at KKT points of the
/// inequality form, including those where a slack sits at zero.
pub fn stationarity(
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    planes: &[CuttingPlane],
    project_beta: bool,
) -> f64 {
    let g = gradients(prob, primal, dual, planes, [0.0; 4]);
    let proj = |d: &[f64], gd: &[f64]| -> f64 {
        d.iter()
            .zip(gd)
            .map(|(d, g)| {
                let v = d - (d + g).max(0.0);
                v * v
            })
            .sum()
    };
    let proj_blocks = |d: &[Vec<f64>], gd: &[Vec<f64>]| -> f64 {
        d.iter().zip(gd).map(|(d, g)| proj(d, g)).sum()
    };
    let beta = if project_beta {
        proj_blocks(&dual.beta, &g.beta)
    } else {
        blocks_sq(&g.beta)
    };
    blocks_sq(&g.mu)
        + blocks_sq(&g.r)
        + blocks_sq(&g.p)
        + norm_sq(&g.q)
        + norm_sq(&g.x)
        + proj_blocks(&dual.lambda, &g.lambda)
        + proj_blocks(&dual.alpha, &g.alpha)
        + beta
        + proj(&dual.gamma, &g.gamma)
}

/// A worker's new local block.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerUpdate {
    pub mu: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

/// One descent step of worker `l` on its local block, evaluated at the
/// state it last received. Only the worker's own block and multipliers
/// enter its gradients.
pub fn worker_update(
    l: usize,
    prob: &SaddleProblem,
    primal: &PrimalState,
    dual: &DualState,
    sched: &Schedule,
) -> WorkerUpdate {
    let (mu, r, p) = (&primal.mu[l], &primal.r[l], &primal.p[l]);
    let (la, al, be) = (&dual.lambda[l], &dual.alpha[l], &dual.beta[l]);
    let gmu = grad_mu_l(&prob.y[l], mu, la, al, be);
    WorkerUpdate {
        mu: mu.iter().zip(&gmu).map(|(m, g)| m - sched.eta_mu * g).collect(),
        r: r.iter()
            .zip(la)
            .map(|(r, la)| r - sched.eta_r * 2.0 * la * r)
            .collect(),
        p: p.iter()
            .zip(al)
            .map(|(p, al)| p - sched.eta_p * 2.0 * al * p)
            .collect(),
    }
}

/// Master step: `q`, then `x`, then `λ, α, β` of the active workers, then
/// `γ`, each evaluated at the most recent values of its arguments.
pub fn master_update(
    prob: &SaddleProblem,
    primal: &mut PrimalState,
    dual: &mut DualState,
    planes: &[CuttingPlane],
    sched: &Schedule,
    active: &[bool],
    project_beta: bool,
) {
    let rho = prob.rho;
    for (q, &ga) in primal.q.iter_mut().zip(&dual.gamma) {
        *q -= sched.eta_q * 2.0 * ga * *q;
    }
    let gx = grad_x(prob, &dual.beta, &dual.gamma, planes);
    crate::linalg::axpy(-sched.eta_x, &gx, &mut primal.x);
    for w in (0..prob.workers()).filter(|&w| active[w]) {
        let (mu, r, p) = (&primal.mu[w], &primal.r[w], &primal.p[w]);
        for (j, la) in dual.lambda[w].iter_mut().enumerate() {
            let g = -mu[j] - rho + r[j] * r[j] - sched.c_lambda * *la;
            *la = (*la + sched.eta_lambda * g).max(0.0);
        }
        for (j, al) in dual.alpha[w].iter_mut().enumerate() {
            let g = mu[j] - rho + p[j] * p[j] - sched.c_alpha * *al;
            *al = (*al + sched.eta_alpha * g).max(0.0);
        }
        for ((be, m), bx) in dual.beta[w]
            .iter_mut()
            .zip(mu)
            .zip(local_x(&prob.regions[w], &primal.x))
        {
            let v = *be + sched.eta_beta * (m - bx - sched.c_beta * *be);
            *be = if project_beta { v.max(0.0) } else { v };
        }
    }
    for ((ga, plane), &q) in dual.gamma.iter_mut().zip(planes).zip(&primal.q) {
        let g = plane.value(&primal.x) + q * q - sched.c_gamma * *ga;
        *ga = (*ga + sched.eta_gamma * g).max(0.0);
    }
}

/// Fails if any iterate is non-finite or exceeds [`DIVERGENCE_LIMIT`].
pub fn divergence_guard(primal: &PrimalState, dual: &DualState, iteration: usize) -> Result<()> {
    let blocks: [(&'static str, &[Vec<f64>]); 6] = [
        ("mu", &primal.mu),
        ("r", &primal.r),
        ("p", &primal.p),
        ("lambda", &dual.lambda),
        ("alpha", &dual.alpha),
        ("beta", &dual.beta),
    ];
    let flat: [(&'static str, &[f64]); 3] =
        [("q", &primal.q), ("x", &primal.x), ("gamma", &dual.gamma)];
    let bad = |v: f64| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT;
    for (name, vs) in blocks {
        if let Some(&v) = vs.iter().flatten().find(|v| bad(**v)) {
            return Err(Error::Divergence {
                iteration,
                variable: name,
                value: v.abs(),
            });
        }
    }
    for (name, vs) in flat {
        if let Some(&v) = vs.iter().find(|v| bad(**v)) {
            return Err(Error::Divergence {
                iteration,
                variable: name,
                value: v.abs(),
            });
        }
    }
    Ok(())
}
