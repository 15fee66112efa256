//! Reference solvers used to validate the distributed solver, and the
//! exact-matrix baseline detector.
//!
//! `v_t` equals `‖y‖² − dist(y, C)²` where `C` is the box intersected with
//! the robust constraint sets, so the oracle computes the Euclidean
//! projection of `y` onto `C` with Dykstra's algorithm. Each robust set
//! `{x : aᵀx + p(x) ≤ δ}` is projected by bisection on the multiplier of
//! its proximal map. Protection functions are re-derived here from the
//! set parameters rather than taken from [`crate::uncertainty`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq};
use crate::model::SystemModel;
use crate::uncertainty::UncertaintySet;

/// Dykstra settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub max_cycles: usize,
    /// Stop when a full cycle moves the iterate less than this.
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_cycles: 200_000,
            tol: 1e-13,
        }
    }
}

/// Closed-form protection of one support block, sign already applied.
#[derive(Clone, Debug)]
enum Protection {
    Ellipsoid { radius: f64 },
    DNorm { gamma: usize, uhat: f64 },
    /// Support function of the box `[lo, hi]` of deviations.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Protection {
    fn value(&self, z: &[f64]) -> f64 {
        match self {
            Self::Ellipsoid { radius } => radius * norm(z),
            Self::DNorm { gamma, uhat } => {
                let mut a: Vec<f64> = z.iter().map(|v| v.abs()).collect();
                a.sort_by(|x, y| y.total_cmp(x));
                uhat * a.iter().take(*gamma).sum::<f64>()
            }
            Self::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (h * v).max(l * v))
                .sum(),
        }
    }

    /// `prox_{t p}(v)` via the Moreau identity `v − t·P_Ω(v/t)` where `p`
    /// is the support function of `Ω`.
    fn prox(&self, t: f64, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Ellipsoid { radius } => {
                let nv = norm(v);
                let shrink = if nv > 0.0 { (1.0 - t * radius / nv).max(0.0) } else { 0.0 };
                v.iter().map(|x| x * shrink).collect()
            }
            Self::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&x, (&l, &h))| {
                    if x > t * h {
                        x - t * h
                    } else if x < t * l {
                        x - t * l
                    } else {
                        0.0
                    }
                })
                .collect(),
            Self::DNorm { gamma, uhat } => {
                let p = project_linf_l1(v, t * uhat, t * uhat * *gamma as f64);
                v.iter().zip(p).map(|(x, q)| x - q).collect()
            }
        }
    }
}

/// Projection onto `{u : ‖u‖∞ ≤ a, ‖u‖₁ ≤ b}`.
fn project_linf_l1(v: &[f64], a: f64, b: f64) -> Vec<f64> {
    let clip = |theta: f64| -> Vec<f64> {
        v.iter()
            .map(|x| x.signum() * (x.abs() - theta).clamp(0.0, a))
            .collect()
    };
    let l1 = |u: &[f64]| u.iter().map(|x| x.abs()).sum::<f64>();
    let u0 = clip(0.0);
    if l1(&u0) <= b {
        return u0;
    }
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if l1(&clip(mid)) > b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(hi)
}

/// One robust set `{x : aᵀx + p(x_S) ≤ δ}`.
#[derive(Clone, Debug)]
struct RobustSet {
    a: Vec<f64>,
    rows: Vec<usize>,
    protection: Option<Protection>,
    delta: f64,
}

impl RobustSet {
    fn value(&self, x: &[f64]) -> f64 {
        let lin = dot(&self.a, x);
        match &self.protection {
            None => lin,
            Some(p) => {
                let z: Vec<f64> = self.rows.iter().map(|&r| x[r]).collect();
                lin + p.value(&z)
            }
        }
    }

    fn prox(&self, t: f64, w: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = w.iter().zip(&self.a).map(|(w, a)| w - t * a).collect();
        if let Some(p) = &self.protection {
            let z: Vec<f64> = self.rows.iter().map(|&r| v[r]).collect();
            for (&r, zr) in self.rows.iter().zip(p.prox(t, &z)) {
                v[r] = zr;
            }
        }
        v
    }

    fn project(&self, w: &[f64]) -> Vec<f64> {
        if self.value(w) <= self.delta {
            return w.to_vec();
        }
        if self.protection.is_none() {
            let s = (dot(&self.a, w) - self.delta) / norm_sq(&self.a);
            return w.iter().zip(&self.a).map(|(w, a)| w - s * a).collect();
        }
        let mut hi = 1.0;
        while self.value(&self.prox(hi, w)) > self.delta && hi < 1e12 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.value(&self.prox(mid, w)) > self.delta {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        self.prox(hi, w)
    }
}

/// Recognizes `{h : A h ≤ c}` whose rows are `±e_j` (each coordinate at
/// most once per sign) and returns the bounds.
fn box_bounds(a: &DMatrix<f64>, c: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = a.ncols();
    let mut lo = vec![f64::NEG_INFINITY; m];
    let mut hi = vec![f64::INFINITY; m];
    for r in 0..a.nrows() {
        let nz: Vec<usize> = (0..m).filter(|&j| a[(r, j)] != 0.0).collect();
        if nz.len() != 1 {
            return None;
        }
        let j = nz[0];
        let s = a[(r, j)];
        if s > 0.0 {
            hi[j] = hi[j].min(c[r] / s);
        } else {
            lo[j] = lo[j].max(c[r] / s);
        }
    }
    if lo.iter().chain(&hi).all(|v| v.is_finite()) {
        Some((lo, hi))
    } else {
        None
    }
}

fn robust_sets(model: &SystemModel) -> Result<Vec<RobustSet>> {
    let mut sets = Vec::with_capacity(model.constraint_count());
    for i in 0..model.constraint_count() {
        let (col, sign, delta) = model.constraint(i);
        let a: Vec<f64> = col.nominal().iter().map(|h| sign * h).collect();
        let (rows, protection) = match col.uncertainty() {
            None => (Vec::new(), None),
            Some(unc) => {
                let center = unc.set.center();
                let p = match unc.set.set() {
                    UncertaintySet::Ellipsoid { radius } => Protection::Ellipsoid { radius: *radius },
                    UncertaintySet::DNorm { gamma, uhat } => Protection::DNorm {
                        gamma: *gamma,
                        uhat: *uhat,
                    },
                    UncertaintySet::Polyhedron { a, c } => {
                        let (lo, hi) = box_bounds(a, c).ok_or_else(|| {
                            Error::Oracle("only box-shaped polyhedra are supported".into())
                        })?;
                        let dlo = lo.iter().zip(center).map(|(l, h)| l - h);
                        let dhi = hi.iter().zip(center).map(|(u, h)| u - h);
                        // p(−z) is the support function of the negated box
                        if sign > 0.0 {
                            Protection::Box { lo: dlo.collect(), hi: dhi.collect() }
                        } else {
                            Protection::Box {
                                lo: dhi.map(|v| -v).collect(),
                                hi: dlo.map(|v| -v).collect(),
                            }
                        }
                    }
                    UncertaintySet::General { .. } => {
                        return Err(Error::Oracle("general sets have no closed form".into()))
                    }
                };
                (unc.rows.clone(), Some(p))
            }
        };
        sets.push(RobustSet {
            a,
            rows,
            protection,
            delta,
        });
    }
    Ok(sets)
}

/// A Euclidean projection onto a closed convex set.
pub type Projection<'a> = dyn Fn(&[f64]) -> Vec<f64> + 'a;

/// Dykstra's alternating projection onto the intersection of convex sets.
pub fn dykstra(
    y: &[f64],
    projections: &[&Projection<'_>],
    cfg: &OracleConfig,
) -> Vec<f64> {
    let n = y.len();
    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; n]; projections.len()];
    for _ in 0..cfg.max_cycles {
        let start = x.clone();
        for (proj, inc) in projections.iter().zip(incr.iter_mut()) {
            let w: Vec<f64> = x.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
            let p = proj(&w);
            for j in 0..n {
                inc[j] = w[j] - p[j];
            }
            x = p;
        }
        let moved: f64 = x.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved <= cfg.tol {
            break;
        }
    }
    x
}

fn clip_box(rho: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    move |w: &[f64]| w.iter().map(|v| v.clamp(-rho, rho)).collect()
}

/// Maximizer and value of `2xᵀy − ‖x‖²` over the box and the exact
/// robust constraints.
pub fn oracle_vt(model: &SystemModel, y: &[f64], cfg: &OracleConfig) -> Result<(f64, Vec<f64>)> {
    crate::error::check_dim("observation", model.m(), y.len())?;
    let sets = robust_sets(model)?;
    let boxp = clip_box(model.rho_u());
    let set_projs: Vec<Box<Projection<'_>>> = sets
        .iter()
        .map(|s| Box::new(move |w: &[f64]| s.project(w)) as Box<Projection<'_>>)
        .collect();
    let mut projs: Vec<&Projection<'_>> = vec![&boxp];
    projs.extend(set_projs.iter().map(|b| b.as_ref()));
    let x = dykstra(y, &projs, cfg);
    Ok((2.0 * dot(&x, y) - norm_sq(&x), x))
}

/// Largest dimension accepted by [`oracle_vt_grid`].
pub const GRID_MAX_DIM: usize = 6;

/// Exhaustive scan of the box with spacing `step`, keeping feasible points.
pub fn oracle_vt_grid(model: &SystemModel, y: &[f64], step: f64) -> Result<f64> {
    let m = model.m();
    if m > GRID_MAX_DIM {
        return Err(Error::Oracle(format!("grid oracle limited to M <= {GRID_MAX_DIM}, got {m}")));
    }
    let sets = robust_sets(model)?;
    let rho = model.rho_u();
    let per_axis = (2.0 * rho / step).round() as usize + 1;
    let total = per_axis
        .checked_pow(m as u32)
        .filter(|t| *t <= 50_000_000)
        .ok_or_else(|| Error::Oracle("grid too large".into()))?;
    let mut best = f64::NEG_INFINITY;
    let mut x = vec![0.0; m];
    for idx in 0..total {
        let mut rem = idx;
        for xj in x.iter_mut() {
            *xj = -rho + (rem % per_axis) as f64 * step;
            rem /= per_axis;
        }
        if sets.iter().all(|s| s.value(&x) <= s.delta) {
            best = best.max(2.0 * dot(&x, y) - norm_sq(&x));
        }
    }
    Ok(best)
}

/// `max_{lo ≤ h ≤ hi} (h − h̄)ᵀx` by enumerating the `2^m` corners.
pub fn oracle_protection_polyhedron(
    a: &DMatrix<f64>,
    c: &[f64],
    center: &[f64],
    x: &[f64],
) -> Result<f64> {
    let (lo, hi) = box_bounds(a, c).ok_or_else(|| {
        Error::Oracle("vertex oracle supports box-shaped polyhedra only".into())
    })?;
    let m = lo.len();
    if m > 20 {
        return Err(Error::Oracle("too many box corners".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for corner in 0u32..(1 << m) {
        let v: f64 = (0..m)
            .map(|j| {
                let h = if corner >> j & 1 == 1 { hi[j] } else { lo[j] };
                (h - center[j]) * x[j]
            })
            .sum();
        best = best.max(v);
    }
    Ok(best)
}

/// `v_t` of a detector that trusts `h` exactly: the value over
/// `{x in the box : hᵀx = 0}`.
pub struct ExactHBaseline {
    proj: DMatrix<f64>,
    rho: f64,
    cfg: OracleConfig,
}

impl ExactHBaseline {
    pub fn new(h: &DMatrix<f64>, rho: f64) -> Self {
        Self {
            proj: crate::linalg::complement_projector(h),
            rho,
            cfg: OracleConfig {
                max_cycles: 20_000,
                tol: 1e-10,
            },
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let boxp = clip_box(self.rho);
        let sub = |w: &[f64]| crate::linalg::mat_vec(&self.proj, w);
        let x = dykstra(y, &[&boxp, &sub], &self.cfg);
        2.0 * dot(&x, y) - norm_sq(&x)
    }
}
