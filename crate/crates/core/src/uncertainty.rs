//! Column uncertainty sets, their protection functions, and the
//! fixed-budget augmented-Lagrangian estimate of the worst-case column.
//!
//! A set is always expressed relative to a nominal column `h̄`: the
//! protection function is `p(x) = max_{h ∈ 𝒰} (h − h̄)ᵀx`. Every set has a
//! differentiable-constraint encoding `c_u(h) ≤ 0` consumed by the inner
//! solver; ellipsoids and D-norm sets additionally have closed forms.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm};

/// A user-supplied differentiable constraint `c(h) ≤ 0` for the general
/// uncertainty variant.
pub trait SmoothConstraint: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, h: &[f64]) -> f64;
    fn gradient(&self, h: &[f64], out: &mut [f64]);
    /// Hessian of `c` at `h`, written into `out` (dim × dim). Affine
    /// constraints leave it zero.
    fn hessian(&self, h: &[f64], out: &mut DMatrix<f64>);
}

/// Shape of an uncertainty set around its nominal column.
#[derive(Clone)]
pub enum UncertaintySet {
    /// `{h : A h ≤ c}`. Must be bounded and contain the nominal column.
    Polyhedron { a: DMatrix<f64>, c: Vec<f64> },
    /// `{h̄ + u : ‖u‖₂ ≤ radius}`.
    Ellipsoid { radius: f64 },
    /// Deviations of magnitude at most `uhat` on at most `gamma` coordinates.
    DNorm { gamma: usize, uhat: f64 },
    /// `{h : c_u(h) ≤ 0, u = 1..U}`.
    General {
        constraints: Vec<Arc<dyn SmoothConstraint>>,
    },
}

impl fmt::Debug for UncertaintySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Polyhedron { a, c } => f
                .debug_struct("Polyhedron")
                .field("rows", &a.nrows())
                .field("cols", &a.ncols())
                .field("c", c)
                .finish(),
            Self::Ellipsoid { radius } => {
                f.debug_struct("Ellipsoid").field("radius", radius).finish()
            }
            Self::DNorm { gamma, uhat } => f
                .debug_struct("DNorm")
                .field("gamma", gamma)
                .field("uhat", uhat)
                .finish(),
            Self::General { constraints } => f
                .debug_struct("General")
                .field("constraints", &constraints.len())
                .finish(),
        }
    }
}

/// Largest dimension for which the D-norm hull is encoded explicitly
/// (the encoding has `2^m` sign rows).
pub const DNORM_MAX_ENCODED_DIM: usize = 12;

/// Largest dimension for which polyhedral protection is solved by vertex
/// enumeration.
pub const VERTEX_ENUM_MAX_DIM: usize = 8;

/// One differentiable constraint of the canonical encoding.
#[derive(Clone)]
enum Constraint {
    /// `aᵀh − b ≤ 0`
    Affine { a: Vec<f64>, b: f64 },
    /// `‖h − center‖² − r² ≤ 0`
    Ball { center: Vec<f64>, r2: f64 },
    Custom(Arc<dyn SmoothConstraint>),
}

impl Constraint {
    fn value(&self, h: &[f64]) -> f64 {
        match self {
            Self::Affine { a, b } => dot(a, h) - b,
            Self::Ball { center, r2 } => {
                h.iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
                    - r2
            }
            Self::Custom(c) => c.value(h),
        }
    }

    fn gradient(&self, h: &[f64], out: &mut [f64]) {
        match self {
            Self::Affine { a, .. } => out.copy_from_slice(a),
            Self::Ball { center, .. } => {
                for ((o, x), c) in out.iter_mut().zip(h).zip(center) {
                    *o = 2.0 * (x - c);
                }
            }
            Self::Custom(c) => c.gradient(h, out),
        }
    }

    /// Adds `scale · ∇²c(h) · v` to `out`.
    fn hessian_mul_add(&self, h: &[f64], scale: f64, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        match self {
            Self::Affine { .. } => {}
            Self::Ball { .. } => *out += v * (2.0 * scale),
            Self::Custom(c) => {
                let n = h.len();
                let mut hess = DMatrix::zeros(n, n);
                c.hessian(h, &mut hess);
                *out += hess * v * scale;
            }
        }
    }
}

/// Parameters of the fixed-budget inner solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSolverConfig {
    /// Number of inner iterations.
    pub iterations: usize,
    /// Augmented-Lagrangian penalty.
    pub sigma: f64,
    pub eta_h: f64,
    pub eta_phi: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            sigma: 1.0,
            eta_h: 0.1,
            eta_phi: 1.0,
        }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("inner solver needs at least one iteration".into()));
        }
        if !(self.sigma > 0.0 && self.eta_h > 0.0 && self.eta_phi > 0.0) {
            return Err(Error::InvalidConfig(
                "inner solver sigma, eta_h and eta_phi must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How `∂g/∂x` treats the dependence of the inner iterates on `x`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact derivative of `g`, differentiating through all inner iterates.
    #[default]
    ThroughIterates,
    /// Treat the final worst-case column as constant: `∂g/∂x = h_D`.
    Frozen,
}

/// An uncertainty set attached to its nominal column, with the canonical
/// constraint encoding precomputed.
#[derive(Clone, Debug)]
pub struct ColumnSet {
    center: Vec<f64>,
    set: UncertaintySet,
    encoding: Vec<Constraint>,
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { a, b } => write!(f, "Affine({a:?} <= {b})"),
            Self::Ball { r2, .. } => write!(f, "Ball(r2 = {r2})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Result of the inner solver: the final column estimate and multipliers.
#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub h: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ColumnSet {
    /// Validates the set against its nominal column and builds the
    /// differentiable encoding.
    pub fn new(center: Vec<f64>, set: UncertaintySet) -> Result<Self> {
        let m = center.len();
        if m == 0 {
            return Err(Error::InvalidSet("empty nominal column".into()));
        }
        let encoding = match &set {
            UncertaintySet::Ellipsoid { radius } => {
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidSet(format!("ellipsoid radius {radius} < 0")));
                }
                vec![Constraint::Ball {
                    center: center.clone(),
                    r2: radius * radius,
                }]
            }
            UncertaintySet::DNorm { gamma, uhat } => {
                if *gamma > m {
                    return Err(Error::InvalidSet(format!(
                        "D-norm budget {gamma} exceeds dimension {m}"
                    )));
                }
                if !(*uhat >= 0.0) {
                    return Err(Error::InvalidSet(format!("D-norm deviation {uhat} < 0")));
                }
                dnorm_encoding(&center, *gamma, *uhat)
            }
            UncertaintySet::Polyhedron { a, c } => {
                check_dim("polyhedron columns", m, a.ncols())?;
                check_dim("polyhedron rhs", a.nrows(), c.len())?;
                let slack = crate::linalg::mat_vec(a, &center);
                if let Some((row, _)) = slack
                    .iter()
                    .zip(c)
                    .enumerate()
                    .find(|(_, (ah, ci))| **ah > **ci + 1e-12)
                {
                    return Err(Error::InvalidSet(format!(
                        "polyhedron does not contain its nominal column (row {row} violated)"
                    )));
                }
                (0..a.nrows())
                    .map(|r| Constraint::Affine {
                        a: a.row(r).iter().copied().collect(),
                        b: c[r],
                    })
                    .collect()
            }
            UncertaintySet::General { constraints } => {
                for c in constraints {
                    check_dim("general constraint", m, c.dim())?;
                    if c.value(&center) > 1e-12 {
                        return Err(Error::InvalidSet(
                            "general set does not contain its nominal column".into(),
                        ));
                    }
                }
                constraints.iter().cloned().map(Constraint::Custom).collect()
            }
        };
        Ok(Self {
            center,
            set,
            encoding,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn set(&self) -> &UncertaintySet {
        &self.set
    }

    pub fn constraint_count(&self) -> usize {
        self.encoding.len()
    }

    /// Exact protection `max_{h ∈ 𝒰} (h − h̄)ᵀx`.
    pub fn protection_exact(&self, x: &[f64]) -> Result<f64> {
        check_dim("protection argument", self.dim(), x.len())?;
        Ok(match &self.set {
            UncertaintySet::Ellipsoid { radius } => radius * norm(x),
            UncertaintySet::DNorm { gamma, uhat } => uhat * top_k_abs_sum(x, *gamma),
            UncertaintySet::Polyhedron { a, c } if self.dim() <= VERTEX_ENUM_MAX_DIM => {
                let best = polyhedron_vertex_max(a, c, x)?;
                best - dot(&self.center, x)
            }
            _ => {
                let cfg = InnerSolverConfig {
                    iterations: 20_000,
                    ..InnerSolverConfig::default()
                };
                let sol = self.alm_inner_solve(x, &cfg, None);
                sol.h
                    .iter()
                    .zip(&self.center)
                    .zip(x)
                    .map(|((h, c), xi)| (h - c) * xi)
                    .sum()
            }
        })
    }

    /// Runs exactly `cfg.iterations` alternating steps of descent on the
    /// (sign-flipped) augmented Lagrangian in `h` and projected ascent in
    /// the multipliers, starting from `h_init` (the nominal column when
    /// `None`) with zero multipliers.
    pub fn alm_inner_solve(
        &self,
        x: &[f64],
        cfg: &InnerSolverConfig,
        h_init: Option<&[f64]>,
    ) -> InnerSolution {
        let m = self.dim();
        let mut h = h_init.map_or_else(|| self.center.clone(), <[f64]>::to_vec);
        let mut phi = vec![0.0; self.encoding.len()];
        let mut grad = vec![0.0; m];
        let mut cgrad = vec![0.0; m];
        for _ in 0..cfg.iterations {
            grad.iter_mut().zip(x).for_each(|(g, xi)| *g = -xi);
            for (c, &ph) in self.encoding.iter().zip(&phi) {
                let a = ph + cfg.sigma * c.value(&h);
                if a > 0.0 {
                    c.gradient(&h, &mut cgrad);
                    crate::linalg::axpy(a, &cgrad, &mut grad);
                }
            }
            crate::linalg::axpy(-cfg.eta_h, &grad, &mut h);
            for (c, ph) in self.encoding.iter().zip(phi.iter_mut()) {
                *ph = (*ph + cfg.eta_phi * c.value(&h)).max(0.0);
            }
        }
        InnerSolution { h, phi }
    }

    /// Inner solve together with the Jacobian `∂h_D/∂x` accumulated in
    /// forward mode through every iteration.
    pub fn alm_inner_solve_with_jacobian(
        &self,
        x: &[f64],
        cfg: &InnerSolverConfig,
    ) -> (InnerSolution, DMatrix<f64>) {
        let m = self.dim();
        let u = self.encoding.len();
        let mut h = self.center.clone();
        let mut phi = vec![0.0; u];
        let mut jac = DMatrix::<f64>::zeros(m, m);
        // rows: ∂φ_u/∂x
        let mut kphi = DMatrix::<f64>::zeros(u, m);
        let mut grad = vec![0.0; m];
        let mut cgrad = vec![0.0; m];
        let mut djac = DMatrix::<f64>::zeros(m, m);
        let mut cg_col = DVector::<f64>::zeros(m);
        for _ in 0..cfg.iterations {
            grad.iter_mut().zip(x).for_each(|(g, xi)| *g = -xi);
            djac.fill(0.0);
            djac.fill_diagonal(-1.0);
            for (ui, c) in self.encoding.iter().enumerate() {
                let a = phi[ui] + cfg.sigma * c.value(&h);
                if a > 0.0 {
                    c.gradient(&h, &mut cgrad);
                    crate::linalg::axpy(a, &cgrad, &mut grad);
                    cg_col.copy_from_slice(&cgrad);
                    // ∂a/∂x = ∂φ_u/∂x + σ ∇cᵀ J
                    let da = kphi.row(ui) + (cg_col.transpose() * &jac) * cfg.sigma;
                    djac += &cg_col * da;
                    c.hessian_mul_add(&h, a, &jac, &mut djac);
                }
            }
            crate::linalg::axpy(-cfg.eta_h, &grad, &mut h);
            jac -= &djac * cfg.eta_h;
            for (ui, c) in self.encoding.iter().enumerate() {
                let pre = phi[ui] + cfg.eta_phi * c.value(&h);
                if pre > 0.0 {
                    phi[ui] = pre;
                    c.gradient(&h, &mut cgrad);
                    cg_col.copy_from_slice(&cgrad);
                    let row = kphi.row(ui) + (cg_col.transpose() * &jac) * cfg.eta_phi;
                    kphi.set_row(ui, &row);
                } else {
                    phi[ui] = 0.0;
                    kphi.row_mut(ui).fill(0.0);
                }
            }
        }
        (InnerSolution { h, phi }, jac)
    }

    /// `(h_D − h̄)ᵀx`, the inner solver's estimate of the protection.
    pub fn protection_estimate(&self, x: &[f64], cfg: &InnerSolverConfig) -> f64 {
        let sol = self.alm_inner_solve(x, cfg, None);
        sol.h
            .iter()
            .zip(&self.center)
            .zip(x)
            .map(|((h, c), xi)| (h - c) * xi)
            .sum()
    }

    /// Value and gradient of the estimated protection `(h_D(x) − h̄)ᵀx`.
    pub fn protection_estimate_grad(
        &self,
        x: &[f64],
        cfg: &InnerSolverConfig,
        mode: GradientMode,
    ) -> (f64, Vec<f64>) {
        match mode {
            GradientMode::Frozen => {
                let sol = self.alm_inner_solve(x, cfg, None);
                let dev = crate::linalg::sub(&sol.h, &self.center);
                (dot(&dev, x), dev)
            }
            GradientMode::ThroughIterates => {
                let (sol, jac) = self.alm_inner_solve_with_jacobian(x, cfg);
                let dev = crate::linalg::sub(&sol.h, &self.center);
                let jtx = jac.transpose() * DVector::from_column_slice(x);
                let grad = dev.iter().zip(jtx.iter()).map(|(d, j)| d + j).collect();
                (dot(&dev, x), grad)
            }
        }
    }
}

/// An uncertainty set acting on a subset of the rows of one column. The
/// set's nominal center is the column restricted to `rows`.
#[derive(Clone, Debug)]
pub struct UncertainColumn {
    pub rows: Vec<usize>,
    pub set: ColumnSet,
}

/// One column of the measurement matrix as seen by the robust constraints
/// `s·h̄ᵀx + p(s·x) ≤ δ`, `s = ±1`.
#[derive(Clone, Debug)]
pub struct RobustColumn {
    nominal: Vec<f64>,
    uncertainty: Option<UncertainColumn>,
}

impl RobustColumn {
    /// Exactly known column (`p ≡ 0`).
    pub fn exact(nominal: Vec<f64>) -> Self {
        Self {
            nominal,
            uncertainty: None,
        }
    }

    /// Column whose entries on `rows` range over `set` around the nominal
    /// values.
    pub fn uncertain(nominal: Vec<f64>, rows: Vec<usize>, set: UncertaintySet) -> Result<Self> {
        let m = nominal.len();
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::InvalidSet(format!("support row {bad} out of range {m}")));
        }
        let mut sorted = rows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != rows.len() {
            return Err(Error::InvalidSet("duplicate support rows".into()));
        }
        let center = rows.iter().map(|&r| nominal[r]).collect();
        let set = ColumnSet::new(center, set)?;
        Ok(Self {
            nominal,
            uncertainty: Some(UncertainColumn { rows, set }),
        })
    }

    pub fn nominal(&self) -> &[f64] {
        &self.nominal
    }

    pub fn uncertainty(&self) -> Option<&UncertainColumn> {
        self.uncertainty.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        self.uncertainty.is_none()
    }

    fn local(&self, unc: &UncertainColumn, sign: f64, x: &[f64]) -> Vec<f64> {
        unc.rows.iter().map(|&r| sign * x[r]).collect()
    }

    /// `s·h̄ᵀx + p(s·x)` with the exact protection.
    pub fn g_exact(&self, sign: f64, x: &[f64]) -> Result<f64> {
        check_dim("constraint argument", self.nominal.len(), x.len())?;
        let lin = sign * dot(&self.nominal, x);
        match &self.uncertainty {
            None => Ok(lin),
            Some(unc) => Ok(lin + unc.set.protection_exact(&self.local(unc, sign, x))?),
        }
    }

    /// Surrogate `g(x) = h_Dᵀ(s·x)` built from the inner solver's estimate.
    pub fn g_eval(&self, sign: f64, x: &[f64], cfg: &InnerSolverConfig) -> f64 {
        let lin = sign * dot(&self.nominal, x);
        match &self.uncertainty {
            None => lin,
            Some(unc) => lin + unc.set.protection_estimate(&self.local(unc, sign, x), cfg),
        }
    }

    /// Value and gradient of the surrogate.
    pub fn g_value_grad(
        &self,
        sign: f64,
        x: &[f64],
        cfg: &InnerSolverConfig,
        mode: GradientMode,
    ) -> (f64, Vec<f64>) {
        let mut grad = crate::linalg::scaled(sign, &self.nominal);
        let mut val = sign * dot(&self.nominal, x);
        if let Some(unc) = &self.uncertainty {
            let (p, gp) = unc
                .set
                .protection_estimate_grad(&self.local(unc, sign, x), cfg, mode);
            val += p;
            for (&r, g) in unc.rows.iter().zip(gp) {
                grad[r] += sign * g;
            }
        }
        (val, grad)
    }
}

/// Sum of the `k` largest magnitudes of `x`.
pub fn top_k_abs_sum(x: &[f64], k: usize) -> f64 {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    mags.iter().take(k).sum()
}

/// Convex hull of the D-norm set: coordinatewise `|u_j| ≤ û` plus
/// `Σ s_j u_j ≤ Γû` for every sign pattern `s`.
fn dnorm_encoding(center: &[f64], gamma: usize, uhat: f64) -> Vec<Constraint> {
    let m = center.len();
    let mut rows = Vec::with_capacity(2 * m + (1 << m.min(DNORM_MAX_ENCODED_DIM)));
    for j in 0..m {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; m];
            a[j] = s;
            rows.push(Constraint::Affine {
                a,
                b: uhat + s * center[j],
            });
        }
    }
    if gamma < m && m <= DNORM_MAX_ENCODED_DIM {
        for pattern in 0u32..(1 << m) {
            let a: Vec<f64> = (0..m)
                .map(|j| if pattern >> j & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let b = gamma as f64 * uhat + dot(&a, center);
            rows.push(Constraint::Affine { a, b });
        }
    }
    rows
}

/// `max_{A h ≤ c} hᵀx` by enumerating basic solutions: every choice of `m`
/// linearly independent rows whose intersection point is feasible.
fn polyhedron_vertex_max(a: &DMatrix<f64>, c: &[f64], x: &[f64]) -> Result<f64> {
    let m = a.ncols();
    let rows = a.nrows();
    if rows < m {
        return Err(Error::InvalidSet(
            "polyhedron has fewer rows than dimensions and cannot be bounded".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    let mut pick: Vec<usize> = (0..m).collect();
    loop {
        let sub = DMatrix::from_fn(m, m, |i, j| a[(pick[i], j)]);
        let rhs = DVector::from_fn(m, |i, _| c[pick[i]]);
        if let Some(v) = sub.lu().solve(&rhs) {
            if v.iter().all(|t| t.is_finite()) {
                let feasible = (0..rows).all(|r| {
                    let lhs: f64 = (0..m).map(|j| a[(r, j)] * v[j]).sum();
                    lhs <= c[r] + 1e-9 * (1.0 + c[r].abs())
                });
                if feasible {
                    best = best.max(dot(v.as_slice(), x));
                }
            }
        }
        // next combination
        let mut i = m;
        loop {
            if i == 0 {
                return if best.is_finite() {
                    Ok(best)
                } else {
                    Err(Error::InvalidSet("polyhedron has no vertices".into()))
                };
            }
            i -= 1;
            if pick[i] < rows - m + i {
                pick[i] += 1;
                for j in i + 1..m {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ellipsoid(radius: f64) -> ColumnSet {
        ColumnSet::new(vec![-1.0, 0.1, 0.3, -0.2, 0.0], UncertaintySet::Ellipsoid { radius }).unwrap()
    }

    fn box_poly(lo: &[f64], hi: &[f64]) -> UncertaintySet {
        let m = lo.len();
        let mut a = DMatrix::zeros(2 * m, m);
        let mut c = vec![0.0; 2 * m];
        for j in 0..m {
            a[(j, j)] = 1.0;
            a[(m + j, j)] = -1.0;
            c[j] = hi[j];
            c[m + j] = -lo[j];
        }
        UncertaintySet::Polyhedron { a, c }
    }

    #[test]
    fn closed_forms() {
        let e = ColumnSet::new(vec![0.0, 0.0], UncertaintySet::Ellipsoid { radius: 1.0 }).unwrap();
        assert_eq!(e.protection_exact(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(ellipsoid(0.36).protection_exact(&[0.0; 5]).unwrap(), 0.0);
        let d = ColumnSet::new(vec![0.0; 5], UncertaintySet::DNorm { gamma: 4, uhat: 0.5 }).unwrap();
        assert_eq!(d.protection_exact(&[1.0; 5]).unwrap(), 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(
            ellipsoid(0.36).protection_exact(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_polyhedron_without_center() {
        let set = box_poly(&[1.0], &[2.0]);
        assert!(ColumnSet::new(vec![0.0], set).is_err());
    }

    #[test]
    fn vertex_enumeration_on_interval() {
        let set = ColumnSet::new(vec![0.5], box_poly(&[-1.0], &[2.0])).unwrap();
        assert_abs_diff_eq!(set.protection_exact(&[1.0]).unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(set.protection_exact(&[-1.0]).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn inner_solver_trivial_budgets() {
        let set = ellipsoid(0.36);
        let cfg = InnerSolverConfig::default();
        let sol = set.alm_inner_solve(&[0.0; 5], &cfg, None);
        assert_eq!(sol.h, set.center());
        let zero = InnerSolverConfig {
            iterations: 0,
            ..cfg
        };
        let sol = set.alm_inner_solve(&[1.0, 2.0, 3.0, 4.0, 5.0], &zero, None);
        assert_eq!(sol.h, set.center());
    }

    #[test]
    fn inner_solver_reaches_ellipsoid_closed_form() {
        let set = ellipsoid(0.36);
        let cfg = InnerSolverConfig {
            iterations: 500,
            ..InnerSolverConfig::default()
        };
        let p = set.protection_estimate(&[1.0, 0.0, 0.0, 0.0, 0.0], &cfg);
        assert!((p - 0.36).abs() < 1e-3, "p = {p}");
    }

    #[test]
    fn jacobian_free_gradient_at_zero_budget() {
        let set = ellipsoid(0.36);
        let cfg = InnerSolverConfig {
            iterations: 0,
            ..InnerSolverConfig::default()
        };
        let (v, g) = set.protection_estimate_grad(&[0.3, -0.2, 0.1, 0.0, 1.0], &cfg, GradientMode::ThroughIterates);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&gi| gi == 0.0));
    }

    #[test]
    fn dnorm_hull_matches_top_gamma() {
        let set = ColumnSet::new(vec![0.2, -0.1, 0.0], UncertaintySet::DNorm { gamma: 2, uhat: 0.5 }).unwrap();
        // 6 box rows + 8 sign rows
        assert_eq!(set.constraint_count(), 14);
    }
}
