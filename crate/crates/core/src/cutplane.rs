//! Outer approximation of the robust feasible region by cutting planes
//! `bᵀx + κ ≤ 0`.

use std::io::Write;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::model::SystemModel;
use crate::uncertainty::{GradientMode, InnerSolverConfig};

/// Smallest admissible plane normal.
pub const MIN_NORMAL: f64 = 1e-12;

/// The affine inequality `bᵀx + κ ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CuttingPlane {
    pub b: Vec<f64>,
    pub kappa: f64,
}

impl CuttingPlane {
    /// Builds a plane, rejecting a vanishing normal.
    pub fn new(b: Vec<f64>, kappa: f64) -> Result<Self> {
        let nb = norm(&b);
        if !(nb >= MIN_NORMAL) {
            return Err(Error::DegeneratePlane { norm: nb });
        }
        Ok(Self { b, kappa })
    }

    /// `bᵀx + κ`; positive means violated.
    pub fn value(&self, x: &[f64]) -> f64 {
        dot(&self.b, x) + self.kappa
    }

    fn same_as(&self, other: &Self, tol: f64) -> bool {
        (self.kappa - other.kappa).abs() <= tol
            && self.b.iter().zip(&other.b).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// When and how many planes may be added.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneConfig {
    /// Check period `w`: planes are generated after iterations `k` with
    /// `(k + 1) mod w = 0`.
    pub check_period: usize,
    /// No planes are added after iteration `K₁`.
    pub freeze_after: usize,
    /// Capacity `P`.
    pub capacity: usize,
    /// Skip planes equal (to `1e-12`) to an existing plane. Only exact
    /// columns can produce them, since their surrogate is linear.
    pub dedupe: bool,
    pub gradient: GradientMode,
    /// A constraint counts as violated when `g_i(x) > δ_i + tolerance`.
    pub tolerance: f64,
    /// A check adds planes only if `x` violates no existing plane by more
    /// than this, so cuts are taken at points that are nearly feasible for
    /// the current polytope. Infinite disables the gate.
    pub gate: f64,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            check_period: 10,
            freeze_after: 200_000,
            capacity: 200,
            dedupe: true,
            gradient: GradientMode::ThroughIterates,
            tolerance: 1e-5,
            gate: 1e-4,
        }
    }
}

impl PlaneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.check_period == 0 {
            return Err(Error::InvalidConfig("check_period must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether iteration `k` (0-based) is a plane-generation iteration.
    pub fn is_check(&self, k: usize) -> bool {
        (k + 1).is_multiple_of(self.check_period) && k <= self.freeze_after
    }
}

/// The live plane set `𝒫^k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Polytope {
    planes: Vec<CuttingPlane>,
    capacity: usize,
}

impl Polytope {
    pub fn new(capacity: usize) -> Self {
        Self {
            planes: Vec::new(),
            capacity,
        }
    }

    /// Polytope holding `planes`; fails if they exceed `capacity`.
    pub fn from_planes(planes: Vec<CuttingPlane>, capacity: usize) -> Result<Self> {
        if planes.len() > capacity {
            return Err(Error::InvalidConfig(format!(
                "{} planes exceed capacity {capacity}",
                planes.len()
            )));
        }
        Ok(Self { planes, capacity })
    }

    pub fn planes(&self) -> &[CuttingPlane] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.planes.len() >= self.capacity
    }

    /// `ν = Σ_s ‖b_s‖²`.
    pub fn normal_mass(&self) -> f64 {
        self.planes.iter().map(|p| dot(&p.b, &p.b)).sum()
    }

    /// `max_s b_sᵀx + κ_s`, or `−∞` without planes.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.planes.iter().map(|p| p.value(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.planes.iter().all(|p| p.value(x) <= tol)
    }

    pub fn contains_plane(&self, plane: &CuttingPlane, tol: f64) -> bool {
        self.planes.iter().any(|p| p.same_as(plane, tol))
    }

    /// Columns `s, b_1..b_M, kappa`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let m = self.planes.first().map_or(0, |p| p.b.len());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["s".to_string()];
        header.extend((1..=m).map(|j| format!("b_{j}")));
        header.push("kappa".into());
        w.write_record(&header)?;
        for (s, p) in self.planes.iter().enumerate() {
            let mut rec = vec![(s + 1).to_string()];
            rec.extend(p.b.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", p.kappa));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whether robust constraint `i` is violated at `x`: `g_i(x) > δ_i`.
pub fn violated(model: &SystemModel, i: usize, x: &[f64], delta: f64, cfg: &InnerSolverConfig) -> bool {
    let (col, sign, _) = model.constraint(i);
    col.g_eval(sign, x, cfg) > delta
}

/// Linearization `g_i(x*) + ∇g_iᵀ(x − x*) ≤ δ_i` written as `bᵀx + κ ≤ 0`.
pub fn generate_plane(
    model: &SystemModel,
    i: usize,
    x_star: &[f64],
    delta: f64,
    cfg: &InnerSolverConfig,
    mode: GradientMode,
) -> Result<CuttingPlane> {
    let (col, sign, _) = model.constraint(i);
    let (g, b) = col.g_value_grad(sign, x_star, cfg, mode);
    let kappa = g - dot(&b, x_star) - delta;
    CuttingPlane::new(b, kappa)
}

/// Tests all `2N` constraints at `x` and returns a plane for each
/// violation, in constraint order.
pub fn separate(
    model: &SystemModel,
    x: &[f64],
    cfg: &InnerSolverConfig,
    mode: GradientMode,
    tolerance: f64,
) -> Vec<CuttingPlane> {
    let mut out = Vec::new();
    for i in 0..model.constraint_count() {
        let (col, sign, delta) = model.constraint(i);
        if col.g_eval(sign, x, cfg) <= delta + tolerance {
            continue;
        }
        let (g, b) = col.g_value_grad(sign, x, cfg, mode);
        let kappa = g - dot(&b, x) - delta;
        match CuttingPlane::new(b, kappa) {
            Ok(p) => out.push(p),
            Err(e) => debug!("constraint {i}: {e}, skipped"),
        }
    }
    out
}

/// Appends `new_planes` with a slack `q = sqrt(max(0, −(bᵀx + κ)))` and a
/// zero multiplier each, up to capacity. Returns how many were added.
pub fn update_sets(
    polytope: &mut Polytope,
    new_planes: Vec<CuttingPlane>,
    q: &mut Vec<f64>,
    gamma: &mut Vec<f64>,
    x: &[f64],
    dedupe: bool,
) -> usize {
    debug_assert_eq!(polytope.len(), q.len());
    debug_assert_eq!(polytope.len(), gamma.len());
    let mut added = 0;
    for plane in new_planes {
        if dedupe && polytope.contains_plane(&plane, 1e-12) {
            continue;
        }
        if polytope.is_full() {
            warn!(
                "plane capacity {} reached; further planes dropped",
                polytope.capacity
            );
            break;
        }
        q.push((-plane.value(x)).max(0.0).sqrt());
        gamma.push(0.0);
        polytope.planes.push(plane);
        added += 1;
    }
    added
}
