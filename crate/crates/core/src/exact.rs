//! Centralized solution of the robust `v_t` problem with a conic
//! interior-point method.
//!
//! `v_t = ‖y‖² − min_{x ∈ C} ‖x − y‖²`, where `C` is the box intersected
//! with the exact robust constraints. Each protection function is written
//! in conic form:
//!
//! * ellipsoid: `ε‖x_S‖ ≤ τ`, a second-order cone;
//! * D-norm: `û·topΓ(|x_S|) = min { û(Γt + Σw) : w ≥ |x_S| − t, w, t ≥ 0 }`;
//! * polyhedron `{Ah ≤ c}`: by LP duality
//!   `p(z) = min { (c − A h̄)ᵀπ : Aᵀπ = z, π ≥ 0 }`.
//!
//! This is the fast path for Monte Carlo experiments; the distributed
//! solver in [`crate::async_rt`] computes the same value.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use nalgebra::DMatrix;

use crate::detector::Increment;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::model::SystemModel;
use crate::uncertainty::UncertaintySet;

type Row = Vec<(usize, f64)>;

/// Constraint rows grouped by cone, `A z + s = b`.
#[derive(Default)]
struct Rows {
    zero: Vec<(Row, f64)>,
    nonneg: Vec<(Row, f64)>,
    soc: Vec<Vec<(Row, f64)>>,
}

/// The conic program for one model; only the linear objective term
/// depends on the observation.
#[derive(Clone, Debug)]
pub struct ExactSolver {
    m: usize,
    vars: usize,
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl ExactSolver {
    pub fn new(model: &SystemModel) -> Result<Self> {
        let m = model.m();
        let mut vars = m;
        let mut new_var = || {
            vars += 1;
            vars - 1
        };
        let mut rows = Rows::default();
        let rho = model.rho_u();
        for r in 0..m {
            rows.nonneg.push((vec![(r, 1.0)], rho));
            rows.nonneg.push((vec![(r, -1.0)], rho));
        }
        for (j, col) in model.columns().iter().enumerate() {
            let delta = model.delta()[j];
            let linear = |sign: f64| -> Row {
                col.nominal()
                    .iter()
                    .enumerate()
                    .filter(|(_, h)| **h != 0.0)
                    .map(|(r, h)| (r, sign * h))
                    .collect()
            };
            let Some(unc) = col.uncertainty() else {
                if delta == 0.0 {
                    rows.zero.push((linear(1.0), 0.0));
                    continue;
                }
                for sign in [1.0, -1.0] {
                    rows.nonneg.push((linear(sign), delta));
                }
                continue;
            };
            let support = &unc.rows;
            match unc.set.set() {
                UncertaintySet::Ellipsoid { radius } => {
                    let tau = new_var();
                    let mut cone = vec![(vec![(tau, -1.0)], 0.0)];
                    cone.extend(support.iter().map(|&r| (vec![(r, -radius)], 0.0)));
                    rows.soc.push(cone);
                    for sign in [1.0, -1.0] {
                        let mut row = linear(sign);
                        row.push((tau, 1.0));
                        rows.nonneg.push((row, delta));
                    }
                }
                UncertaintySet::DNorm { gamma, uhat } => {
                    let t = new_var();
                    let w: Vec<usize> = support.iter().map(|_| new_var()).collect();
                    rows.nonneg.push((vec![(t, -1.0)], 0.0));
                    for (&r, &wk) in support.iter().zip(&w) {
                        rows.nonneg.push((vec![(r, 1.0), (t, -1.0), (wk, -1.0)], 0.0));
                        rows.nonneg.push((vec![(r, -1.0), (t, -1.0), (wk, -1.0)], 0.0));
                        rows.nonneg.push((vec![(wk, -1.0)], 0.0));
                    }
                    for sign in [1.0, -1.0] {
                        let mut row = linear(sign);
                        row.push((t, uhat * *gamma as f64));
                        row.extend(w.iter().map(|&wk| (wk, *uhat)));
                        rows.nonneg.push((row, delta));
                    }
                }
                UncertaintySet::Polyhedron { a, c } => {
                    let center = unc.set.center();
                    let slack: Vec<f64> = (0..a.nrows())
                        .map(|i| c[i] - (0..a.ncols()).map(|k| a[(i, k)] * center[k]).sum::<f64>())
                        .collect();
                    for sign in [1.0, -1.0] {
                        let pi: Vec<usize> = (0..a.nrows()).map(|_| new_var()).collect();
                        for &p in &pi {
                            rows.nonneg.push((vec![(p, -1.0)], 0.0));
                        }
                        for (k, &r) in support.iter().enumerate() {
                            let mut row: Row = pi
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| a[(*i, k)] != 0.0)
                                .map(|(i, &p)| (p, a[(i, k)]))
                                .collect();
                            row.push((r, -sign));
                            rows.zero.push((row, 0.0));
                        }
                        let mut row = linear(sign);
                        row.extend(pi.iter().zip(&slack).map(|(&p, &s)| (p, s)));
                        rows.nonneg.push((row, delta));
                    }
                }
                UncertaintySet::General { .. } => {
                    return Err(Error::Oracle("general sets have no conic form".into()))
                }
            }
        }
        Ok(Self::assemble(m, vars, rows))
    }

    fn assemble(m: usize, vars: usize, rows: Rows) -> Self {
        let (mut ri, mut ci, mut val, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut cones = Vec::new();
        let mut push = |group: &[(Row, f64)], b: &mut Vec<f64>| {
            for (row, rhs) in group {
                for &(c, v) in row {
                    ri.push(b.len());
                    ci.push(c);
                    val.push(v);
                }
                b.push(*rhs);
            }
        };
        if !rows.zero.is_empty() {
            push(&rows.zero, &mut b);
            cones.push(SupportedConeT::ZeroConeT(rows.zero.len()));
        }
        push(&rows.nonneg, &mut b);
        cones.push(SupportedConeT::NonnegativeConeT(rows.nonneg.len()));
        for cone in &rows.soc {
            push(cone, &mut b);
            cones.push(SupportedConeT::SecondOrderConeT(cone.len()));
        }
        let a = CscMatrix::new_from_triplets(b.len(), vars, ri, ci, val);
        Self { m, vars, a, b, cones }
    }

    /// Observation dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `v_t` and its maximizer.
    pub fn solve(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("observation", self.m, y.len())?;
        let idx: Vec<usize> = (0..self.m).collect();
        let p = CscMatrix::new_from_triplets(self.vars, self.vars, idx.clone(), idx, vec![1.0; self.m]);
        let mut q = vec![0.0; self.vars];
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi = -yi;
        }
        let mut solver = DefaultSolver::new(&p, &q, &self.a, &self.b, &self.cones, tight_settings()?)
            .map_err(|e| Error::Oracle(format!("conic setup: {e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let x = solver.solution.x[..self.m].to_vec();
                Ok((2.0 * dot(&x, y) - norm_sq(&x), x))
            }
            other => Err(Error::Oracle(format!("conic solve ended with {other:?}"))),
        }
    }
}

/// `max { (h − center)ᵀx : A h ≤ c }` by an interior-point LP solve.
pub fn polyhedron_protection_lp(a: &DMatrix<f64>, c: &[f64], center: &[f64], x: &[f64]) -> Result<f64> {
    let (rows, dim) = a.shape();
    check_dim("polyhedron right-hand side", rows, c.len())?;
    check_dim("polyhedron center", dim, center.len())?;
    check_dim("protection argument", dim, x.len())?;
    let (mut ri, mut ci, mut val) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..rows {
        for k in 0..dim {
            if a[(i, k)] != 0.0 {
                ri.push(i);
                ci.push(k);
                val.push(a[(i, k)]);
            }
        }
    }
    let am = CscMatrix::new_from_triplets(rows, dim, ri, ci, val);
    let p = CscMatrix::<f64>::zeros((dim, dim));
    let q: Vec<f64> = x.iter().map(|v| -v).collect();
    let cones = [SupportedConeT::NonnegativeConeT(rows)];
    let mut solver = DefaultSolver::new(&p, &q, &am, c, &cones, tight_settings()?)
        .map_err(|e| Error::Oracle(format!("conic setup: {e:?}")))?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            Ok(dot(&solver.solution.x, x) - dot(center, x))
        }
        other => Err(Error::Oracle(format!("LP solve ended with {other:?}"))),
    }
}

fn tight_settings() -> Result<clarabel::solver::DefaultSettings<f64>> {
    DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .map_err(|e| Error::Oracle(format!("solver settings: {e:?}")))
}

/// `v_t` from the conic solver; plugs into the CUSUM as an increment.
#[derive(Clone, Debug)]
pub struct ExactIncrement {
    solver: ExactSolver,
}

impl ExactIncrement {
    pub fn new(model: &SystemModel) -> Result<Self> {
        Ok(Self { solver: ExactSolver::new(model)? })
    }

    /// The non-robust detector that trusts `h` completely:
    /// `x ⟂ range(h)` inside the box.
    pub fn baseline(h: &DMatrix<f64>, sigma_n: f64, rho_u: f64) -> Result<Self> {
        Self::new(&SystemModel::exact(h.clone(), sigma_n, rho_u, 0.0)?)
    }
}

impl Increment for ExactIncrement {
    fn increment(&mut self, y: &[f64]) -> Result<f64> {
        Ok(self.solver.solve(y)?.0.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{oracle_vt, OracleConfig};
    use crate::uncertainty::RobustColumn;
    use approx::assert_abs_diff_eq;
    use crate::oracle::ExactHBaseline;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lp_protection_on_an_interval() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let p = polyhedron_protection_lp(&a, &[2.0, 1.0], &[0.5], &[1.0]).unwrap();
        assert_abs_diff_eq!(p, 1.5, epsilon = 1e-8);
    }

    #[test]
    fn box_only() {
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let model = SystemModel::exact(h, 1.0, 1.0, 1e3).unwrap();
        let (v, x) = ExactSolver::new(&model).unwrap().solve(&[2.0, -3.0]).unwrap();
        assert_abs_diff_eq!(v, 8.0, epsilon = 1e-7);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn baseline_matches_projection_baseline() {
        let h = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, -1.0]);
        let mut inc = ExactIncrement::baseline(&h, 1.0, 0.8).unwrap();
        let reference = ExactHBaseline::new(&h, 0.8);
        for y in [[0.3, -1.2, 0.7, 2.0], [0.0, 0.1, -0.1, 0.05], [3.0, 3.0, -3.0, 1.0]] {
            assert_abs_diff_eq!(inc.increment(&y).unwrap(), reference.value(&y), epsilon = 1e-6);
        }
    }

    #[test]
    fn agrees_with_projection_oracle_on_every_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poly = || {
            let mut a = DMatrix::zeros(6, 3);
            for k in 0..3 {
                a[(k, k)] = 1.0;
                a[(k + 3, k)] = -1.0;
            }
            UncertaintySet::Polyhedron { a, c: vec![0.4, 0.7, 0.3, 0.2, 0.5, 0.6] }
        };
        let sets = [
            UncertaintySet::Ellipsoid { radius: 0.36 },
            UncertaintySet::DNorm { gamma: 2, uhat: 0.3 },
            poly(),
        ];
        for set in sets {
            for _ in 0..5 {
                let hb: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut hb = hb;
                hb[3] = 1.0;
                let exact: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut center = hb.clone();
                center[0] = 0.1;
                center[1] = -0.05;
                center[2] = 0.0;
                let h = DMatrix::from_fn(4, 2, |r, c| if c == 0 { center[r] } else { exact[r] });
                let cols = vec![
                    RobustColumn::uncertain(center.clone(), vec![0, 1, 2], set.clone()).unwrap(),
                    RobustColumn::exact(exact.clone()),
                ];
                let model =
                    SystemModel::new(h, cols, 1.0, 1.0, vec![0.2, 0.1], vec![vec![0, 1], vec![2, 3]]).unwrap();
                let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
                let (v, _) = ExactSolver::new(&model).unwrap().solve(&y).unwrap();
                let (vo, _) = oracle_vt(&model, &y, &OracleConfig::default()).unwrap();
                assert_abs_diff_eq!(v, vo, epsilon = 1e-6);
            }
        }
    }
}
