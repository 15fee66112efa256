//! Observation model `y = Hθ + a + n`, sub-region partition, orthogonal
//! projection, attack generation and stream simulation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::mat_vec;
use crate::uncertainty::RobustColumn;

/// The measurement model together with everything the robust detector
/// needs: nominal columns and their uncertainty, the box bound, the
/// relaxation tolerances and the sub-region selectors.
#[derive(Clone, Debug)]
pub struct SystemModel {
    h: DMatrix<f64>,
    columns: Vec<RobustColumn>,
    sigma_n: f64,
    rho_u: f64,
    delta: Vec<f64>,
    regions: Vec<Vec<usize>>,
}

impl SystemModel {
    /// `h` is the true matrix; `columns[i]` describes what the detector
    /// knows about column `i`; `regions[l]` lists the coordinates of `x`
    /// selected by `B_l`, in order.
    pub fn new(
        h: DMatrix<f64>,
        columns: Vec<RobustColumn>,
        sigma_n: f64,
        rho_u: f64,
        delta: Vec<f64>,
        regions: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let (m, n) = h.shape();
        if m == 0 || n == 0 {
            return Err(Error::InvalidModel("empty measurement matrix".into()));
        }
        check_dim("nominal columns", n, columns.len())?;
        check_dim("relaxation tolerances", n, delta.len())?;
        for col in &columns {
            check_dim("nominal column length", m, col.nominal().len())?;
        }
        if !(sigma_n > 0.0) {
            return Err(Error::InvalidModel(format!("sigma_n = {sigma_n} must be > 0")));
        }
        if !(rho_u > 0.0) {
            return Err(Error::InvalidModel(format!("rho_U = {rho_u} must be > 0")));
        }
        if let Some(d) = delta.iter().find(|d| !(**d >= 0.0)) {
            return Err(Error::InvalidModel(format!("tolerance {d} must be >= 0")));
        }
        if regions.is_empty() {
            return Err(Error::InvalidModel("at least one region is required".into()));
        }
        let mut covered = vec![false; m];
        for (l, rows) in regions.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::InvalidModel(format!("region {l} selects no rows")));
            }
            for &r in rows {
                if r >= m {
                    return Err(Error::InvalidModel(format!(
                        "region {l} selects row {r}, but M = {m}"
                    )));
                }
                covered[r] = true;
            }
        }
        if let Some(r) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidModel(format!("row {r} belongs to no region")));
        }
        Ok(Self {
            h,
            columns,
            sigma_n,
            rho_u,
            delta,
            regions,
        })
    }

    /// Model with exactly known columns equal to `h`, one region and a
    /// common tolerance.
    pub fn exact(h: DMatrix<f64>, sigma_n: f64, rho_u: f64, delta: f64) -> Result<Self> {
        let n = h.ncols();
        let columns = (0..n)
            .map(|j| RobustColumn::exact(h.column(j).iter().copied().collect()))
            .collect();
        let regions = vec![(0..h.nrows()).collect()];
        Self::new(h, columns, sigma_n, rho_u, vec![delta; n], regions)
    }

    /// Observation dimension `M`.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// State dimension `N`.
    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Matrix of nominal columns `H̄`.
    pub fn nominal_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), self.n(), |i, j| self.columns[j].nominal()[i])
    }

    pub fn columns(&self) -> &[RobustColumn] {
        &self.columns
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn rho_u(&self) -> f64 {
        self.rho_u
    }

    /// Tolerances `δ_1..δ_N` (the mirrored constraints reuse them).
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }

    /// Number of robust constraints, `2N`.
    pub fn constraint_count(&self) -> usize {
        2 * self.n()
    }

    /// Column index and sign of robust constraint `i ∈ 0..2N`.
    pub fn constraint(&self, i: usize) -> (&RobustColumn, f64, f64) {
        let n = self.n();
        let (j, sign) = if i < n { (i, 1.0) } else { (i - n, -1.0) };
        (&self.columns[j], sign, self.delta[j])
    }

    /// `B_l y`.
    pub fn local(&self, l: usize, y: &[f64]) -> Vec<f64> {
        self.regions[l].iter().map(|&r| y[r]).collect()
    }

    pub fn with_sigma_n(mut self, sigma_n: f64) -> Result<Self> {
        if !(sigma_n > 0.0) {
            return Err(Error::InvalidModel(format!("sigma_n = {sigma_n} must be > 0")));
        }
        self.sigma_n = sigma_n;
        Ok(self)
    }

    pub fn with_rho_u(mut self, rho_u: f64) -> Result<Self> {
        if !(rho_u > 0.0) {
            return Err(Error::InvalidModel(format!("rho_U = {rho_u} must be > 0")));
        }
        self.rho_u = rho_u;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: Vec<f64>) -> Result<Self> {
        check_dim("relaxation tolerances", self.n(), delta.len())?;
        if let Some(d) = delta.iter().find(|d| !(**d >= 0.0)) {
            return Err(Error::InvalidModel(format!("tolerance {d} must be >= 0")));
        }
        self.delta = delta;
        Ok(self)
    }
}

/// `(I − H H⁺) y`: the component of `y` orthogonal to the column space of
/// `h`, via minimum-norm least squares.
pub fn orthogonal_residual(h: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    assert_eq!(h.nrows(), y.len(), "orthogonal_residual: dimension mismatch");
    let proj = crate::linalg::complement_projector(h);
    mat_vec(&proj, y)
}

/// Draws attacks `a = P⊥ u`, `u_i ~ U(0.1, 1)`, reusing one projector.
#[derive(Clone, Debug)]
pub struct AttackGenerator {
    proj: DMatrix<f64>,
    dist: Uniform<f64>,
}

impl AttackGenerator {
    pub fn new(h: &DMatrix<f64>) -> Self {
        Self {
            proj: crate::linalg::complement_projector(h),
            dist: Uniform::new_inclusive(0.1, 1.0).expect("valid bounds"),
        }
    }

    /// Projects a given draw `u`.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        mat_vec(&self.proj, u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..self.proj.nrows()).map(|_| self.dist.sample(rng)).collect();
        self.project(&u)
    }
}

/// One attack draw for `h`.
pub fn generate_attack<R: Rng + ?Sized>(h: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    AttackGenerator::new(h).sample(rng)
}

/// How the state trajectory `θ^(t)` is produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateGenerator {
    Zero,
    /// i.i.d. uniform on `[−half_width, half_width]^N`.
    Uniform { half_width: f64 },
}

impl Default for StateGenerator {
    fn default() -> Self {
        Self::Uniform { half_width: 1.0 }
    }
}

impl StateGenerator {
    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Self::Zero => vec![0.0; n],
            Self::Uniform { half_width } => (0..n)
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect(),
        }
    }
}

/// A simulated observation sequence. `change_time` is the 1-based index
/// of the first attacked sample; `len() + 1` means no change.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationStream {
    pub observations: Vec<Vec<f64>>,
    pub change_time: usize,
}

impl ObservationStream {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn has_change(&self) -> bool {
        self.change_time <= self.len()
    }

    /// Whether the 1-based sample `t` is post-change.
    pub fn is_post_change(&self, t: usize) -> bool {
        t >= self.change_time
    }

    /// Columns `t, y_1..y_M, is_post_change`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let m = self.observations.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|j| format!("y_{j}")));
        header.push("is_post_change".into());
        w.write_record(&header)?;
        for (i, y) in self.observations.iter().enumerate() {
            let t = i + 1;
            let mut rec = vec![t.to_string()];
            rec.extend(y.iter().map(|v| format!("{v:e}")));
            rec.push(u8::from(self.is_post_change(t)).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let m = rd.headers()?.len().checked_sub(2).ok_or_else(|| {
            Error::InvalidConfig("stream CSV needs t, y_1..y_M, is_post_change".into())
        })?;
        let mut observations = Vec::new();
        let mut change_time = None;
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad stream value {s:?}: {e}")))
            };
            let y = (1..=m).map(|j| parse(&rec[j])).collect::<Result<Vec<_>>>()?;
            if change_time.is_none() && rec[m + 1].trim() == "1" {
                change_time = Some(observations.len() + 1);
            }
            observations.push(y);
        }
        let change_time = change_time.unwrap_or(observations.len() + 1);
        Ok(Self {
            observations,
            change_time,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Simulates `T` samples of `y = Hθ + n` with a fresh attack added from
/// the 1-based index `change_time` on (`T + 1` for no change).
pub fn simulate_stream<R: Rng + ?Sized>(
    model: &SystemModel,
    state_gen: StateGenerator,
    change_time: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<ObservationStream> {
    if horizon < 1 {
        return Err(Error::InvalidConfig("stream horizon must be >= 1".into()));
    }
    if change_time < 1 || change_time > horizon + 1 {
        return Err(Error::InvalidConfig(format!(
            "change time {change_time} outside 1..={}",
            horizon + 1
        )));
    }
    let attacks = AttackGenerator::new(model.h());
    let noise = Normal::new(0.0, model.sigma_n()).expect("sigma_n validated positive");
    let observations = (1..=horizon)
        .map(|t| {
            let theta = state_gen.sample(model.n(), rng);
            let mut y = mat_vec(model.h(), &theta);
            for yi in y.iter_mut() {
                *yi += noise.sample(rng);
            }
            if t >= change_time {
                let a = attacks.sample(rng);
                crate::linalg::axpy(1.0, &a, &mut y);
            }
            y
        })
        .collect();
    Ok(ObservationStream {
        observations,
        change_time,
    })
}
