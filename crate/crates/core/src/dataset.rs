//! The IEEE 14-bus scenario: a DC power-flow measurement model split into
//! four monitoring regions, with an imprecisely known fourth region.
//!
//! The grid outside region 4 is reconstructed from the standard 14-bus
//! topology with unit line susceptances. Under that convention the
//! region-4 block over the angles of buses 12, 13 and 14 equals [`H4`]
//! exactly, which fixes the meter choice for that region. States are the
//! angles of buses 2..14 (bus 1 is the reference).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::uncertainty::{RobustColumn, UncertaintySet};

/// Branches of the 14-bus system, 1-based bus numbers.
pub const BRANCHES: [(usize, usize); 20] = [
    (1, 2),
    (1, 5),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 4),
    (4, 5),
    (4, 7),
    (4, 9),
    (5, 6),
    (6, 11),
    (6, 12),
    (6, 13),
    (7, 8),
    (7, 9),
    (9, 10),
    (9, 14),
    (10, 11),
    (12, 13),
    (13, 14),
];

/// A meter: the power injection at a bus, or the flow on a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Meter {
    Injection(usize),
    Flow(usize, usize),
}

/// Meters of each region, in row order.
pub const REGION_METERS: [&[Meter]; 4] = [
    &[
        Meter::Injection(1),
        Meter::Injection(2),
        Meter::Injection(3),
        Meter::Injection(4),
        Meter::Injection(5),
        Meter::Flow(1, 2),
        Meter::Flow(4, 5),
    ],
    &[
        Meter::Injection(6),
        Meter::Injection(10),
        Meter::Injection(11),
        Meter::Flow(5, 6),
        Meter::Flow(6, 11),
    ],
    &[
        Meter::Injection(7),
        Meter::Injection(8),
        Meter::Injection(9),
        Meter::Flow(4, 7),
        Meter::Flow(7, 9),
    ],
    &[
        Meter::Injection(13),
        Meter::Flow(6, 13),
        Meter::Flow(9, 14),
        Meter::Flow(14, 13),
        Meter::Injection(14),
    ],
];

/// Buses whose angles multiply the uncertain columns.
pub const UNCERTAIN_BUSES: [usize; 3] = [12, 13, 14];

/// True region-4 block, rows in [`REGION_METERS`]`[3]` order.
pub const H4: [[f64; 3]; 5] = [
    [-1.0, 3.0, -1.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, -1.0, 1.0],
    [0.0, -1.0, 2.0],
];

/// Estimated region-4 columns, shared by all uncertainty variants.
pub const NOMINAL_H4: [[f64; 5]; 3] = [
    [-1.0, 0.1, 0.3, -0.2, 0.0],
    [3.0, -0.7, 0.2, -1.3, -0.9],
    [-1.1, 0.2, -0.6, 0.7, 2.0],
];

/// Right-hand sides of `[I; −I] h ≤ c` for each region-4 column.
pub const POLY_C: [[f64; 10]; 3] = [
    [-0.5, 0.5, 0.5, 0.5, 0.5, 1.5, 0.5, 0.5, 0.5, 0.5],
    [3.5, -0.5, 0.5, -0.5, -0.5, -2.5, 1.5, 0.5, 1.5, 1.5],
    [-0.5, 0.5, -0.5, 1.5, 2.5, 1.5, 0.5, 1.5, -0.5, -1.5],
];

pub const ELLIPSOID_RADIUS: f64 = 0.36;
pub const DNORM_GAMMA: usize = 4;
pub const DNORM_UHAT: f64 = 0.5;

/// Number of meters.
pub const M: usize = 22;
/// Number of states.
pub const N: usize = 13;

/// Which uncertainty description the detector uses for region 4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    Polyhedron,
    #[default]
    Ellipsoid,
    Dnorm,
}

impl UncertaintyKind {
    pub const ALL: [Self; 3] = [Self::Polyhedron, Self::Ellipsoid, Self::Dnorm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Polyhedron => "polyhedron",
            Self::Ellipsoid => "ellipsoid",
            Self::Dnorm => "dnorm",
        }
    }

    /// The region-4 set for column `j` (0..3) around `NOMINAL_H4[j]`,
    /// with the published parameters.
    pub fn column_set(self, j: usize) -> UncertaintySet {
        self.column_set_with(j, &SetParams::default())
    }

    /// As [`Self::column_set`] with `params` for the ellipsoid and D-norm.
    pub fn column_set_with(self, j: usize, params: &SetParams) -> UncertaintySet {
        match self {
            Self::Polyhedron => {
                let mut a = DMatrix::zeros(10, 5);
                for r in 0..5 {
                    a[(r, r)] = 1.0;
                    a[(r + 5, r)] = -1.0;
                }
                UncertaintySet::Polyhedron {
                    a,
                    c: POLY_C[j].to_vec(),
                }
            }
            Self::Ellipsoid => UncertaintySet::Ellipsoid {
                radius: params.ellipsoid_radius,
            },
            Self::Dnorm => UncertaintySet::DNorm {
                gamma: params.dnorm_gamma,
                uhat: params.dnorm_uhat,
            },
        }
    }
}

impl fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UncertaintyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown uncertainty set {s:?}")))
    }
}

/// Size parameters of the ellipsoid and D-norm sets. The polyhedron is
/// fixed by [`POLY_C`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetParams {
    pub ellipsoid_radius: f64,
    pub dnorm_gamma: usize,
    pub dnorm_uhat: f64,
}

impl Default for SetParams {
    fn default() -> Self {
        Self {
            ellipsoid_radius: ELLIPSOID_RADIUS,
            dnorm_gamma: DNORM_GAMMA,
            dnorm_uhat: DNORM_UHAT,
        }
    }
}

/// Noise level, box bound and tolerances of the scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ieee14Params {
    pub sigma_n: f64,
    pub rho_u: f64,
    /// Tolerance of the robust constraints of the uncertain columns.
    pub delta: f64,
    /// Tolerance of the constraints of exactly known columns. Zero makes
    /// them `h̄ᵀx = 0`, as in the exact-matrix detector.
    pub delta_exact: f64,
    pub sets: SetParams,
}

impl Default for Ieee14Params {
    fn default() -> Self {
        Self {
            sigma_n: 0.5,
            rho_u: 1.0,
            delta: 0.1,
            delta_exact: 0.0,
            sets: SetParams::default(),
        }
    }
}

fn meter_row(meter: Meter) -> [f64; 15] {
    let mut row = [0.0; 15];
    match meter {
        Meter::Injection(bus) => {
            for &(a, b) in &BRANCHES {
                if a == bus || b == bus {
                    let other = if a == bus { b } else { a };
                    row[bus] += 1.0;
                    row[other] -= 1.0;
                }
            }
        }
        Meter::Flow(from, to) => {
            row[from] = 1.0;
            row[to] = -1.0;
        }
    }
    row
}

/// Row indices of each region in the stacked meter order.
pub fn regions() -> Vec<Vec<usize>> {
    let mut start = 0;
    REGION_METERS
        .iter()
        .map(|meters| {
            let rows = (start..start + meters.len()).collect();
            start += meters.len();
            rows
        })
        .collect()
}

/// The true `22 × 13` measurement matrix.
pub fn true_matrix() -> DMatrix<f64> {
    let rows: Vec<[f64; 15]> = REGION_METERS
        .iter()
        .flat_map(|meters| meters.iter().map(|&m| meter_row(m)))
        .collect();
    DMatrix::from_fn(M, N, |r, c| rows[r][c + 2])
}

fn state_column(bus: usize) -> usize {
    bus - 2
}

/// The detector's estimate: the true matrix with the region-4 block of
/// the uncertain columns replaced by [`NOMINAL_H4`].
pub fn nominal_matrix() -> DMatrix<f64> {
    let mut h = true_matrix();
    let rows = &regions()[3];
    for (j, &bus) in UNCERTAIN_BUSES.iter().enumerate() {
        for (k, &r) in rows.iter().enumerate() {
            h[(r, state_column(bus))] = NOMINAL_H4[j][k];
        }
    }
    h
}

/// The four-region IEEE-14 model with the given region-4 uncertainty.
pub fn load_ieee14(kind: UncertaintyKind, params: &Ieee14Params) -> Result<SystemModel> {
    let h = true_matrix();
    let nominal = nominal_matrix();
    let region4 = regions()[3].clone();
    let mut columns: Vec<RobustColumn> = (0..N)
        .map(|c| RobustColumn::exact(nominal.column(c).iter().copied().collect()))
        .collect();
    for (j, &bus) in UNCERTAIN_BUSES.iter().enumerate() {
        let c = state_column(bus);
        columns[c] = RobustColumn::uncertain(
            nominal.column(c).iter().copied().collect(),
            region4.clone(),
            kind.column_set_with(j, &params.sets),
        )?;
    }
    let delta = columns
        .iter()
        .map(|c| if c.is_exact() { params.delta_exact } else { params.delta })
        .collect();
    SystemModel::new(h, columns, params.sigma_n, params.rho_u, delta, regions())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_four_block_is_h4() {
        let h = true_matrix();
        let rows = &regions()[3];
        for (k, &r) in rows.iter().enumerate() {
            for (j, &bus) in UNCERTAIN_BUSES.iter().enumerate() {
                assert_eq!(h[(r, state_column(bus))], H4[k][j]);
            }
        }
        assert_eq!(H4[0], [-1.0, 3.0, -1.0]);
    }

    #[test]
    fn literals() {
        assert_eq!(NOMINAL_H4[0], [-1.0, 0.1, 0.3, -0.2, 0.0]);
        assert_eq!(NOMINAL_H4[1], [3.0, -0.7, 0.2, -1.3, -0.9]);
        assert_eq!(NOMINAL_H4[2], [-1.1, 0.2, -0.6, 0.7, 2.0]);
        assert_eq!(POLY_C[0], [-0.5, 0.5, 0.5, 0.5, 0.5, 1.5, 0.5, 0.5, 0.5, 0.5]);
        assert_eq!(POLY_C[1], [3.5, -0.5, 0.5, -0.5, -0.5, -2.5, 1.5, 0.5, 1.5, 1.5]);
        assert_eq!(POLY_C[2], [-0.5, 0.5, -0.5, 1.5, 2.5, 1.5, 0.5, 1.5, -0.5, -1.5]);
        assert_eq!((ELLIPSOID_RADIUS, DNORM_GAMMA, DNORM_UHAT), (0.36, 4, 0.5));
    }

    #[test]
    fn true_columns_are_box_midpoints() {
        for (j, c) in POLY_C.iter().enumerate() {
            for k in 0..5 {
                assert_eq!(0.5 * (c[k] - c[k + 5]), H4[k][j]);
            }
        }
    }

    #[test]
    fn full_column_rank_with_four_regions() {
        let h = true_matrix();
        assert_eq!(h.shape(), (M, N));
        assert_eq!(h.clone().svd(false, false).rank(1e-9), N);
        let sizes: Vec<usize> = regions().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![7, 5, 5, 5]);
    }

    #[test]
    fn every_variant_loads() {
        for kind in UncertaintyKind::ALL {
            let model = load_ieee14(kind, &Ieee14Params::default()).unwrap();
            assert_eq!(model.constraint_count(), 2 * N);
            assert_eq!(model.columns().iter().filter(|c| !c.is_exact()).count(), 3);
            assert_eq!(kind.as_str().parse::<UncertaintyKind>().unwrap(), kind);
        }
    }
}
