//! Planar mass-spring-damper array benchmark.
//!
//! Masses sit on a `rows × cols` grid and are grouped into rectangular blocks,
//! one subsystem per block. Each mass has state `(x, vx, y, vy)` and inputs
//! `(u_x, u_y)` acting as forces `force_scale · u`. Grid neighbours are linked by
//! a spring and a damper. By default a link acts along its own direction only
//! ([`LinkAxes::Along`]) and every missing neighbour is replaced by the same
//! link to a fixed frame ([`Boundary::Walls`]).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat};
use crate::model::{Subsystem, SubsystemId};
use crate::zonotope::{Zonotope, ZonotopeError};

pub const STATES_PER_MASS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Zonotope(#[from] ZonotopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Free,
    Walls,
}

/// Directions in which a spring-damper link transmits force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkAxes {
    /// Every link acts on both coordinates independently.
    Both,
    /// A horizontal link acts on `x` only and a vertical link on `y` only.
    Along,
}

/// Which masses of a block have their positions measured; the others report velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLayout {
    /// The first block row (local masses 1 and 2 in row-major order).
    LeadingRow,
    /// The block row facing the vertically adjacent block.
    FacingRow,
    /// Masses on the main diagonal of the block.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub group_rows: usize,
    pub group_cols: usize,
    pub mass_range: (f64, f64),
    pub spring_k: f64,
    pub damper_c: f64,
    pub sample_time: f64,
    pub force_scale: f64,
    pub position_bound: f64,
    pub velocity_bound: f64,
    pub dist_bound: f64,
    pub boundary: Boundary,
    pub links: LinkAxes,
    pub outputs: OutputLayout,
    pub seed: u64,
}

impl Default for MassArrayConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            group_rows: 2,
            group_cols: 2,
            mass_range: (5.0, 10.0),
            spring_k: 0.5,
            damper_c: 0.5,
            sample_time: 0.2,
            force_scale: 100.0,
            position_bound: 1.0,
            velocity_bound: 1.5,
            dist_bound: 0.015,
            boundary: Boundary::Walls,
            links: LinkAxes::Along,
            outputs: OutputLayout::Diagonal,
            seed: 0,
        }
    }
}

impl MassArrayConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.rows == 0 || self.cols == 0 || self.group_rows == 0 || self.group_cols == 0 {
            return bad("grid and group dimensions must be positive");
        }
        if self.rows % self.group_rows != 0 || self.cols % self.group_cols != 0 {
            return bad("grid not divisible by group shape");
        }
        let (lo, hi) = self.mass_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("mass range must be positive and ordered");
        }
        for (name, v) in [
            ("spring_k", self.spring_k),
            ("damper_c", self.damper_c),
            ("sample_time", self.sample_time),
            ("force_scale", self.force_scale),
            ("position_bound", self.position_bound),
            ("velocity_bound", self.velocity_bound),
            ("dist_bound", self.dist_bound),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BenchError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn group_grid(&self) -> (usize, usize) {
        (self.rows / self.group_rows, self.cols / self.group_cols)
    }

    pub fn num_groups(&self) -> usize {
        let (gr, gc) = self.group_grid();
        gr * gc
    }

    pub fn masses_per_group(&self) -> usize {
        self.group_rows * self.group_cols
    }

    /// Group index (row-major) and local mass index (row-major) of a grid cell.
    pub fn locate(&self, r: usize, c: usize) -> (usize, usize) {
        let (_, gc) = self.group_grid();
        let group = (r / self.group_rows) * gc + c / self.group_cols;
        let local = (r % self.group_rows) * self.group_cols + c % self.group_cols;
        (group, local)
    }

    /// Masses drawn uniformly from `mass_range`, row-major over the grid.
    pub fn masses(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = self.mass_range;
        (0..self.rows * self.cols)
            .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousGroup {
    pub a: Mat,
    pub b: Mat,
    /// Neighbouring group index → continuous coupling block.
    pub couplings: BTreeMap<usize, Mat>,
}

/// Continuous-time block models of the array.
pub fn build_continuous(cfg: &MassArrayConfig) -> Result<Vec<ContinuousGroup>, BenchError> {
    cfg.validate()?;
    let masses = cfg.masses();
    let nm = cfg.masses_per_group();
    let n = STATES_PER_MASS * nm;
    let mut groups: Vec<ContinuousGroup> = (0..cfg.num_groups())
        .map(|_| ContinuousGroup {
            a: Mat::zeros(n, n),
            b: Mat::zeros(n, 2 * nm),
            couplings: BTreeMap::new(),
        })
        .collect();
    let (k, c) = (cfg.spring_k, cfg.damper_c);
    for r in 0..cfg.rows {
        for col in 0..cfg.cols {
            let m = masses[r * cfg.cols + col];
            let (gi, f) = cfg.locate(r, col);
            let g = &mut groups[gi];
            for axis in 0..2 {
                let pos = STATES_PER_MASS * f + 2 * axis;
                g.a[(pos, pos + 1)] = 1.0;
                g.b[(pos + 1, 2 * f + axis)] = cfg.force_scale / m;
            }
            // (neighbour cell, axis along the link)
            let neighbours = [
                ((r.checked_sub(1), Some(col)), 1),
                (((r + 1 < cfg.rows).then_some(r + 1), Some(col)), 1),
                ((Some(r), col.checked_sub(1)), 0),
                ((Some(r), (col + 1 < cfg.cols).then_some(col + 1)), 0),
            ];
            for (nb, along) in neighbours {
                let other = match nb {
                    (Some(r2), Some(c2)) => Some(cfg.locate(r2, c2)),
                    _ => None,
                };
                if other.is_none() && cfg.boundary == Boundary::Free {
                    continue;
                }
                for axis in 0..2 {
                    if cfg.links == LinkAxes::Along && axis != along {
                        continue;
                    }
                    let pos = STATES_PER_MASS * f + 2 * axis;
                    let g = &mut groups[gi];
                    g.a[(pos + 1, pos)] -= k / m;
                    g.a[(pos + 1, pos + 1)] -= c / m;
                    if let Some((gj, h)) = other {
                        let pos_j = STATES_PER_MASS * h + 2 * axis;
                        let block = if gj == gi {
                            &mut g.a
                        } else {
                            g.couplings.entry(gj).or_insert_with(|| Mat::zeros(n, n))
                        };
                        block[(pos + 1, pos_j)] += k / m;
                        block[(pos + 1, pos_j + 1)] += c / m;
                    }
                }
            }
        }
    }
    Ok(groups)
}

/// `∫₀ᵀ exp(A s) ds · M` via the upper-right block of `exp([[A, M], [0, 0]] T)`.
fn integrated_map(a: &Mat, m: &Mat, t: f64) -> Result<Mat, LinalgError> {
    let n = a.nrows();
    let q = m.ncols();
    let mut aug = Mat::zeros(n + q, n + q);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, q)).copy_from(m);
    let e = linalg::expm(&(aug * t))?;
    Ok(e.view((0, n), (n, q)).into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBlock {
    pub a: Mat,
    pub b: Mat,
    pub couplings: BTreeMap<usize, Mat>,
}

/// Zero-order-hold discretization of one block, treating neighbour states as
/// inputs held over the sampling interval.
pub fn discretize_zoh(
    a_c: &Mat,
    b_c: &Mat,
    couplings: &BTreeMap<usize, Mat>,
    t: f64,
) -> Result<DiscreteBlock, BenchError> {
    if !(t > 0.0) {
        return Err(BenchError::InvalidConfig("sample time must be positive".into()));
    }
    Ok(DiscreteBlock {
        a: linalg::expm(&(a_c * t))?,
        b: integrated_map(a_c, b_c, t)?,
        couplings: couplings
            .iter()
            .map(|(j, m)| Ok((*j, integrated_map(a_c, m, t)?)))
            .collect::<Result<_, LinalgError>>()?,
    })
}

/// Local mass indices (row-major) whose positions are measured in block `group`.
pub fn position_masses(cfg: &MassArrayConfig, group: usize) -> Vec<usize> {
    let (gr, gc) = cfg.group_grid();
    let block_row = match cfg.outputs {
        OutputLayout::Diagonal => {
            return (0..cfg.group_rows.min(cfg.group_cols))
                .map(|k| k * cfg.group_cols + k)
                .collect()
        }
        OutputLayout::LeadingRow => 0,
        OutputLayout::FacingRow => {
            if gr > 1 && group / gc < gr / 2 {
                cfg.group_rows - 1
            } else {
                0
            }
        }
    };
    (0..cfg.group_cols).map(|c| block_row * cfg.group_cols + c).collect()
}

/// Selector output matrices: both position coordinates of the masses returned
/// by [`position_masses`] and both velocity coordinates of all other masses,
/// listed in local mass order.
pub fn build_outputs(cfg: &MassArrayConfig) -> Vec<Mat> {
    let nm = cfg.masses_per_group();
    let n = STATES_PER_MASS * nm;
    (0..cfg.num_groups())
        .map(|g| {
            let pos = position_masses(cfg, g);
            let mut c = Mat::zeros(2 * nm, n);
            for f in 0..nm {
                let offset = if pos.contains(&f) { 0 } else { 1 };
                for axis in 0..2 {
                    c[(2 * f + axis, STATES_PER_MASS * f + 2 * axis + offset)] = 1.0;
                }
            }
            c
        })
        .collect()
}

fn error_half_widths(cfg: &MassArrayConfig, masses: usize) -> Vec<f64> {
    (0..masses)
        .flat_map(|_| {
            [
                cfg.position_bound,
                cfg.velocity_bound,
                cfg.position_bound,
                cfg.velocity_bound,
            ]
        })
        .collect()
}

/// Discrete subsystems with ids `1..=groups` in row-major block order.
pub fn build_plant(cfg: &MassArrayConfig) -> Result<Vec<Subsystem>, BenchError> {
    let groups = build_continuous(cfg)?;
    let outputs = build_outputs(cfg);
    let n = STATES_PER_MASS * cfg.masses_per_group();
    let half_widths = error_half_widths(cfg, cfg.masses_per_group());
    groups
        .iter()
        .zip(outputs)
        .enumerate()
        .map(|(g, (group, c))| {
            let d = discretize_zoh(&group.a, &group.b, &group.couplings, cfg.sample_time)?;
            Ok(Subsystem {
                id: SubsystemId(g as u32 + 1),
                a: d.a,
                b: d.b,
                c,
                d: Mat::from_element(n, 1, 1.0),
                couplings: d
                    .couplings
                    .into_iter()
                    .map(|(j, m)| (SubsystemId(j as u32 + 1), m))
                    .collect(),
                error_set: Zonotope::from_box(&half_widths)?,
                dist_set: Zonotope::from_box(&[cfg.dist_bound])?,
            })
        })
        .collect()
}

/// Extra block for plug-and-play scenarios: a walled block of the same shape
/// linked to block `host` through weak springs and dampers (`link_gain` times
/// the grid constants) between facing columns. The links enter only the
/// coupling blocks of both sides.
///
/// Returns the new subsystem and the coupling block to add to `host`.
pub fn extension_block(
    cfg: &MassArrayConfig,
    id: SubsystemId,
    host: SubsystemId,
    link_gain: f64,
    seed: u64,
) -> Result<(Subsystem, Mat), BenchError> {
    let block_cfg = MassArrayConfig {
        rows: cfg.group_rows,
        cols: cfg.group_cols,
        boundary: Boundary::Walls,
        seed,
        ..cfg.clone()
    };
    let group = build_continuous(&block_cfg)?.remove(0);
    let own_masses = block_cfg.masses();
    let host_masses = cfg.masses();
    let nm = cfg.masses_per_group();
    let n = STATES_PER_MASS * nm;
    let (_, gc) = cfg.group_grid();
    let host_group = host.0 as usize - 1;
    let (host_row0, host_col0) = ((host_group / gc) * cfg.group_rows, (host_group % gc) * cfg.group_cols);
    let (k, c) = (link_gain * cfg.spring_k, link_gain * cfg.damper_c);
    let mut into_new = Mat::zeros(n, n);
    let mut into_host = Mat::zeros(n, n);
    for lr in 0..cfg.group_rows {
        let f_new = lr * cfg.group_cols;
        let f_host = lr * cfg.group_cols + cfg.group_cols - 1;
        let m_new = own_masses[f_new];
        let m_host = host_masses[(host_row0 + lr) * cfg.cols + host_col0 + cfg.group_cols - 1];
        let axes = if cfg.links == LinkAxes::Along { 0..1 } else { 0..2 };
        for axis in axes {
            let p_new = STATES_PER_MASS * f_new + 2 * axis;
            let p_host = STATES_PER_MASS * f_host + 2 * axis;
            into_new[(p_new + 1, p_host)] = k / m_new;
            into_new[(p_new + 1, p_host + 1)] = c / m_new;
            into_host[(p_host + 1, p_new)] = k / m_host;
            into_host[(p_host + 1, p_new + 1)] = c / m_host;
        }
    }
    let d = discretize_zoh(
        &group.a,
        &group.b,
        &BTreeMap::from([(0usize, into_new), (1usize, into_host.clone())]),
        cfg.sample_time,
    )?;
    // The host-side block uses the host dynamics for its hold integral.
    let host_continuous = build_continuous(cfg)?.remove(host_group);
    let host_coupling = integrated_map(&host_continuous.a, &into_host, cfg.sample_time)?;
    let sub = Subsystem {
        id,
        a: d.a,
        b: d.b,
        c: build_outputs(&block_cfg).remove(0),
        d: Mat::from_element(n, 1, 1.0),
        couplings: BTreeMap::from([(host, d.couplings[&0].clone())]),
        error_set: Zonotope::from_box(&error_half_widths(cfg, nm))?,
        dist_set: Zonotope::from_box(&[cfg.dist_bound])?,
    };
    Ok((sub, host_coupling))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank(m: &Mat) -> usize {
        let sv = m.singular_values();
        let tol = sv.max() * 1e-10;
        sv.iter().filter(|v| **v > tol).count()
    }

    #[test]
    fn isolated_mass_is_double_integrator() {
        let cfg = MassArrayConfig {
            rows: 1,
            cols: 1,
            group_rows: 1,
            group_cols: 1,
            boundary: Boundary::Free,
            ..MassArrayConfig::default()
        };
        let g = build_continuous(&cfg).unwrap();
        let expected = Mat::from_row_slice(
            4,
            4,
            &[0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., 0., 0.],
        );
        assert_eq!(g[0].a, expected);
        assert!(g[0].couplings.is_empty());
    }

    #[test]
    fn two_mass_chain_follows_newton() {
        let cfg = MassArrayConfig {
            rows: 1,
            cols: 2,
            group_rows: 1,
            group_cols: 1,
            boundary: Boundary::Free,
            links: LinkAxes::Both,
            ..MassArrayConfig::default()
        };
        let m = cfg.masses();
        let g = build_continuous(&cfg).unwrap();
        let (k, c) = (cfg.spring_k, cfg.damper_c);
        assert!((g[0].a[(1, 0)] + k / m[0]).abs() < 1e-15);
        assert!((g[0].a[(1, 1)] + c / m[0]).abs() < 1e-15);
        assert!((g[0].couplings[&1][(1, 0)] - k / m[0]).abs() < 1e-15);
        assert!((g[1].couplings[&0][(1, 0)] - k / m[1]).abs() < 1e-15);
        assert!((g[0].couplings[&1][(1, 0)] * m[0] - g[1].couplings[&0][(1, 0)] * m[1]).abs() < 1e-15);
        assert_eq!(g[0].a[(3, 2)], g[0].a[(1, 0)]);

        let along = build_continuous(&MassArrayConfig {
            links: LinkAxes::Along,
            ..cfg
        })
        .unwrap();
        assert_eq!(along[0].a.view((0, 0), (2, 2)), g[0].a.view((0, 0), (2, 2)));
        assert_eq!(along[0].a[(3, 2)], 0.0);
        assert_eq!(along[0].couplings[&1][(3, 2)], 0.0);
    }

    #[test]
    fn default_grid_has_four_blocks_of_order_sixteen_with_two_neighbours() {
        for boundary in [Boundary::Free, Boundary::Walls] {
            let cfg = MassArrayConfig {
                boundary,
                ..MassArrayConfig::default()
            };
            let plant = build_plant(&cfg).unwrap();
            assert_eq!(plant.len(), 4);
            for s in &plant {
                assert_eq!(s.order(), 16);
                assert_eq!(s.couplings.len(), 2);
                assert_eq!(s.d, Mat::from_element(16, 1, 1.0));
            }
        }
    }

    #[test]
    fn outputs_are_selectors_and_observable() {
        for outputs in [OutputLayout::LeadingRow, OutputLayout::FacingRow] {
            let cfg = MassArrayConfig {
                outputs,
                ..MassArrayConfig::default()
            };
            let plant = build_plant(&cfg).unwrap();
            for s in &plant {
                assert_eq!(s.c.shape(), (8, 16));
                assert!(s.c.iter().all(|v| *v == 0.0 || *v == 1.0));
                assert_eq!(&s.c * s.c.transpose(), Mat::identity(8, 8));
                let mut obs = Vec::new();
                let mut ca = s.c.clone();
                for _ in 0..16 {
                    obs.push(ca.transpose());
                    ca = &ca * &s.a;
                }
                let o = linalg::hcat(&obs, 16).transpose();
                assert_eq!(rank(&o), 16);
            }
        }
    }

    #[test]
    fn zoh_examples() {
        let d = discretize_zoh(&Mat::zeros(2, 2), &Mat::identity(2, 2), &BTreeMap::new(), 0.2).unwrap();
        assert_eq!(d.a, Mat::identity(2, 2));
        assert!((d.b - Mat::identity(2, 2) * 0.2).norm() < 1e-15);
        let s = discretize_zoh(&Mat::from_element(1, 1, -1.0), &Mat::zeros(1, 0), &BTreeMap::new(), 0.2).unwrap();
        assert!((s.a[(0, 0)] - 0.818_730_753_077_981_8).abs() < 1e-14);
        let di = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let d = discretize_zoh(&di, &Mat::zeros(2, 0), &BTreeMap::new(), 0.3).unwrap();
        assert!((d.a - Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn small_step_recovers_continuous_matrix() {
        let cfg = MassArrayConfig::default();
        let g = &build_continuous(&cfg).unwrap()[0];
        let t = 1e-4;
        let d = discretize_zoh(&g.a, &g.b, &g.couplings, t).unwrap();
        let approx = (&d.a - Mat::identity(16, 16)) / t;
        assert!((approx - &g.a).norm() <= 1e-3 * g.a.norm());
    }

    #[test]
    fn equal_masses_give_symmetric_position_coupling() {
        let cfg = MassArrayConfig {
            mass_range: (7.0, 7.0),
            ..MassArrayConfig::default()
        };
        let g = build_continuous(&cfg).unwrap();
        for (i, gi) in g.iter().enumerate() {
            for (j, block) in &gi.couplings {
                let back = &g[*j].couplings[&i];
                let pos = |m: &Mat| Mat::from_fn(8, 8, |r, c| m[(2 * r + 1, 2 * c)]);
                assert_eq!(pos(block), pos(back).transpose());
            }
        }
    }

    #[test]
    fn rejects_indivisible_grid() {
        let cfg = MassArrayConfig {
            rows: 3,
            ..MassArrayConfig::default()
        };
        assert!(build_plant(&cfg).is_err());
    }

    #[test]
    fn extension_block_couples_only_to_host() {
        let cfg = MassArrayConfig::default();
        let (sub, host_block) = extension_block(&cfg, SubsystemId(5), SubsystemId(2), 0.1, 99).unwrap();
        assert_eq!(sub.couplings.keys().copied().collect::<Vec<_>>(), vec![SubsystemId(2)]);
        assert_eq!(host_block.shape(), (16, 16));
        assert!(host_block.norm() > 0.0);
    }
}
