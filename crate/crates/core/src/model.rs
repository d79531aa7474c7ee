//! Plant decomposition into coupled subsystems and the collective error matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat};
use crate::zonotope::Zonotope;

/// Stable subsystem identifier. Never reused or renumbered after removals.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SubsystemId(pub u32);

impl fmt::Display for SubsystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One subsystem `x⁺ = A x + B u + Σ_j A_ij x_j + D w`, `y = C x`.
#[derive(Debug, Clone)]
pub struct Subsystem {
    pub id: SubsystemId,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    /// Parent id → `A_ij`.
    pub couplings: BTreeMap<SubsystemId, Mat>,
    pub error_set: Zonotope,
    pub dist_set: Zonotope,
}

impl Subsystem {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn num_disturbances(&self) -> usize {
        self.d.ncols()
    }

    pub fn parents(&self) -> impl Iterator<Item = SubsystemId> + '_ {
        self.couplings.keys().copied()
    }

    /// `W_i = {0}`, either because there is no disturbance channel or `D_i Δ_i = 0`.
    pub fn is_disturbance_free(&self) -> bool {
        self.dist_set.is_trivial() || (&self.d * self.dist_set.generators()).iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    DuplicateId(SubsystemId),
    UnknownParent {
        child: SubsystemId,
        parent: SubsystemId,
    },
    SelfCoupling(SubsystemId),
    ZeroCoupling {
        child: SubsystemId,
        parent: SubsystemId,
    },
    Dimension {
        id: SubsystemId,
        block: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateId(id) => write!(f, "duplicate subsystem id {id}"),
            Finding::UnknownParent { child, parent } => {
                write!(f, "subsystem {child}: unknown parent {parent}")
            }
            Finding::SelfCoupling(id) => write!(f, "subsystem {id}: coupling to itself"),
            Finding::ZeroCoupling { child, parent } => {
                write!(f, "subsystem {child}: coupling from {parent} is identically zero")
            }
            Finding::Dimension {
                id,
                block,
                expected,
                actual,
            } => write!(
                f,
                "subsystem {id}: {block} is {}x{}, expected {}x{}",
                actual.0, actual.1, expected.0, expected.1
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, finding) in self.findings.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Checks dimensions, parent references and coupling sanity for a list of subsystems.
pub fn validate_graph(subsystems: &[Subsystem]) -> ValidationReport {
    let mut findings = Vec::new();
    let mut orders = BTreeMap::new();
    for s in subsystems {
        if orders.insert(s.id, s.order()).is_some() {
            findings.push(Finding::DuplicateId(s.id));
        }
    }
    let mut dim = |id: SubsystemId, block: &str, expected: (usize, usize), m: &Mat| {
        if m.shape() != expected {
            findings.push(Finding::Dimension {
                id,
                block: block.to_string(),
                expected,
                actual: m.shape(),
            });
        }
    };
    for s in subsystems {
        let n = s.order();
        dim(s.id, "A_ii", (n, n), &s.a);
        dim(s.id, "B_i", (n, s.b.ncols()), &s.b);
        dim(s.id, "C_i", (s.c.nrows(), n), &s.c);
        dim(s.id, "D_i", (n, s.d.ncols()), &s.d);
        dim(s.id, "E_i generators", (n, s.error_set.generators().ncols()), s.error_set.generators());
        dim(
            s.id,
            "W_i generators",
            (s.d.ncols(), s.dist_set.generators().ncols()),
            s.dist_set.generators(),
        );
        for (parent, a_ij) in &s.couplings {
            if let Some(&nj) = orders.get(parent) {
                if *parent != s.id {
                    dim(s.id, &format!("A_{{{},{}}}", s.id, parent), (n, nj), a_ij);
                }
            }
        }
    }
    for s in subsystems {
        for (parent, a_ij) in &s.couplings {
            if *parent == s.id {
                findings.push(Finding::SelfCoupling(s.id));
            } else if !orders.contains_key(parent) {
                findings.push(Finding::UnknownParent {
                    child: s.id,
                    parent: *parent,
                });
            } else if a_ij.iter().all(|v| *v == 0.0) {
                findings.push(Finding::ZeroCoupling {
                    child: s.id,
                    parent: *parent,
                });
            }
        }
    }
    ValidationReport { findings }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid plant: {0}")]
    Invalid(ValidationReport),
    #[error("unknown subsystem {0}")]
    UnknownSubsystem(SubsystemId),
    #[error("gain block {block} of subsystem {id} is {actual:?}, expected {expected:?}")]
    GainDimension {
        id: SubsystemId,
        block: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("no gains supplied for subsystem {0}")]
    MissingGains(SubsystemId),
}

/// Validated collection of subsystems with the derived child relation.
#[derive(Debug, Clone)]
pub struct PlantGraph {
    subsystems: BTreeMap<SubsystemId, Subsystem>,
    children: BTreeMap<SubsystemId, BTreeSet<SubsystemId>>,
}

impl PlantGraph {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self, ModelError> {
        let report = validate_graph(&subsystems);
        if !report.is_empty() {
            return Err(ModelError::Invalid(report));
        }
        let mut children: BTreeMap<SubsystemId, BTreeSet<SubsystemId>> =
            subsystems.iter().map(|s| (s.id, BTreeSet::new())).collect();
        for s in &subsystems {
            for parent in s.parents() {
                children.entry(parent).or_default().insert(s.id);
            }
        }
        Ok(Self {
            subsystems: subsystems.into_iter().map(|s| (s.id, s)).collect(),
            children,
        })
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SubsystemId> + '_ {
        self.subsystems.keys().copied()
    }

    pub fn subsystems(&self) -> impl Iterator<Item = &Subsystem> {
        self.subsystems.values()
    }

    pub fn get(&self, id: SubsystemId) -> Option<&Subsystem> {
        self.subsystems.get(&id)
    }

    pub fn subsystem(&self, id: SubsystemId) -> Result<&Subsystem, ModelError> {
        self.get(id).ok_or(ModelError::UnknownSubsystem(id))
    }

    /// Children `𝒮_i = {j : i ∈ 𝒩_j}`.
    pub fn children(&self, id: SubsystemId) -> BTreeSet<SubsystemId> {
        self.children.get(&id).cloned().unwrap_or_default()
    }

    pub fn parents(&self, id: SubsystemId) -> BTreeSet<SubsystemId> {
        self.get(id)
            .map(|s| s.parents().collect())
            .unwrap_or_default()
    }

    /// Next id for insertion: one past the largest id ever present in this graph.
    pub fn next_id(&self) -> SubsystemId {
        SubsystemId(self.subsystems.keys().last().map_or(1, |id| id.0 + 1))
    }

    pub fn total_order(&self) -> usize {
        self.subsystems.values().map(|s| s.order()).sum()
    }

    /// Offsets of each subsystem's state block in the stacked state vector.
    pub fn state_offsets(&self) -> BTreeMap<SubsystemId, usize> {
        let mut offset = 0;
        self.subsystems
            .values()
            .map(|s| {
                let o = offset;
                offset += s.order();
                (s.id, o)
            })
            .collect()
    }

    pub fn into_subsystems(self) -> Vec<Subsystem> {
        self.subsystems.into_values().collect()
    }
}

/// Gain data needed to assemble `Ā`: local gain and per-parent cross gains.
pub trait ObserverGains {
    fn local_gain(&self) -> &Mat;
    /// `Some((L_ij, δ_ij))` for a parent `j`; `None` means `δ_ij = 0`.
    fn cross_gain(&self, parent: SubsystemId) -> Option<&Mat>;
}

#[derive(Debug, Clone)]
pub struct CollectiveMatrices {
    pub a_bar: Mat,
    pub d: Mat,
    pub offsets: BTreeMap<SubsystemId, usize>,
}

/// Stacks the collective error dynamics `e⁺ = Ā e + D w`.
///
/// Block `(i,i)` is `A_ii + L_ii C_i`, block `(i,j)` is `A_ij + δ_ij L_ij C_j`
/// for parents and zero otherwise, and `D = diag(D_1, …, D_M)`.
pub fn assemble_collective<G: ObserverGains>(
    graph: &PlantGraph,
    gains: &BTreeMap<SubsystemId, G>,
) -> Result<CollectiveMatrices, ModelError> {
    let offsets = graph.state_offsets();
    let n = graph.total_order();
    let mut a_bar = Mat::zeros(n, n);
    for s in graph.subsystems() {
        let g = gains.get(&s.id).ok_or(ModelError::MissingGains(s.id))?;
        let oi = offsets[&s.id];
        let ni = s.order();
        let l = g.local_gain();
        if l.shape() != (ni, s.num_outputs()) {
            return Err(ModelError::GainDimension {
                id: s.id,
                block: format!("L_{{{},{}}}", s.id, s.id),
                expected: (ni, s.num_outputs()),
                actual: l.shape(),
            });
        }
        let diag_block = &s.a + l * &s.c;
        a_bar.view_mut((oi, oi), (ni, ni)).copy_from(&diag_block);
        for (parent, a_ij) in &s.couplings {
            let p = graph.subsystem(*parent)?;
            let oj = offsets[parent];
            let mut block = a_ij.clone();
            if let Some(l_ij) = g.cross_gain(*parent) {
                if l_ij.shape() != (ni, p.num_outputs()) {
                    return Err(ModelError::GainDimension {
                        id: s.id,
                        block: format!("L_{{{},{}}}", s.id, parent),
                        expected: (ni, p.num_outputs()),
                        actual: l_ij.shape(),
                    });
                }
                block += l_ij * &p.c;
            }
            a_bar.view_mut((oi, oj), (ni, p.order())).copy_from(&block);
        }
    }
    let d_blocks: Vec<&Mat> = graph.subsystems().map(|s| &s.d).collect();
    Ok(CollectiveMatrices {
        a_bar,
        d: linalg::block_diag(&d_blocks),
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scalar(id: u32, a: f64, parents: &[(u32, f64)]) -> Subsystem {
        Subsystem {
            id: SubsystemId(id),
            a: Mat::from_element(1, 1, a),
            b: Mat::zeros(1, 0),
            c: Mat::from_element(1, 1, 1.0),
            d: Mat::zeros(1, 0),
            couplings: parents
                .iter()
                .map(|&(j, v)| (SubsystemId(j), Mat::from_element(1, 1, v)))
                .collect(),
            error_set: Zonotope::from_box(&[1.0]).unwrap(),
            dist_set: Zonotope::from_box(&[]).unwrap(),
        }
    }

    struct Plain(Mat, BTreeMap<SubsystemId, Mat>);
    impl ObserverGains for Plain {
        fn local_gain(&self) -> &Mat {
            &self.0
        }
        fn cross_gain(&self, parent: SubsystemId) -> Option<&Mat> {
            self.1.get(&parent)
        }
    }

    #[test]
    fn chain_validates_cleanly() {
        let subs = vec![scalar(1, 0.5, &[]), scalar(2, 0.5, &[(1, 0.1)])];
        assert!(validate_graph(&subs).is_empty());
        let g = PlantGraph::new(subs).unwrap();
        assert_eq!(g.children(SubsystemId(1)), BTreeSet::from([SubsystemId(2)]));
        assert!(g.children(SubsystemId(2)).is_empty());
        assert_eq!(g.next_id(), SubsystemId(3));
    }

    #[test]
    fn unknown_parent_is_reported() {
        let subs = vec![scalar(1, 0.5, &[(7, 0.1)])];
        let report = validate_graph(&subs);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].to_string(), "subsystem 1: unknown parent 7");
    }

    #[test]
    fn coupling_dimension_is_reported() {
        let mut s2 = scalar(2, 0.5, &[]);
        s2.couplings.insert(SubsystemId(1), Mat::from_element(1, 2, 1.0));
        let report = validate_graph(&[scalar(1, 0.5, &[]), s2]);
        assert_eq!(
            report.findings,
            vec![Finding::Dimension {
                id: SubsystemId(2),
                block: "A_{2,1}".into(),
                expected: (1, 1),
                actual: (1, 2)
            }]
        );
        assert!(report.to_string().contains("expected 1x1"));
    }

    #[test]
    fn self_and_zero_couplings_are_reported() {
        let subs = vec![scalar(1, 0.5, &[(1, 0.3)]), scalar(2, 0.5, &[(1, 0.0)])];
        let report = validate_graph(&subs);
        assert!(report.findings.contains(&Finding::SelfCoupling(SubsystemId(1))));
        assert!(report.findings.contains(&Finding::ZeroCoupling {
            child: SubsystemId(2),
            parent: SubsystemId(1)
        }));
    }

    #[test]
    fn zero_gain_single_subsystem_gives_a() {
        let g = PlantGraph::new(vec![scalar(1, 0.7, &[])]).unwrap();
        let gains = BTreeMap::from([(SubsystemId(1), Plain(Mat::zeros(1, 1), BTreeMap::new()))]);
        let c = assemble_collective(&g, &gains).unwrap();
        assert_eq!(c.a_bar, Mat::from_element(1, 1, 0.7));
    }

    #[test]
    fn decoupled_is_block_diagonal_and_delta_enters_through_l_c() {
        let g = PlantGraph::new(vec![scalar(1, 0.7, &[]), scalar(2, 0.2, &[(1, 0.4)])]).unwrap();
        let mut gains = BTreeMap::from([
            (SubsystemId(1), Plain(Mat::from_element(1, 1, -0.1), BTreeMap::new())),
            (SubsystemId(2), Plain(Mat::from_element(1, 1, -0.2), BTreeMap::new())),
        ]);
        let c = assemble_collective(&g, &gains).unwrap();
        assert!((c.a_bar[(0, 0)] - 0.6).abs() < 1e-15);
        assert_eq!(c.a_bar[(0, 1)], 0.0);
        assert!((c.a_bar[(1, 0)] - 0.4).abs() < 1e-15);
        gains.get_mut(&SubsystemId(2)).unwrap().1.insert(SubsystemId(1), Mat::from_element(1, 1, -0.4));
        let c = assemble_collective(&g, &gains).unwrap();
        assert!(c.a_bar[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn wrong_gain_shape_names_the_block() {
        let g = PlantGraph::new(vec![scalar(1, 0.7, &[])]).unwrap();
        let gains = BTreeMap::from([(SubsystemId(1), Plain(Mat::zeros(2, 1), BTreeMap::new()))]);
        let err = assemble_collective(&g, &gains).unwrap_err();
        assert!(err.to_string().contains("L_{1,1}"));
    }
}
