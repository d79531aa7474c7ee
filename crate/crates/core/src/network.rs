//! A plant together with the certified estimators of all its subsystems, and
//! the gains file that persists them.
//!
//! The gains file stores gains, RPI descriptors and certificates keyed by the
//! content hash of the plant they were designed for. RPI generators are
//! regenerated from the descriptors on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SmallGainReport;
use crate::model::{assemble_collective, CollectiveMatrices, ModelError, PlantGraph, SubsystemId};
use crate::plant_file::graph_hash;
use crate::rpi::{RpiDescriptor, RpiSet};
use crate::synthesis::{local_quantities, GainSet, LocalView, LseDesign, SynthesisError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed gains file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("gains were designed for plant {expected}, but the plant hashes to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("subsystem {id}: no estimator")]
    MissingEstimator { id: SubsystemId },
    #[error("subsystem {id}: estimator for a subsystem that is not in the plant")]
    UnknownEstimator { id: SubsystemId },
    #[error("subsystem {id}: {source}")]
    Rebuild {
        id: SubsystemId,
        #[source]
        source: SynthesisError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Certified estimator of one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRecord {
    pub gains: GainSet,
    pub rpi: RpiSet,
    pub report: SmallGainReport,
}

impl From<LseDesign> for EstimatorRecord {
    fn from(d: LseDesign) -> Self {
        Self {
            gains: d.gains,
            rpi: d.rpi,
            report: d.report,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertifiedNetwork {
    pub graph: PlantGraph,
    pub estimators: BTreeMap<SubsystemId, EstimatorRecord>,
}

impl CertifiedNetwork {
    /// Requires exactly one estimator per subsystem.
    pub fn new(graph: PlantGraph, estimators: BTreeMap<SubsystemId, EstimatorRecord>) -> Result<Self, NetworkError> {
        if let Some(id) = graph.ids().find(|id| !estimators.contains_key(id)) {
            return Err(NetworkError::MissingEstimator { id });
        }
        if let Some(id) = estimators.keys().find(|id| graph.get(**id).is_none()) {
            return Err(NetworkError::UnknownEstimator { id: *id });
        }
        Ok(Self { graph, estimators })
    }

    /// Collects successful designs; returns the failures if there are any.
    pub fn from_designs(
        graph: PlantGraph,
        designs: BTreeMap<SubsystemId, Result<LseDesign, SynthesisError>>,
    ) -> Result<Self, BTreeMap<SubsystemId, SynthesisError>> {
        let mut records = BTreeMap::new();
        let mut failures = BTreeMap::new();
        for (id, d) in designs {
            match d {
                Ok(d) => {
                    records.insert(id, d.into());
                }
                Err(e) => {
                    failures.insert(id, e);
                }
            }
        }
        if !failures.is_empty() {
            return Err(failures);
        }
        Ok(Self {
            graph,
            estimators: records,
        })
    }

    pub fn gains(&self) -> BTreeMap<SubsystemId, GainSet> {
        self.estimators.iter().map(|(id, r)| (*id, r.gains.clone())).collect()
    }

    pub fn rpi_sets(&self) -> BTreeMap<SubsystemId, RpiSet> {
        self.estimators.iter().map(|(id, r)| (*id, r.rpi.clone())).collect()
    }

    pub fn collective(&self) -> Result<CollectiveMatrices, ModelError> {
        assemble_collective(&self.graph, &self.gains())
    }

    pub fn plant_hash(&self) -> String {
        graph_hash(&self.graph)
    }

    pub fn to_file(&self) -> GainsFile {
        GainsFile {
            plant_hash: self.plant_hash(),
            subsystems: self
                .estimators
                .iter()
                .map(|(id, r)| {
                    (
                        *id,
                        GainsEntry {
                            gains: r.gains.clone(),
                            rpi: r.rpi.descriptor,
                            report: r.report.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsEntry {
    pub gains: GainSet,
    pub rpi: RpiDescriptor,
    pub report: SmallGainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    pub plant_hash: String,
    pub subsystems: BTreeMap<SubsystemId, GainsEntry>,
}

impl GainsFile {
    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("gains serialize");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), NetworkError> {
        std::fs::write(path, self.render()).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Pairs the stored estimators with `graph`, rejecting a stale file.
    pub fn into_network(self, graph: PlantGraph) -> Result<CertifiedNetwork, NetworkError> {
        let actual = graph_hash(&graph);
        if actual != self.plant_hash {
            return Err(NetworkError::HashMismatch {
                expected: self.plant_hash,
                actual,
            });
        }
        let mut estimators = BTreeMap::new();
        for (id, entry) in self.subsystems {
            let rebuild = |e: SynthesisError| NetworkError::Rebuild { id, source: e };
            let view = LocalView::new(&graph, id).map_err(|_| NetworkError::UnknownEstimator { id })?;
            let lq = local_quantities(&view, &entry.gains).map_err(rebuild)?;
            let rpi = RpiSet::rebuild(&lq.a_bar, &lq.psi, &view.subsystem.error_set, entry.rpi)
                .map_err(|e| rebuild(e.into()))?;
            estimators.insert(
                id,
                EstimatorRecord {
                    gains: entry.gains,
                    rpi,
                    report: entry.report,
                },
            );
        }
        CertifiedNetwork::new(graph, estimators)
    }
}
