//! Local estimator design: coupling attenuation, Riccati gain, Q/R search and
//! the RPI step, run per subsystem with access to parent data only.

pub mod attenuate;
pub mod dare;
pub mod design;
pub mod search;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::linalg::{serde_rows, Mat};
use crate::model::{ModelError, ObserverGains, SubsystemId};
use crate::rpi::RpiError;

pub use attenuate::{attenuate_coupling, Attenuation, AttenuationNorm};
pub use dare::{local_gain, solve_dare, DareSolution};
pub use design::{
    certify_local, design_lse, design_network, local_quantities, StandardDesigner, DeltaPolicy, DesignOptions, LocalQuantities,
    LocalView, LseDesign, LseDesigner, ParentView,
};
pub use search::{search_qr, SearchDiagnostics, SearchOptions, SearchOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossGain {
    #[serde(with = "serde_rows")]
    pub gain: Mat,
    pub delta: bool,
}

/// Gains of one local estimator together with the tuning that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    #[serde(with = "serde_rows")]
    pub local: Mat,
    pub cross: BTreeMap<SubsystemId, CrossGain>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(with = "serde_rows")]
    pub riccati: Mat,
}

impl ObserverGains for GainSet {
    fn local_gain(&self) -> &Mat {
        &self.local
    }

    fn cross_gain(&self, parent: SubsystemId) -> Option<&Mat> {
        self.cross.get(&parent).filter(|c| c.delta).map(|c| &c.gain)
    }
}

impl GainSet {
    pub fn delta(&self, parent: SubsystemId) -> bool {
        self.cross.get(&parent).is_some_and(|c| c.delta)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("no Q/R satisfies the small-gain conditions ({0})")]
    Step2Infeasible(SearchDiagnostics),
    #[error("RPI set not contained in the error set (margin {margin:.3e})")]
    ContainmentFailed { margin: f64 },
    #[error("one-step disturbance set exceeds the error set (margin {margin:.3e})")]
    NecessaryConditionViolated { margin: f64 },
    #[error("Riccati iteration did not converge after {iterations} iterations")]
    DareDivergence { iterations: usize },
    #[error("innovation covariance R + C P Cᵀ is not positive definite")]
    IndefiniteInnovation,
    #[error("local error matrix is not Schur (spectral radius {spectral_radius:.6})")]
    NotSchur { spectral_radius: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rpi(RpiError),
}

impl From<RpiError> for SynthesisError {
    fn from(e: RpiError) -> Self {
        match e {
            RpiError::ContainmentFailed { margin } => SynthesisError::ContainmentFailed { margin },
            RpiError::NotSchur(spectral_radius) => SynthesisError::NotSchur { spectral_radius },
            other => SynthesisError::Rpi(other),
        }
    }
}

impl SynthesisError {
    /// Short pipeline stage name used in reports.
    pub fn stage(&self) -> &'static str {
        match self {
            SynthesisError::NecessaryConditionViolated { .. } => "necessary_condition",
            SynthesisError::Step2Infeasible(_)
            | SynthesisError::DareDivergence { .. }
            | SynthesisError::IndefiniteInnovation
            | SynthesisError::NotSchur { .. } => "gain_search",
            SynthesisError::ContainmentFailed { .. } | SynthesisError::Rpi(_) => "rpi",
            SynthesisError::Analysis(_) => "analysis",
            SynthesisError::Model(_) | SynthesisError::Dimension(_) => "input",
        }
    }
}
