//! Plug-in and unplug transactions on a certified network.
//!
//! Both operations are pure: they read a network and return a new one on
//! success. A rejected transaction returns no network, so the caller's graph
//! and gains stay as they were.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{SeriesOptions, SmallGainReport};
use crate::linalg::Mat;
use crate::model::{PlantGraph, Subsystem, SubsystemId};
use crate::network::{CertifiedNetwork, EstimatorRecord};
use crate::rpi::{verify_invariance, InvarianceReport};
use crate::synthesis::{certify_local, local_quantities, LocalView, LseDesign, LseDesigner, SynthesisError};

/// Slack on the no-increase check of recomputed β and γ after unplug.
pub const MONOTONICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransactionKind {
    PlugIn,
    Unplug,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected {
        reason: String,
        stage: String,
        failing: SubsystemId,
    },
}

/// β and γ of a surviving child before and after an unplug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recertification {
    pub before: SmallGainReport,
    pub after: SmallGainReport,
    pub invariance: InvarianceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpTransaction {
    pub kind: TransactionKind,
    pub target: SubsystemId,
    /// Subsystems whose estimators had to be redesigned.
    pub redesigned: BTreeSet<SubsystemId>,
    /// Redesigns performed only to improve performance after an unplug.
    pub optional_redesigns: BTreeSet<SubsystemId>,
    pub recertified: BTreeMap<SubsystemId, Recertification>,
    pub outcome: Outcome,
}

impl PnpTransaction {
    fn new(kind: TransactionKind, target: SubsystemId) -> Self {
        Self {
            kind,
            target,
            redesigned: BTreeSet::new(),
            optional_redesigns: BTreeSet::new(),
            recertified: BTreeMap::new(),
            outcome: Outcome::Accepted,
        }
    }

    fn reject(mut self, failing: SubsystemId, stage: &str, reason: impl Into<String>) -> Self {
        self.outcome = Outcome::Rejected {
            reason: reason.into(),
            stage: stage.to_string(),
            failing,
        };
        self
    }

    pub fn accepted(&self) -> bool {
        self.outcome == Outcome::Accepted
    }
}

/// A subsystem to plug in, with the couplings `A_j,new` of its children.
#[derive(Debug, Clone)]
pub struct PlugIn {
    pub subsystem: Subsystem,
    pub child_couplings: BTreeMap<SubsystemId, Mat>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub series: SeriesOptions,
    /// Samples for the invariance re-check of survivors after unplug.
    pub invariance_trials: usize,
    pub seed: u64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            series: SeriesOptions::default(),
            invariance_trials: 1000,
            seed: 0,
        }
    }
}

/// Wraps a designer and records every subsystem it is asked to design.
#[derive(Debug)]
pub struct AuditedDesigner<D> {
    inner: D,
    calls: Mutex<Vec<SubsystemId>>,
}

impl<D: LseDesigner> AuditedDesigner<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> BTreeSet<SubsystemId> {
        self.calls.lock().expect("audit lock").iter().copied().collect()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("audit lock").len()
    }
}

impl<D: LseDesigner> LseDesigner for AuditedDesigner<D> {
    fn design(&self, view: &LocalView<'_>) -> Result<LseDesign, SynthesisError> {
        self.calls.lock().expect("audit lock").push(view.id());
        self.inner.design(view)
    }
}

fn design_all<D: LseDesigner>(
    graph: &PlantGraph,
    ids: &BTreeSet<SubsystemId>,
    designer: &D,
) -> BTreeMap<SubsystemId, Result<LseDesign, SynthesisError>> {
    ids.par_iter()
        .map(|&id| {
            let result = LocalView::new(graph, id)
                .map_err(SynthesisError::from)
                .and_then(|v| designer.design(&v));
            (id, result)
        })
        .collect()
}

/// Adds a subsystem, designs its estimator, then redesigns its children.
/// Every other estimator is carried over unchanged.
pub fn plug_in<D: LseDesigner>(
    net: &CertifiedNetwork,
    plug: &PlugIn,
    designer: &D,
) -> (PnpTransaction, Option<CertifiedNetwork>) {
    let target = plug.subsystem.id;
    let tx = PnpTransaction::new(TransactionKind::PlugIn, target);
    if net.graph.get(target).is_some() {
        return (tx.reject(target, "input", format!("subsystem {target} already exists")), None);
    }
    let mut subsystems = net.graph.clone().into_subsystems();
    for (child, coupling) in &plug.child_couplings {
        let Some(s) = subsystems.iter_mut().find(|s| s.id == *child) else {
            return (tx.reject(target, "input", format!("child {child} is not in the plant")), None);
        };
        s.couplings.insert(target, coupling.clone());
    }
    subsystems.push(plug.subsystem.clone());
    let graph = match PlantGraph::new(subsystems) {
        Ok(g) => g,
        Err(e) => return (tx.reject(target, "input", e.to_string()), None),
    };

    let mut tx = tx;
    tx.redesigned.insert(target);
    let own = design_all(&graph, &BTreeSet::from([target]), designer);
    let own = match own.into_values().next().expect("one design") {
        Ok(d) => d,
        Err(e) => return (tx.reject(target, e.stage(), e.to_string()), None),
    };

    let children = graph.children(target);
    tx.redesigned.extend(children.iter().copied());
    let mut estimators = net.estimators.clone();
    estimators.insert(target, own.into());
    for (id, result) in design_all(&graph, &children, designer) {
        match result {
            Ok(d) => {
                estimators.insert(id, d.into());
            }
            Err(e) => return (tx.reject(id, e.stage(), e.to_string()), None),
        }
    }
    match CertifiedNetwork::new(graph, estimators) {
        Ok(n) => (tx, Some(n)),
        Err(e) => (tx.reject(target, "input", e.to_string()), None),
    }
}

/// Removes a subsystem and every coupling to it. Survivors keep their gains
/// and RPI sets; the children's certificates and invariance are re-checked.
/// With `redesign_children`, children are redesigned afterwards for
/// performance; a failed optional redesign keeps the retained estimator.
pub fn unplug<D: LseDesigner>(
    net: &CertifiedNetwork,
    target: SubsystemId,
    redesign_children: bool,
    designer: &D,
    opts: PnpOptions,
) -> (PnpTransaction, Option<CertifiedNetwork>) {
    let tx = PnpTransaction::new(TransactionKind::Unplug, target);
    if net.graph.get(target).is_none() {
        return (tx.reject(target, "input", format!("subsystem {target} is not in the plant")), None);
    }
    let children = net.graph.children(target);
    let mut subsystems = net.graph.clone().into_subsystems();
    subsystems.retain(|s| s.id != target);
    for s in &mut subsystems {
        s.couplings.remove(&target);
    }
    let graph = match PlantGraph::new(subsystems) {
        Ok(g) => g,
        Err(e) => return (tx.reject(target, "input", e.to_string()), None),
    };
    let mut estimators = net.estimators.clone();
    estimators.remove(&target);
    for rec in estimators.values_mut() {
        rec.gains.cross.remove(&target);
    }

    let mut tx = tx;
    for &id in &children {
        let rec = estimators.get_mut(&id).expect("survivor estimator");
        let view = LocalView::new(&graph, id).expect("survivor in graph");
        let after = match certify_local(&view, &rec.gains, opts.series) {
            Ok(r) => r,
            Err(e) => return (tx.reject(id, "certification", e.to_string()), None),
        };
        let lq = match local_quantities(&view, &rec.gains) {
            Ok(lq) => lq,
            Err(e) => return (tx.reject(id, "certification", e.to_string()), None),
        };
        let invariance = verify_invariance(&rec.rpi, &lq.a_bar, &lq.psi, opts.invariance_trials, opts.seed);
        let before = rec.report.clone();
        let grew = |b: Option<f64>, a: Option<f64>| match (b, a) {
            (Some(b), Some(a)) => a > b + MONOTONICITY_TOL,
            _ => true,
        };
        let upper = |r: &SmallGainReport| (r.beta.map(|s| s.upper), r.gamma.map(|s| s.upper));
        let ((b0, g0), (b1, g1)) = (upper(&before), upper(&after));
        tx.recertified.insert(
            id,
            Recertification {
                before,
                after: after.clone(),
                invariance,
            },
        );
        if !after.certified() || grew(b0, b1) || grew(g0, g1) {
            return (tx.reject(id, "certification", "recomputed certificate exceeds its prior value"), None);
        }
        if !invariance.holds() {
            return (tx.reject(id, "rpi", format!("{} invariance violations", invariance.violations)), None);
        }
        rec.report = after;
    }

    if redesign_children {
        for (id, result) in design_all(&graph, &children, designer) {
            if let Ok(d) = result {
                estimators.insert(id, EstimatorRecord::from(d));
                tx.optional_redesigns.insert(id);
            }
        }
    }
    match CertifiedNetwork::new(graph, estimators) {
        Ok(n) => (tx, Some(n)),
        Err(e) => (tx.reject(target, "input", e.to_string()), None),
    }
}
