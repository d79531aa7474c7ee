//! Per-subsystem design: attenuation gains, Q/R search, RPI set.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::analysis::{self, NecessaryCheck, SeriesOptions, SmallGainReport};
use crate::linalg::Mat;
use crate::model::{ModelError, PlantGraph, Subsystem, SubsystemId};
use crate::rpi::{self, RpiOptions, RpiSet};
use crate::zonotope::{GeneratorSet, Zonotope};

use super::attenuate::{attenuate_coupling, AttenuationNorm};
use super::search::{search_qr, SearchOptions, SearchOutcome, SearchProblem};
use super::{CrossGain, GainSet, SynthesisError};

/// Cross gains below this Frobenius norm switch the communication link off.
pub const NEGLIGIBLE_GAIN: f64 = 1e-10;

/// Fixed data a parent exposes to its children: coupling, output map, error set.
#[derive(Debug, Clone, Copy)]
pub struct ParentView<'a> {
    pub id: SubsystemId,
    pub coupling: &'a Mat,
    pub output: &'a Mat,
    pub error_set: &'a Zonotope,
}

/// Everything a local design may read: the subsystem itself and its parents'
/// fixed parameters. Tuning knobs of other subsystems are not reachable.
#[derive(Debug, Clone)]
pub struct LocalView<'a> {
    pub subsystem: &'a Subsystem,
    pub parents: Vec<ParentView<'a>>,
}

impl<'a> LocalView<'a> {
    pub fn new(graph: &'a PlantGraph, id: SubsystemId) -> Result<Self, ModelError> {
        let subsystem = graph.subsystem(id)?;
        let parents = subsystem
            .couplings
            .iter()
            .map(|(j, a_ij)| {
                let p = graph.subsystem(*j)?;
                Ok(ParentView {
                    id: *j,
                    coupling: a_ij,
                    output: &p.c,
                    error_set: &p.error_set,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self { subsystem, parents })
    }

    pub fn id(&self) -> SubsystemId {
        self.subsystem.id
    }
}

/// Communication switches `δ_ij`: a default plus per-pair overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaPolicy {
    pub default: bool,
    pub overrides: BTreeMap<(SubsystemId, SubsystemId), bool>,
}

impl DeltaPolicy {
    pub fn all(delta: bool) -> Self {
        Self {
            default: delta,
            overrides: BTreeMap::new(),
        }
    }

    pub fn get(&self, child: SubsystemId, parent: SubsystemId) -> bool {
        self.overrides.get(&(child, parent)).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignOptions {
    pub norm: AttenuationNorm,
    pub deltas: DeltaPolicy,
    pub search: SearchOptions,
    pub rpi: RpiOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LseDesign {
    pub id: SubsystemId,
    pub gains: GainSet,
    pub report: SmallGainReport,
    pub rpi: RpiSet,
    pub psi: GeneratorSet,
    pub necessary: NecessaryCheck,
    pub evaluations: usize,
}

/// Runs the local design for one subsystem.
pub trait LseDesigner: Sync {
    fn design(&self, view: &LocalView<'_>) -> Result<LseDesign, SynthesisError>;
}

#[derive(Debug, Clone, Default)]
pub struct StandardDesigner {
    pub options: DesignOptions,
}

impl StandardDesigner {
    pub fn new(options: DesignOptions) -> Self {
        Self { options }
    }
}

impl LseDesigner for StandardDesigner {
    fn design(&self, view: &LocalView<'_>) -> Result<LseDesign, SynthesisError> {
        design_lse(view, &self.options)
    }
}

/// Matrices derived from a gain set: `Ā_ii`, `(Ā_ij, H_j♭)` per parent and `Ψ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalQuantities {
    pub a_bar: Mat,
    pub parents: Vec<(Mat, Mat)>,
    pub psi: GeneratorSet,
}

fn coupled_blocks(
    view: &LocalView<'_>,
    cross: &BTreeMap<SubsystemId, CrossGain>,
) -> Result<(Vec<(Mat, Mat)>, GeneratorSet), SynthesisError> {
    let s = view.subsystem;
    let mut blocks = Vec::with_capacity(view.parents.len());
    let mut images = Vec::with_capacity(view.parents.len());
    for p in &view.parents {
        let mut a_bar_ij = p.coupling.clone();
        if let Some(cg) = cross.get(&p.id).filter(|c| c.delta) {
            if cg.gain.shape() != (s.order(), p.output.nrows()) {
                return Err(SynthesisError::Dimension(format!(
                    "L_{{{},{}}} is {:?}, expected {:?}",
                    s.id,
                    p.id,
                    cg.gain.shape(),
                    (s.order(), p.output.nrows())
                )));
            }
            a_bar_ij += &cg.gain * p.output;
        }
        images.push((a_bar_ij.clone(), p.error_set.generator_set()));
        blocks.push((a_bar_ij, p.error_set.facet_pinv().clone()));
    }
    let psi = analysis::build_psi(s.order(), &images, &s.d, s.dist_set.generator_set())?;
    Ok((blocks, psi))
}

pub fn local_quantities(view: &LocalView<'_>, gains: &GainSet) -> Result<LocalQuantities, SynthesisError> {
    let s = view.subsystem;
    if gains.local.shape() != (s.order(), s.num_outputs()) {
        return Err(SynthesisError::Dimension(format!(
            "L_{{{},{}}} is {:?}, expected {:?}",
            s.id,
            s.id,
            gains.local.shape(),
            (s.order(), s.num_outputs())
        )));
    }
    let (parents, psi) = coupled_blocks(view, &gains.cross)?;
    Ok(LocalQuantities {
        a_bar: &s.a + &gains.local * &s.c,
        parents,
        psi,
    })
}

/// Recomputes the small-gain certificate of existing gains.
pub fn certify_local(
    view: &LocalView<'_>,
    gains: &GainSet,
    series: SeriesOptions,
) -> Result<SmallGainReport, SynthesisError> {
    let lq = local_quantities(view, gains)?;
    Ok(analysis::small_gain_report(
        &lq.a_bar,
        &view.subsystem.error_set,
        &lq.parents,
        &lq.psi,
        series,
    )?)
}

fn subsystem_seed(seed: u64, id: SubsystemId) -> u64 {
    seed ^ (u64::from(id.0).wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Designs one local estimator.
///
/// 1. Cross gains from coupling attenuation for every parent with `δ_ij = 1`;
///    a negligible optimizer switches the link off.
/// 2. Necessary condition `Ṽ_i ⊆ E_i`.
/// 3. Q/R search for the local gain.
/// 4. RPI set and its containment in `E_i`.
pub fn design_lse(view: &LocalView<'_>, opts: &DesignOptions) -> Result<LseDesign, SynthesisError> {
    let s = view.subsystem;
    let e_i = &s.error_set;
    let mut cross = BTreeMap::new();
    for p in &view.parents {
        let zero = Mat::zeros(s.order(), p.output.nrows());
        let mut entry = CrossGain {
            gain: zero.clone(),
            delta: false,
        };
        if opts.deltas.get(s.id, p.id) {
            let att = attenuate_coupling(e_i.facets(), p.coupling, p.output, p.error_set.facet_pinv(), opts.norm);
            if att.gain.norm() >= NEGLIGIBLE_GAIN {
                entry = CrossGain {
                    gain: att.gain,
                    delta: true,
                };
            }
        }
        cross.insert(p.id, entry);
    }
    let (parents, psi) = coupled_blocks(view, &cross)?;

    let necessary = analysis::necessary_condition(e_i, &psi);
    if !necessary.holds {
        return Err(SynthesisError::NecessaryConditionViolated {
            margin: necessary.margin,
        });
    }

    let problem = SearchProblem {
        a: &s.a,
        c: &s.c,
        error_set: e_i,
        parents: &parents,
        psi: &psi,
        disturbed: !s.is_disturbance_free(),
    };
    let search_opts = SearchOptions {
        seed: subsystem_seed(opts.search.seed, s.id),
        ..opts.search.clone()
    };
    let sol = match search_qr(&problem, &search_opts) {
        SearchOutcome::Feasible(sol) => sol,
        SearchOutcome::Infeasible(diag) => return Err(SynthesisError::Step2Infeasible(diag)),
    };

    let rpi = rpi::mrpi_outer(&sol.a_bar, &psi, e_i, &opts.rpi)?;
    Ok(LseDesign {
        id: s.id,
        gains: GainSet {
            local: sol.gain,
            cross,
            q: sol.q,
            r: sol.r,
            riccati: sol.riccati,
        },
        report: sol.report,
        rpi,
        psi,
        necessary,
        evaluations: sol.evaluations,
    })
}

/// Designs every subsystem of `graph` in parallel.
pub fn design_network<D: LseDesigner>(
    graph: &PlantGraph,
    designer: &D,
) -> BTreeMap<SubsystemId, Result<LseDesign, SynthesisError>> {
    let ids: Vec<SubsystemId> = graph.ids().collect();
    ids.par_iter()
        .map(|&id| {
            let result = LocalView::new(graph, id)
                .map_err(SynthesisError::from)
                .and_then(|view| designer.design(&view));
            (id, result)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn scalar(id: u32, a: f64, e: f64, parents: &[(u32, f64)], w: Option<f64>) -> Subsystem {
        let (d, dist) = match w {
            Some(bound) => (Mat::from_element(1, 1, 1.0), Zonotope::from_box(&[bound]).unwrap()),
            None => (Mat::zeros(1, 0), Zonotope::from_box(&[]).unwrap()),
        };
        Subsystem {
            id: SubsystemId(id),
            a: Mat::from_element(1, 1, a),
            b: Mat::zeros(1, 0),
            c: Mat::from_element(1, 1, 1.0),
            d,
            couplings: parents
                .iter()
                .map(|&(j, v)| (SubsystemId(j), Mat::from_element(1, 1, v)))
                .collect(),
            error_set: Zonotope::from_box(&[e]).unwrap(),
            dist_set: dist,
        }
    }

    #[test]
    fn decoupled_noiseless_design_has_origin_rpi() {
        let g = PlantGraph::new(vec![scalar(1, 1.2, 1.0, &[], None)]).unwrap();
        let view = LocalView::new(&g, SubsystemId(1)).unwrap();
        let d = design_lse(&view, &DesignOptions::default()).unwrap();
        assert!(d.rpi.is_origin());
        assert_eq!(d.report.beta.unwrap().upper, 0.0);
        assert!(d.report.schur_local.is_schur);
    }

    #[test]
    fn chain_design_with_and_without_communication() {
        let g = PlantGraph::new(vec![
            scalar(1, 0.9, 1.0, &[], Some(0.05)),
            scalar(2, 0.9, 1.0, &[(1, 0.3)], Some(0.05)),
        ])
        .unwrap();
        let view = LocalView::new(&g, SubsystemId(2)).unwrap();
        for delta in [false, true] {
            let opts = DesignOptions {
                deltas: DeltaPolicy::all(delta),
                ..DesignOptions::default()
            };
            let d = design_lse(&view, &opts).unwrap();
            assert!(d.report.certified());
            assert_eq!(d.gains.delta(SubsystemId(1)), delta);
            assert!(d.rpi.descriptor.containment_margin >= 0.0);
            let again = certify_local(&view, &d.gains, SeriesOptions::default()).unwrap();
            assert_eq!(again, d.report);
        }
    }

    #[test]
    fn full_cancellation_keeps_link_and_zeroes_coupling() {
        let g = PlantGraph::new(vec![
            scalar(1, 0.5, 1.0, &[], None),
            scalar(2, 0.5, 1.0, &[(1, 0.4)], None),
        ])
        .unwrap();
        let view = LocalView::new(&g, SubsystemId(2)).unwrap();
        let opts = DesignOptions {
            deltas: DeltaPolicy::all(true),
            ..DesignOptions::default()
        };
        let d = design_lse(&view, &opts).unwrap();
        assert!((d.gains.cross[&SubsystemId(1)].gain[(0, 0)] + 0.4).abs() < 1e-12);
        assert!(d.psi.is_origin() || linalg::inf_norm(d.psi.matrix()) < 1e-12);
    }

    #[test]
    fn violating_necessary_condition_is_reported() {
        let g = PlantGraph::new(vec![
            scalar(1, 0.5, 1.0, &[], None),
            scalar(2, 0.5, 0.1, &[(1, 0.4)], None),
        ])
        .unwrap();
        let view = LocalView::new(&g, SubsystemId(2)).unwrap();
        let err = design_lse(&view, &DesignOptions::default()).unwrap_err();
        assert!(matches!(err, SynthesisError::NecessaryConditionViolated { .. }));
        assert_eq!(err.stage(), "necessary_condition");
    }
}
