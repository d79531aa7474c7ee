//! Runtime of the plant and its network of local state estimators.
//!
//! Every estimator updates from time-`t` data only: its own estimate, input
//! and output, and the estimates and (when `δ_ij = 1`) outputs of its parents.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Mat, Vector};
use crate::model::{PlantGraph, Subsystem, SubsystemId};
use crate::rpi::{RpiSet, MEMBERSHIP_TOL};
use crate::synthesis::GainSet;

/// Slack allowed in the facet test `H e ≤ 1`.
pub const FACET_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("subsystem {id}: no gains supplied")]
    MissingGains { id: SubsystemId },
    #[error("subsystem {id}: {what} has length {actual}, expected {expected}")]
    Dimension {
        id: SubsystemId,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("subsystem {id}: gain {block} is {actual:?}, expected {expected:?}")]
    GainShape {
        id: SubsystemId,
        block: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("subsystem {id}: disturbance at step {t} lies outside W")]
    DisturbanceOutside { id: SubsystemId, t: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("input series for subsystem {id} ends at step {len}")]
    SeriesTooShort { id: SubsystemId, len: usize },
}

/// Plant states, estimates and gains of the whole network.
#[derive(Debug)]
pub struct EstimatorNetwork {
    graph: PlantGraph,
    gains: BTreeMap<SubsystemId, GainSet>,
    rpi: BTreeMap<SubsystemId, RpiSet>,
    x: BTreeMap<SubsystemId, Vector>,
    x_hat: BTreeMap<SubsystemId, Vector>,
    time: usize,
    /// `(reader, source)` → number of times `reader` used `y_source`.
    output_reads: BTreeMap<(SubsystemId, SubsystemId), AtomicUsize>,
}

impl EstimatorNetwork {
    /// Starts with all states and estimates at the origin.
    pub fn new(
        graph: PlantGraph,
        gains: BTreeMap<SubsystemId, GainSet>,
        rpi: BTreeMap<SubsystemId, RpiSet>,
    ) -> Result<Self, EstimatorError> {
        for s in graph.subsystems() {
            let g = gains.get(&s.id).ok_or(EstimatorError::MissingGains { id: s.id })?;
            check_shape(s.id, "L_ii".into(), &g.local, (s.order(), s.num_outputs()))?;
            for parent in s.parents() {
                if let Some(cross) = g.cross.get(&parent).filter(|c| c.delta) {
                    let p = graph.get(parent).expect("validated graph");
                    check_shape(s.id, format!("L_{{{},{}}}", s.id, parent), &cross.gain, (s.order(), p.num_outputs()))?;
                }
            }
        }
        let zeros = |s: &Subsystem| (s.id, Vector::zeros(s.order()));
        let output_reads = graph
            .subsystems()
            .flat_map(|s| s.parents().map(move |j| ((s.id, j), AtomicUsize::new(0))))
            .collect();
        Ok(Self {
            x: graph.subsystems().map(zeros).collect(),
            x_hat: graph.subsystems().map(zeros).collect(),
            graph,
            gains,
            rpi,
            time: 0,
            output_reads,
        })
    }

    pub fn graph(&self) -> &PlantGraph {
        &self.graph
    }

    pub fn gains(&self) -> &BTreeMap<SubsystemId, GainSet> {
        &self.gains
    }

    pub fn rpi(&self) -> &BTreeMap<SubsystemId, RpiSet> {
        &self.rpi
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn state(&self, id: SubsystemId) -> Option<&Vector> {
        self.x.get(&id)
    }

    pub fn estimate(&self, id: SubsystemId) -> Option<&Vector> {
        self.x_hat.get(&id)
    }

    /// `e_i = x_i − x̃_i`.
    pub fn error(&self, id: SubsystemId) -> Option<Vector> {
        Some(self.x.get(&id)? - self.x_hat.get(&id)?)
    }

    pub fn errors(&self) -> BTreeMap<SubsystemId, Vector> {
        self.x.keys().map(|id| (*id, &self.x[id] - &self.x_hat[id])).collect()
    }

    pub fn set_state(&mut self, id: SubsystemId, x: Vector) -> Result<(), EstimatorError> {
        let slot = self.slot(id, "state", x.len())?;
        *self.x.get_mut(&slot).expect("checked") = x;
        Ok(())
    }

    pub fn set_estimate(&mut self, id: SubsystemId, x_hat: Vector) -> Result<(), EstimatorError> {
        let slot = self.slot(id, "estimate", x_hat.len())?;
        *self.x_hat.get_mut(&slot).expect("checked") = x_hat;
        Ok(())
    }

    /// Sets `x̃_i = x_i − e_i`.
    pub fn set_error(&mut self, id: SubsystemId, e: &Vector) -> Result<(), EstimatorError> {
        let slot = self.slot(id, "error", e.len())?;
        let x_hat = &self.x[&slot] - e;
        self.x_hat.insert(slot, x_hat);
        Ok(())
    }

    /// Offsets every estimate so that `e_i(0)` is a random point of `S_i`
    /// (uniform generator coefficients).
    pub fn offset_into_rpi(&mut self, seed: u64) -> Result<(), EstimatorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<SubsystemId> = self.graph.ids().collect();
        for id in ids {
            let Some(set) = self.rpi.get(&id) else { continue };
            let g = set.generators.num_generators();
            let coeffs = Vector::from_fn(g, |_, _| rng.random_range(-1.0..=1.0));
            let e = set.generators.point(&coeffs);
            self.set_error(id, &e)?;
        }
        Ok(())
    }

    fn slot(&self, id: SubsystemId, what: &'static str, len: usize) -> Result<SubsystemId, EstimatorError> {
        let s = self.graph.get(id).ok_or(EstimatorError::MissingGains { id })?;
        if len != s.order() {
            return Err(EstimatorError::Dimension {
                id,
                what,
                expected: s.order(),
                actual: len,
            });
        }
        Ok(id)
    }

    /// Number of times estimator `reader` has used the output of `source`.
    pub fn output_reads(&self, reader: SubsystemId, source: SubsystemId) -> usize {
        self.output_reads
            .get(&(reader, source))
            .map_or(0, |c| c.load(Ordering::Relaxed))
    }

    pub fn total_parent_output_reads(&self) -> usize {
        self.output_reads.values().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    /// One synchronous step of plant and estimators. Missing inputs or
    /// disturbances are taken as zero. Returns the errors at the new time.
    pub fn step(
        &mut self,
        u: &BTreeMap<SubsystemId, Vector>,
        w: &BTreeMap<SubsystemId, Vector>,
    ) -> Result<BTreeMap<SubsystemId, Vector>, EstimatorError> {
        let mut inputs = BTreeMap::new();
        let mut disturbances = BTreeMap::new();
        for s in self.graph.subsystems() {
            let ui = u.get(&s.id).cloned().unwrap_or_else(|| Vector::zeros(s.num_inputs()));
            if ui.len() != s.num_inputs() {
                return Err(EstimatorError::Dimension {
                    id: s.id,
                    what: "input",
                    expected: s.num_inputs(),
                    actual: ui.len(),
                });
            }
            let wi = w
                .get(&s.id)
                .cloned()
                .unwrap_or_else(|| Vector::zeros(s.num_disturbances()));
            if wi.len() != s.num_disturbances() {
                return Err(EstimatorError::Dimension {
                    id: s.id,
                    what: "disturbance",
                    expected: s.num_disturbances(),
                    actual: wi.len(),
                });
            }
            if !s.dist_set.satisfies_facets(&wi, FACET_TOL) {
                return Err(EstimatorError::DisturbanceOutside { id: s.id, t: self.time });
            }
            inputs.insert(s.id, ui);
            disturbances.insert(s.id, wi);
        }

        let outputs: BTreeMap<SubsystemId, Vector> =
            self.graph.subsystems().map(|s| (s.id, &s.c * &self.x[&s.id])).collect();

        let subsystems: Vec<&Subsystem> = self.graph.subsystems().collect();
        let estimates: Vec<(SubsystemId, Vector)> = subsystems
            .par_iter()
            .map(|s| (s.id, self.lse_update(s, &inputs[&s.id], &outputs)))
            .collect();
        let states: Vec<(SubsystemId, Vector)> = subsystems
            .par_iter()
            .map(|s| {
                let mut next = &s.a * &self.x[&s.id] + &s.b * &inputs[&s.id] + &s.d * &disturbances[&s.id];
                for (j, a_ij) in &s.couplings {
                    next += a_ij * &self.x[j];
                }
                (s.id, next)
            })
            .collect();
        self.x_hat.extend(estimates);
        self.x.extend(states);
        self.time += 1;
        Ok(self.errors())
    }

    /// `x̃⁺ = A x̃ + B u + L_ii (C x̃ − y) + Σ A_ij x̃_j + Σ δ_ij L_ij (C_j x̃_j − y_j)`.
    fn lse_update(&self, s: &Subsystem, u: &Vector, outputs: &BTreeMap<SubsystemId, Vector>) -> Vector {
        let g = &self.gains[&s.id];
        let x_hat = &self.x_hat[&s.id];
        let mut next = &s.a * x_hat + &s.b * u + &g.local * (&s.c * x_hat - &outputs[&s.id]);
        for (j, a_ij) in &s.couplings {
            let xj_hat = &self.x_hat[j];
            next += a_ij * xj_hat;
            if let Some(cross) = g.cross.get(j).filter(|c| c.delta) {
                self.output_reads[&(s.id, *j)].fetch_add(1, Ordering::Relaxed);
                let parent = self.graph.get(*j).expect("validated graph");
                next += &cross.gain * (&parent.c * xj_hat - &outputs[j]);
            }
        }
        next
    }
}

fn check_shape(id: SubsystemId, block: String, m: &Mat, expected: (usize, usize)) -> Result<(), EstimatorError> {
    if m.shape() != expected {
        return Err(EstimatorError::GainShape {
            id,
            block,
            expected,
            actual: m.shape(),
        });
    }
    Ok(())
}

/// Input signal applied to every channel of every subsystem, or an explicit series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSchedule {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude · sin(frequency · t + phase)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Per-subsystem rows `u_i(t)`, one per step.
    Series {
        values: BTreeMap<SubsystemId, Vec<Vec<f64>>>,
    },
}

impl InputSchedule {
    pub fn at(&self, s: &Subsystem, t: usize) -> Result<Vector, EstimatorError> {
        let m = s.num_inputs();
        Ok(match self {
            InputSchedule::Zero => Vector::zeros(m),
            InputSchedule::Constant { value } => Vector::from_element(m, *value),
            InputSchedule::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Vector::from_element(m, amplitude * (frequency * t as f64 + phase).sin()),
            InputSchedule::Series { values } => {
                let rows = values.get(&s.id).map_or(&[][..], |v| v.as_slice());
                let row = rows.get(t).ok_or(EstimatorError::SeriesTooShort {
                    id: s.id,
                    len: rows.len(),
                })?;
                if row.len() != m {
                    return Err(EstimatorError::Dimension {
                        id: s.id,
                        what: "input",
                        expected: m,
                        actual: row.len(),
                    });
                }
                Vector::from_column_slice(row)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbancePolicy {
    Zero,
    /// Generator coefficients of `W_i` drawn uniformly from `[−1, 1]`.
    Uniform { seed: u64 },
    /// Generator coefficients drawn from `{−1, 1}`, i.e. vertices of `W_i`.
    Vertices { seed: u64 },
}

impl DisturbancePolicy {
    pub fn seed(&self) -> Option<u64> {
        match self {
            DisturbancePolicy::Zero => None,
            DisturbancePolicy::Uniform { seed } | DisturbancePolicy::Vertices { seed } => Some(*seed),
        }
    }

    fn sample(&self, s: &Subsystem, rng: &mut ChaCha8Rng) -> Vector {
        let g = s.dist_set.generators();
        let coeffs = match self {
            DisturbancePolicy::Zero => return Vector::zeros(s.num_disturbances()),
            DisturbancePolicy::Uniform { .. } => Vector::from_fn(g.ncols(), |_, _| rng.random_range(-1.0..=1.0)),
            DisturbancePolicy::Vertices { .. } => {
                Vector::from_fn(g.ncols(), |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            }
        };
        g * coeffs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimulationOptions {
    /// Evaluate `e_i ∈ S_i` at every step (one feasibility program per subsystem).
    pub check_rpi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub subsystem: SubsystemId,
    pub component: usize,
    pub x: f64,
    pub x_hat: f64,
    pub e: f64,
    #[serde(rename = "in_E")]
    pub in_e: bool,
    #[serde(rename = "in_S")]
    pub in_s: Option<bool>,
}

/// Per-step membership of one subsystem's error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub in_e: bool,
    pub in_s: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// `(t, subsystem)` → membership flags.
    pub membership: BTreeMap<(usize, SubsystemId), Membership>,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.membership.keys().map(|(t, _)| *t).max().unwrap_or(0)
    }

    pub fn all_in_e(&self) -> bool {
        self.membership.values().all(|m| m.in_e)
    }

    /// `max |e|` over all components at step `t`.
    pub fn max_abs_error_at(&self, t: usize) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.t == t)
            .map(|r| r.e.abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> csv::Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn record(net: &EstimatorNetwork, opts: SimulationOptions, trace: &mut Trace) {
    let t = net.time();
    for s in net.graph().subsystems() {
        let x = &net.x[&s.id];
        let x_hat = &net.x_hat[&s.id];
        let e = x - x_hat;
        let in_e = s.error_set.satisfies_facets(&e, FACET_TOL);
        let in_s = opts
            .check_rpi
            .then(|| net.rpi.get(&s.id).map(|set| set.contains_point(&e, MEMBERSHIP_TOL)))
            .flatten();
        trace.membership.insert((t, s.id), Membership { in_e, in_s });
        for k in 0..s.order() {
            trace.rows.push(TraceRow {
                t,
                subsystem: s.id,
                component: k,
                x: x[k],
                x_hat: x_hat[k],
                e: e[k],
                in_e,
                in_s,
            });
        }
    }
}

/// Runs `horizon` steps from the current network state and records times
/// `t₀ … t₀ + horizon`.
pub fn simulate(
    net: &mut EstimatorNetwork,
    inputs: &InputSchedule,
    policy: DisturbancePolicy,
    horizon: usize,
    opts: SimulationOptions,
) -> Result<Trace, EstimatorError> {
    if horizon == 0 {
        return Err(EstimatorError::ZeroHorizon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed().unwrap_or(0));
    let mut trace = Trace::default();
    record(net, opts, &mut trace);
    for _ in 0..horizon {
        let t = net.time();
        let mut u = BTreeMap::new();
        let mut w = BTreeMap::new();
        for s in net.graph().subsystems() {
            u.insert(s.id, inputs.at(s, t)?);
            w.insert(s.id, policy.sample(s, &mut rng));
        }
        net.step(&u, &w)?;
        record(net, opts, &mut trace);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::assemble_collective;
    use crate::synthesis::CrossGain;
    use crate::zonotope::Zonotope;

    fn scalar_sub(id: u32, a: f64, couplings: &[(u32, f64)]) -> Subsystem {
        Subsystem {
            id: SubsystemId(id),
            a: Mat::from_element(1, 1, a),
            b: Mat::from_element(1, 1, 1.0),
            c: Mat::from_element(1, 1, 1.0),
            d: Mat::from_element(1, 1, 1.0),
            couplings: couplings
                .iter()
                .map(|(j, v)| (SubsystemId(*j), Mat::from_element(1, 1, *v)))
                .collect(),
            error_set: Zonotope::from_box(&[1.0]).unwrap(),
            dist_set: Zonotope::from_box(&[0.1]).unwrap(),
        }
    }

    fn gains(local: f64, cross: &[(u32, f64, bool)]) -> GainSet {
        GainSet {
            local: Mat::from_element(1, 1, local),
            cross: cross
                .iter()
                .map(|(j, v, delta)| {
                    (
                        SubsystemId(*j),
                        CrossGain {
                            gain: Mat::from_element(1, 1, *v),
                            delta: *delta,
                        },
                    )
                })
                .collect(),
            q: vec![1.0],
            r: vec![1.0],
            riccati: Mat::identity(1, 1),
        }
    }

    fn chain(delta: bool) -> EstimatorNetwork {
        let graph = PlantGraph::new(vec![scalar_sub(1, 0.9, &[]), scalar_sub(2, 0.8, &[(1, 0.3)])]).unwrap();
        let g = BTreeMap::from([
            (SubsystemId(1), gains(-0.4, &[])),
            (SubsystemId(2), gains(-0.3, &[(1, -0.2, delta)])),
        ]);
        EstimatorNetwork::new(graph, g, BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_error_stays_zero_without_disturbance() {
        let mut net = chain(true);
        net.set_state(SubsystemId(1), Vector::from_element(1, 0.7)).unwrap();
        net.set_estimate(SubsystemId(1), Vector::from_element(1, 0.7)).unwrap();
        let sched = InputSchedule::Sinusoid {
            amplitude: 0.1,
            frequency: 1.0,
            phase: 0.0,
        };
        let trace = simulate(&mut net, &sched, DisturbancePolicy::Zero, 30, SimulationOptions::default()).unwrap();
        assert!(trace.rows.iter().all(|r| r.e == 0.0));
        assert!(trace.rows.iter().any(|r| r.x != 0.0));
    }

    #[test]
    fn scalar_error_decays_geometrically() {
        let graph = PlantGraph::new(vec![scalar_sub(1, 0.9, &[])]).unwrap();
        let g = BTreeMap::from([(SubsystemId(1), gains(-0.4, &[]))]);
        let mut net = EstimatorNetwork::new(graph, g, BTreeMap::new()).unwrap();
        net.set_error(SubsystemId(1), &Vector::from_element(1, 1.0)).unwrap();
        for t in 1..=20 {
            let e = net.step(&BTreeMap::new(), &BTreeMap::new()).unwrap();
            assert!((e[&SubsystemId(1)][0] - 0.5f64.powi(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn stacked_errors_follow_collective_dynamics() {
        for delta in [false, true] {
            let mut net = chain(delta);
            let col = assemble_collective(net.graph(), net.gains()).unwrap();
            net.set_state(SubsystemId(1), Vector::from_element(1, 0.3)).unwrap();
            net.set_state(SubsystemId(2), Vector::from_element(1, -0.5)).unwrap();
            net.set_estimate(SubsystemId(2), Vector::from_element(1, 0.2)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..25 {
                let stack = |m: &BTreeMap<SubsystemId, Vector>| {
                    Vector::from_iterator(2, m.values().map(|v| v[0]))
                };
                let e = stack(&net.errors());
                let w: BTreeMap<_, _> = [1, 2]
                    .map(|i| (SubsystemId(i), Vector::from_element(1, rng.random_range(-0.1..=0.1))))
                    .into_iter()
                    .collect();
                let u: BTreeMap<_, _> = [1, 2]
                    .map(|i| (SubsystemId(i), Vector::from_element(1, rng.random_range(-1.0..=1.0))))
                    .into_iter()
                    .collect();
                let expected = &col.a_bar * &e + &col.d * stack(&w);
                let next = stack(&net.step(&u, &w).unwrap());
                assert!((next - expected).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn parent_outputs_are_read_only_with_delta() {
        for delta in [false, true] {
            let mut net = chain(delta);
            simulate(&mut net, &InputSchedule::Zero, DisturbancePolicy::Uniform { seed: 1 }, 10, SimulationOptions::default()).unwrap();
            let reads = net.output_reads(SubsystemId(2), SubsystemId(1));
            assert_eq!(reads, if delta { 10 } else { 0 });
            assert_eq!(net.output_reads(SubsystemId(1), SubsystemId(2)), 0);
        }
    }

    #[test]
    fn rejects_disturbance_outside_w() {
        let mut net = chain(true);
        let w = BTreeMap::from([(SubsystemId(1), Vector::from_element(1, 0.2))]);
        assert_eq!(
            net.step(&BTreeMap::new(), &w),
            Err(EstimatorError::DisturbanceOutside { id: SubsystemId(1), t: 0 })
        );
    }

    #[test]
    fn rejects_zero_horizon() {
        let mut net = chain(true);
        assert_eq!(
            simulate(&mut net, &InputSchedule::Zero, DisturbancePolicy::Zero, 0, SimulationOptions::default()),
            Err(EstimatorError::ZeroHorizon)
        );
    }

    #[test]
    fn membership_flags_match_facet_evaluation() {
        let mut net = chain(false);
        net.set_error(SubsystemId(1), &Vector::from_element(1, 0.95)).unwrap();
        net.set_error(SubsystemId(2), &Vector::from_element(1, -1.2)).unwrap();
        let trace = simulate(&mut net, &InputSchedule::Zero, DisturbancePolicy::Vertices { seed: 3 }, 15, SimulationOptions::default()).unwrap();
        for row in &trace.rows {
            let h = net.graph().subsystem(row.subsystem).unwrap().error_set.facets().clone();
            let direct = (h * Vector::from_element(1, row.e)).max() <= 1.0 + FACET_TOL;
            assert_eq!(row.in_e, direct);
        }
        assert!(!trace.membership[&(0, SubsystemId(2))].in_e);
    }

    #[test]
    fn vertex_policy_hits_extreme_points() {
        let s = scalar_sub(1, 0.5, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let w = DisturbancePolicy::Vertices { seed: 0 }.sample(&s, &mut rng);
            assert!((w[0].abs() - 0.1).abs() < 1e-15);
            let w = DisturbancePolicy::Uniform { seed: 0 }.sample(&s, &mut rng);
            assert!(w[0].abs() <= 0.1);
        }
    }

    #[test]
    fn series_inputs_are_validated() {
        let s = scalar_sub(1, 0.5, &[]);
        let sched = InputSchedule::Series {
            values: BTreeMap::from([(SubsystemId(1), vec![vec![0.5], vec![1.5]])]),
        };
        assert_eq!(sched.at(&s, 1).unwrap()[0], 1.5);
        assert_eq!(
            sched.at(&s, 2),
            Err(EstimatorError::SeriesTooShort { id: SubsystemId(1), len: 2 })
        );
    }

    #[test]
    fn csv_has_expected_columns_and_is_deterministic() {
        let run = || {
            let mut net = chain(true);
            net.set_error(SubsystemId(1), &Vector::from_element(1, 0.5)).unwrap();
            let trace = simulate(&mut net, &InputSchedule::Zero, DisturbancePolicy::Uniform { seed: 9 }, 5, SimulationOptions::default()).unwrap();
            let mut buf = Vec::new();
            trace.write_csv(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = run();
        assert_eq!(a.lines().next().unwrap(), "t,subsystem,component,x,x_hat,e,in_E,in_S");
        assert_eq!(a.lines().count(), 1 + 6 * 2);
        assert_eq!(a, run());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Random network of `m` subsystems of order 2 with one output each,
        /// arbitrary gains and random communication flags.
        fn network(seed: u64, m: u32) -> EstimatorNetwork {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
            let mut subs = Vec::new();
            let mut gains = BTreeMap::new();
            for i in 1..=m {
                let mut cross = BTreeMap::new();
                let mut couplings = BTreeMap::new();
                for j in 1..=m {
                    if j != i && r(0.0, 1.0) < 0.6 {
                        couplings.insert(SubsystemId(j), Mat::from_fn(2, 2, |_, _| r(-0.3, 0.3)));
                        cross.insert(
                            SubsystemId(j),
                            CrossGain {
                                gain: Mat::from_fn(2, 1, |_, _| r(-0.5, 0.5)),
                                delta: r(0.0, 1.0) < 0.5,
                            },
                        );
                    }
                }
                subs.push(Subsystem {
                    id: SubsystemId(i),
                    a: Mat::from_fn(2, 2, |_, _| r(-1.0, 1.0)),
                    b: Mat::from_fn(2, 1, |_, _| r(-1.0, 1.0)),
                    c: Mat::from_fn(1, 2, |_, _| r(-1.0, 1.0)),
                    d: Mat::from_fn(2, 1, |_, _| r(-1.0, 1.0)),
                    couplings,
                    error_set: Zonotope::from_box(&[1.0, 1.0]).unwrap(),
                    dist_set: Zonotope::from_box(&[0.1]).unwrap(),
                });
                gains.insert(
                    SubsystemId(i),
                    GainSet {
                        local: Mat::from_fn(2, 1, |_, _| r(-1.0, 1.0)),
                        cross,
                        q: vec![1.0, 1.0],
                        r: vec![1.0],
                        riccati: Mat::identity(2, 2),
                    },
                );
            }
            EstimatorNetwork::new(PlantGraph::new(subs).unwrap(), gains, BTreeMap::new()).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn errors_follow_assembled_collective_matrix(seed in any::<u64>(), m in 1u32..4) {
                let mut net = network(seed, m);
                let col = assemble_collective(net.graph(), net.gains()).unwrap();
                net.offset_into_rpi(0).unwrap();
                let ids: Vec<SubsystemId> = net.graph().ids().collect();
                for id in &ids {
                    net.set_state(*id, Vector::from_element(2, 0.3)).unwrap();
                    net.set_error(*id, &Vector::from_element(2, -0.2)).unwrap();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
                let stack = |m: &BTreeMap<SubsystemId, Vector>, n: usize| {
                    Vector::from_iterator(n, m.values().flat_map(|v| v.iter().copied()))
                };
                for _ in 0..10 {
                    let n = 2 * ids.len();
                    let e = stack(&net.errors(), n);
                    let w: BTreeMap<_, _> = ids.iter().map(|i| (*i, Vector::from_element(1, rng.random_range(-0.1..=0.1)))).collect();
                    let u: BTreeMap<_, _> = ids.iter().map(|i| (*i, Vector::from_element(1, rng.random_range(-1.0..=1.0)))).collect();
                    let expected = &col.a_bar * &e + &col.d * stack(&w, ids.len());
                    let next = stack(&net.step(&u, &w).unwrap(), n);
                    prop_assert!((&next - &expected).amax() <= 1e-12 * (1.0 + expected.amax()));
                }
            }
        }
    }
}
