//! Robust positively invariant outer approximations for local error dynamics
//! `e⁺ = Ā e + ṽ`, `ṽ ∈ Ṽ = Ψ·[−1,1]^g`.
//!
//! With `F_s = ⊕_{k<s} Āᵏ Ṽ`, a horizon `k₀` such that `q = ‖H Ā^{k₀} H♭‖∞ < 1`
//! (so `Ā^{k₀} E ⊆ q E`) and `K = ⊕_{k<k₀} Āᵏ E`, the set
//!
//! ```text
//! S = F_s ⊕ r K,   r = ‖H Āˢ Ψ‖∞ / (1 − q)
//! ```
//!
//! satisfies `Ā S ⊕ Ṽ ⊆ S`: the new summand `Āˢ Ṽ ⊆ (1 − q) r E` and the
//! shifted inflation `r Ā^{k₀} E ⊆ q r E` together fit in the `r E` summand of
//! `r K`. The inflation shrinks geometrically with `s`, so `S` approaches the
//! minimal RPI set from outside.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::linalg::{self, Mat, Vector};
use crate::model::{CollectiveMatrices, SubsystemId};
use crate::zonotope::{self, GeneratorSet, Zonotope, ZonotopeError};

pub const DEFAULT_EPSILON_LADDER: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_HORIZON_CAP: usize = 500;
pub const MEMBERSHIP_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpiError {
    #[error("error dynamics not Schur (spectral radius {0:.6})")]
    NotSchur(f64),
    #[error("no contraction horizon found within {0} steps")]
    NoContraction(usize),
    #[error("RPI set not contained in the error set (best margin {margin:.3e})")]
    ContainmentFailed { margin: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Zonotope(#[from] ZonotopeError),
}

impl From<AnalysisError> for RpiError {
    fn from(e: AnalysisError) -> Self {
        RpiError::Dimension(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpiOptions {
    pub epsilon_ladder: Vec<f64>,
    pub horizon_cap: usize,
    pub contraction_cap: usize,
}

impl Default for RpiOptions {
    fn default() -> Self {
        Self {
            epsilon_ladder: DEFAULT_EPSILON_LADDER.to_vec(),
            horizon_cap: DEFAULT_HORIZON_CAP,
            contraction_cap: analysis::DEFAULT_DEPTH_CAP,
        }
    }
}

/// Parameters that determine an [`RpiSet`] given `Ā`, `Ψ` and `E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpiDescriptor {
    pub epsilon: f64,
    pub horizon: usize,
    pub contraction_horizon: usize,
    pub contraction: f64,
    pub inflation: f64,
    pub containment_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpiSet {
    pub descriptor: RpiDescriptor,
    pub generators: GeneratorSet,
}

impl RpiSet {
    pub fn origin(dim: usize) -> Self {
        Self {
            descriptor: RpiDescriptor {
                epsilon: 0.0,
                horizon: 0,
                contraction_horizon: 0,
                contraction: 0.0,
                inflation: 0.0,
                containment_margin: 1.0,
            },
            generators: GeneratorSet::origin(dim),
        }
    }

    pub fn is_origin(&self) -> bool {
        self.generators.is_origin()
    }

    pub fn contains_point(&self, point: &Vector, tol: f64) -> bool {
        self.generators.contains_point_scaled(point, 1.0 + tol)
    }

    /// Regenerates the set from a stored descriptor.
    pub fn rebuild(
        a_bar: &Mat,
        psi: &GeneratorSet,
        error_set: &Zonotope,
        descriptor: RpiDescriptor,
    ) -> Result<Self, RpiError> {
        if psi.is_origin() {
            let mut s = Self::origin(a_bar.nrows());
            s.descriptor = descriptor;
            return Ok(s);
        }
        let generators = assemble(
            a_bar,
            psi.matrix(),
            error_set.generators(),
            descriptor.horizon,
            descriptor.contraction_horizon,
            descriptor.inflation,
        );
        Ok(Self {
            descriptor,
            generators,
        })
    }
}

fn assemble(a: &Mat, psi: &Mat, xi: &Mat, horizon: usize, k0: usize, inflation: f64) -> GeneratorSet {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(horizon + k0);
    let mut term = psi.clone();
    for _ in 0..horizon {
        let next = a * &term;
        blocks.push(term);
        term = next;
    }
    let mut term = xi * inflation;
    if inflation > 0.0 {
        for _ in 0..k0 {
            let next = a * &term;
            blocks.push(term);
            term = next;
        }
    }
    GeneratorSet::new(linalg::hcat(&blocks, n))
}

/// Smallest `k ≥ 1` with `‖H Āᵏ H♭‖∞ < 1`, together with that norm.
pub fn contraction_horizon(a: &Mat, error_set: &Zonotope, cap: usize) -> Result<(usize, f64), RpiError> {
    let h = error_set.facets();
    let hp = error_set.facet_pinv();
    let mut hk = h * a;
    for k in 1..=cap {
        let q = linalg::inf_norm(&(&hk * hp));
        if q < 1.0 {
            return Ok((k, q));
        }
        hk = &hk * a;
    }
    Err(RpiError::NoContraction(cap))
}

/// Outer approximation of the minimal RPI set, certified to lie in `E`.
///
/// For each `ε` of the ladder the horizon `s` is the smallest one whose
/// inflation term has support at most `ε` on every facet of `E`. The first
/// rung whose set passes the facet containment test is returned.
pub fn mrpi_outer(
    a_bar: &Mat,
    psi: &GeneratorSet,
    error_set: &Zonotope,
    opts: &RpiOptions,
) -> Result<RpiSet, RpiError> {
    let n = a_bar.nrows();
    if psi.dim() != n || error_set.dim() != n {
        return Err(RpiError::Dimension(format!(
            "Ā is {n}x{n}, Ψ has dimension {}, E has dimension {}",
            psi.dim(),
            error_set.dim()
        )));
    }
    let schur = analysis::is_schur(a_bar)?;
    if !schur.is_schur {
        return Err(RpiError::NotSchur(schur.spectral_radius));
    }
    if psi.is_origin() {
        return Ok(RpiSet::origin(n));
    }
    let (k0, q) = contraction_horizon(a_bar, error_set, opts.contraction_cap)?;
    let h = error_set.facets();

    // Facet supports of K = ⊕_{k<k₀} Āᵏ E.
    let mut k_support = Vector::zeros(h.nrows());
    let mut hk = h.clone();
    for _ in 0..k0 {
        k_support += row_one_norms(&(&hk * error_set.generators()));
        hk = &hk * a_bar;
    }
    let k_max = k_support.max();

    let mut best_margin = f64::NEG_INFINITY;
    let mut f_support = Vector::zeros(h.nrows());
    let mut h_psi = h * psi.matrix();
    let mut h_ak = h.clone();
    let mut s = 0;
    for &eps in &opts.epsilon_ladder {
        loop {
            let rho_s = linalg::inf_norm(&h_psi);
            let inflation = rho_s / (1.0 - q);
            if inflation * k_max <= eps || s >= opts.horizon_cap {
                let total = &f_support + &k_support * inflation;
                let margin = 1.0 - total.max();
                best_margin = best_margin.max(margin);
                if inflation * k_max <= eps && margin >= -zonotope::CONTAINMENT_TOL {
                    let descriptor = RpiDescriptor {
                        epsilon: eps,
                        horizon: s,
                        contraction_horizon: k0,
                        contraction: q,
                        inflation,
                        containment_margin: margin,
                    };
                    return RpiSet::rebuild(a_bar, psi, error_set, descriptor);
                }
                break;
            }
            f_support += row_one_norms(&h_psi);
            h_ak = &h_ak * a_bar;
            h_psi = &h_ak * psi.matrix();
            s += 1;
        }
        if s >= opts.horizon_cap {
            break;
        }
    }
    Err(RpiError::ContainmentFailed { margin: best_margin })
}

fn row_one_norms(m: &Mat) -> Vector {
    Vector::from_iterator(
        m.nrows(),
        m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub trials: usize,
    pub violations: usize,
}

impl InvarianceReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

fn sample_coefficients(rng: &mut ChaCha8Rng, len: usize, vertex: bool) -> Vector {
    Vector::from_fn(len, |_, _| {
        if vertex {
            if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        } else {
            rng.random_range(-1.0..=1.0)
        }
    })
}

/// Sampled one-step invariance witness: `Ā e + ṽ ∈ (1 + 1e-7) S` for points
/// `e ∈ S` (interior samples and vertices alternately) and vertices `ṽ` of `Ṽ`.
pub fn verify_invariance(
    set: &RpiSet,
    a_bar: &Mat,
    psi: &GeneratorSet,
    trials: usize,
    seed: u64,
) -> InvarianceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vector> = (0..trials)
        .map(|t| {
            let d = sample_coefficients(&mut rng, set.generators.num_generators(), t % 2 == 1);
            let c = sample_coefficients(&mut rng, psi.num_generators(), true);
            a_bar * set.generators.point(&d) + psi.point(&c)
        })
        .collect();
    let violations = samples
        .par_iter()
        .filter(|p| !set.contains_point(p, MEMBERSHIP_TOL))
        .count();
    InvarianceReport { trials, violations }
}

/// Collective one-step test of the product set `∏ S_i` under `e⁺ = Ā e + D w`
/// with `e_i` sampled in `S_i` and `w_i` at vertices of `W_i`.
pub fn verify_product_invariance(
    collective: &CollectiveMatrices,
    sets: &BTreeMap<SubsystemId, RpiSet>,
    dist_sets: &BTreeMap<SubsystemId, Zonotope>,
    trials: usize,
    seed: u64,
) -> InvarianceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = collective.a_bar.nrows();
    let mut cases = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut e = Vector::zeros(n);
        let mut w = Vec::new();
        for (id, set) in sets {
            let o = collective.offsets[id];
            let d = sample_coefficients(&mut rng, set.generators.num_generators(), t % 2 == 1);
            let p = set.generators.point(&d);
            e.rows_mut(o, p.len()).copy_from(&p);
            let dist = &dist_sets[id];
            let c = sample_coefficients(&mut rng, dist.generators().ncols(), true);
            w.extend(dist.generator_set().point(&c).iter().copied());
        }
        cases.push(&collective.a_bar * e + &collective.d * Vector::from_vec(w));
    }
    let violations = cases
        .par_iter()
        .filter(|next| {
            sets.iter().any(|(id, set)| {
                let o = collective.offsets[id];
                let block = next.rows(o, set.generators.dim()).into_owned();
                !set.contains_point(&block, MEMBERSHIP_TOL)
            })
        })
        .count();
    InvarianceReport { trials, violations }
}
