//! Small-gain quantities with certified truncation of the infinite series.
//!
//! Every series has the form `Σ_k Σ_b ‖H Āᵏ M_b‖∞` where `H` is a full column
//! rank facet matrix with left inverse `H♭`. Whenever `q = ‖H Ā^{k₀} H♭‖∞ < 1`
//! the terms satisfy `t_{k+k₀} ≤ q t_k`, which bounds the tail after `K` terms
//! by `q/(1−q)` times the sum of the last `k₀` terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat};
use crate::zonotope::{self, Containment, GeneratorSet, Zonotope, ZonotopeError};

pub const SCHUR_MARGIN: f64 = 1e-9;
pub const DEFAULT_DEPTH_CAP: usize = 2000;
pub const DEFAULT_TAIL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("local error matrix is not Schur (spectral radius {spectral_radius:.6})")]
    NotSchur { spectral_radius: f64 },
    #[error("series inconclusive after {depth} terms (partial sum {partial_sum:.6e})")]
    Inconclusive { partial_sum: f64, depth: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Zonotope(#[from] ZonotopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchurCheck {
    pub is_schur: bool,
    pub spectral_radius: f64,
}

/// Schur test with margin `1e-9`, using the eigenvalues of the real Schur form.
pub fn is_schur(m: &Mat) -> Result<SchurCheck, AnalysisError> {
    let rho = linalg::spectral_radius(m)
        .map_err(|e| AnalysisError::Dimension(e.to_string()))?;
    Ok(SchurCheck {
        is_schur: rho < 1.0 - SCHUR_MARGIN,
        spectral_radius: rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesOptions {
    pub depth_cap: usize,
    pub tail_tol: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            depth_cap: DEFAULT_DEPTH_CAP,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

/// Certified enclosure `[lower, upper]` of a nonnegative series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSum {
    pub lower: f64,
    pub upper: f64,
    pub depth: usize,
    pub tail_bound: f64,
}

impl CertifiedSum {
    pub fn zero() -> Self {
        Self {
            lower: 0.0,
            upper: 0.0,
            depth: 0,
            tail_bound: 0.0,
        }
    }
}

/// Certified value of `Σ_{k≥0} Σ_b ‖H Āᵏ M_b‖∞`.
///
/// `a` must be Schur; this is not rechecked here. The contraction factor is
/// re-derived at every depth from all shifts `k₁ ≤ K` with
/// `‖H Ā^{k₁} H♭‖∞ < 1`, keeping the tightest tail bound.
pub fn certified_series(
    h: &Mat,
    h_pinv: &Mat,
    a: &Mat,
    blocks: &[Mat],
    opts: SeriesOptions,
) -> Result<CertifiedSum, AnalysisError> {
    let n = a.nrows();
    if a.ncols() != n || h.ncols() != n || h_pinv.nrows() != n || h_pinv.ncols() != h.nrows() {
        return Err(AnalysisError::Dimension(format!(
            "H {:?}, H♭ {:?}, Ā {:?}",
            h.shape(),
            h_pinv.shape(),
            a.shape()
        )));
    }
    if let Some(b) = blocks.iter().find(|b| b.nrows() != n) {
        return Err(AnalysisError::Dimension(format!(
            "block has {} rows, expected {n}",
            b.nrows()
        )));
    }
    if blocks.iter().all(|b| b.iter().all(|v| *v == 0.0)) {
        return Ok(CertifiedSum::zero());
    }

    // prefix[k] = Σ_{κ<k} t_κ ; contraction[k] = ‖H Āᵏ H♭‖∞
    let mut prefix = vec![0.0];
    let mut contraction: Vec<f64> = Vec::new();
    let mut hk = h.clone();
    for k in 0..opts.depth_cap {
        let t: f64 = blocks.iter().map(|b| linalg::inf_norm(&(&hk * b))).sum();
        prefix.push(prefix[k] + t);
        contraction.push(linalg::inf_norm(&(&hk * h_pinv)));
        let depth = k + 1;
        let mut best = f64::INFINITY;
        for (k1, &q) in contraction.iter().enumerate().skip(1) {
            if q < 1.0 {
                let window = prefix[depth] - prefix[depth - k1];
                best = best.min(q / (1.0 - q) * window);
            }
        }
        if best <= opts.tail_tol {
            let lower = prefix[depth];
            return Ok(CertifiedSum {
                lower,
                upper: lower + best,
                depth,
                tail_bound: best,
            });
        }
        hk = &hk * a;
    }
    Err(AnalysisError::Inconclusive {
        partial_sum: *prefix.last().unwrap_or(&0.0),
        depth: opts.depth_cap,
    })
}

/// `β_i = Σ_j Σ_k ‖H_i Ā_iiᵏ Ā_ij H_j♭‖∞` for parents given as `(Ā_ij, H_j♭)`.
pub fn beta(
    a_bar_ii: &Mat,
    error_set: &Zonotope,
    parents: &[(Mat, Mat)],
    opts: SeriesOptions,
) -> Result<CertifiedSum, AnalysisError> {
    require_schur(a_bar_ii)?;
    let blocks: Vec<Mat> = parents.iter().map(|(a_ij, hj_pinv)| a_ij * hj_pinv).collect();
    certified_series(error_set.facets(), error_set.facet_pinv(), a_bar_ii, &blocks, opts)
}

/// `γ_i = Σ_k ‖H_i Ā_iiᵏ Ψ_i‖∞`.
pub fn gamma(
    a_bar_ii: &Mat,
    error_set: &Zonotope,
    psi: &GeneratorSet,
    opts: SeriesOptions,
) -> Result<CertifiedSum, AnalysisError> {
    require_schur(a_bar_ii)?;
    certified_series(
        error_set.facets(),
        error_set.facet_pinv(),
        a_bar_ii,
        std::slice::from_ref(psi.matrix()),
        opts,
    )
}

fn require_schur(m: &Mat) -> Result<SchurCheck, AnalysisError> {
    let check = is_schur(m)?;
    if check.is_schur {
        Ok(check)
    } else {
        Err(AnalysisError::NotSchur {
            spectral_radius: check.spectral_radius,
        })
    }
}

/// Generators of `Ṽ_i = ⊕_j Ā_ij E_j ⊕ D_i W_i`, i.e. `Ψ_i = [Ā_ij Ξ_j …, D_i Δ_i]`.
pub fn build_psi(
    dim: usize,
    parents: &[(Mat, &GeneratorSet)],
    d: &Mat,
    dist: &GeneratorSet,
) -> Result<GeneratorSet, AnalysisError> {
    let mut psi = GeneratorSet::origin(dim);
    for (a_ij, e_j) in parents {
        psi = zonotope::minkowski_concat(&psi, &e_j.linear_image(a_ij)?)?;
    }
    if d.ncols() > 0 {
        psi = zonotope::minkowski_concat(&psi, &dist.linear_image(d)?)?;
    }
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentMethod {
    /// Support of the generator set evaluated on every facet of `E_i`.
    ExactSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NecessaryCheck {
    pub holds: bool,
    pub margin: f64,
    pub method: ContainmentMethod,
}

/// Necessary condition for an RPI set inside `E_i`: the one-step disturbance
/// set `Ṽ_i` must itself lie in `E_i`, since every RPI set contains it.
pub fn necessary_condition(error_set: &Zonotope, psi: &GeneratorSet) -> NecessaryCheck {
    let Containment { contained, margin } = zonotope::contains_zonotope(psi, error_set);
    NecessaryCheck {
        holds: contained,
        margin,
        method: ContainmentMethod::ExactSupport,
    }
}

/// Local certificate of one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGainReport {
    pub schur_local: SchurCheck,
    pub beta: Option<CertifiedSum>,
    pub gamma: Option<CertifiedSum>,
}

impl SmallGainReport {
    pub fn certified(&self) -> bool {
        self.schur_local.is_schur
            && self.beta.is_some_and(|b| b.upper < 1.0)
            && self.gamma.is_some_and(|g| g.upper < 1.0)
    }
}

/// β and γ of one subsystem; both are omitted when `Ā_ii` is not Schur.
pub fn small_gain_report(
    a_bar_ii: &Mat,
    error_set: &Zonotope,
    parents: &[(Mat, Mat)],
    psi: &GeneratorSet,
    opts: SeriesOptions,
) -> Result<SmallGainReport, AnalysisError> {
    let schur_local = is_schur(a_bar_ii)?;
    if !schur_local.is_schur {
        return Ok(SmallGainReport {
            schur_local,
            beta: None,
            gamma: None,
        });
    }
    Ok(SmallGainReport {
        schur_local,
        beta: Some(beta(a_bar_ii, error_set, parents, opts)?),
        gamma: Some(gamma(a_bar_ii, error_set, psi, opts)?),
    })
}
