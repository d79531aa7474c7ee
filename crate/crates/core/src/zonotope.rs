//! Origin-centered zonotopes.
//!
//! Two shapes are used. [`GeneratorSet`] is the generator-only form
//! `{G d : ‖d‖∞ ≤ 1}` used for derived sets (coupling/disturbance sets and
//! invariant sets), which are closed under linear maps and Minkowski sums by
//! matrix product and concatenation. [`Zonotope`] additionally carries the
//! facet description `{z : H z ≤ 1}` and is what users supply for error and
//! disturbance bounds. Every containment the pipeline needs is a generator set
//! tested against a facet set, which the support function decides exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat, Vector};
use crate::lp::{LinearProgram, LpStatus};

/// Relative tolerance of the facet/generator consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-8;
/// Round-off allowance for facet containment.
pub const CONTAINMENT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZonotopeError {
    #[error("half-width {index} must be positive, got {value}")]
    NonPositiveHalfWidth { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("facet matrix is not full column rank")]
    RankDeficientFacets,
    #[error("facet {facet} has support {support} against the generators, expected 1")]
    InconsistentFacet { facet: usize, support: f64 },
    #[error("facet {facet} has zero support and cannot be normalized")]
    DegenerateFacet { facet: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Generator-only zonotope `{G d : ‖d‖∞ ≤ 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSet {
    generators: Mat,
}

impl GeneratorSet {
    pub fn new(generators: Mat) -> Self {
        Self { generators }
    }

    /// The singleton `{0}` in `R^dim`.
    pub fn origin(dim: usize) -> Self {
        Self {
            generators: Mat::zeros(dim, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.generators.nrows()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn matrix(&self) -> &Mat {
        &self.generators
    }

    pub fn into_matrix(self) -> Mat {
        self.generators
    }

    /// True when the set is `{0}`.
    pub fn is_origin(&self) -> bool {
        self.generators.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            generators: &self.generators * factor,
        }
    }

    /// `M · Z`, computed on generators only.
    pub fn linear_image(&self, m: &Mat) -> Result<Self, ZonotopeError> {
        if m.ncols() != self.dim() {
            return Err(ZonotopeError::DimensionMismatch {
                expected: self.dim(),
                actual: m.ncols(),
            });
        }
        Ok(Self {
            generators: m * &self.generators,
        })
    }

    /// Support function `sup_{z ∈ Z} directionᵀ z = Σ_k |directionᵀ g_k|`.
    pub fn support(&self, direction: &Vector) -> f64 {
        assert_eq!(direction.len(), self.dim(), "direction dimension");
        self.generators
            .tr_mul(direction)
            .iter()
            .map(|v| v.abs())
            .sum()
    }

    /// Supports for every row of `directions` at once.
    pub fn supports(&self, directions: &Mat) -> Vector {
        let products = directions * &self.generators;
        Vector::from_iterator(
            products.nrows(),
            products
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>()),
        )
    }

    /// Membership of `point` in `scale · Z`, decided by the linear feasibility
    /// program `G d = point, ‖d‖∞ ≤ scale`.
    pub fn contains_point_scaled(&self, point: &Vector, scale: f64) -> bool {
        assert_eq!(point.len(), self.dim(), "point dimension");
        if point.iter().all(|v| *v == 0.0) {
            return true;
        }
        if self.num_generators() == 0 {
            return false;
        }
        let g = self.num_generators();
        let lp = LinearProgram::feasibility(
            self.generators.clone(),
            point.clone(),
            vec![-scale; g],
            vec![scale; g],
        );
        lp.solve().status == LpStatus::Optimal
    }

    pub fn contains_point(&self, point: &Vector) -> bool {
        self.contains_point_scaled(point, 1.0 + 1e-9)
    }

    /// Point `G d` for a coefficient vector `d`.
    pub fn point(&self, coefficients: &Vector) -> Vector {
        &self.generators * coefficients
    }
}

/// `A ⊕ B` by generator concatenation.
pub fn minkowski_concat(a: &GeneratorSet, b: &GeneratorSet) -> Result<GeneratorSet, ZonotopeError> {
    if a.dim() != b.dim() {
        return Err(ZonotopeError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(GeneratorSet::new(linalg::hcat(
        &[a.generators.clone(), b.generators.clone()],
        a.dim(),
    )))
}

/// Zonotope in dual form: generators `Ξ` and facet normals `H` with
/// `{Ξ d : ‖d‖∞ ≤ 1} = {z : H z ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    generators: GeneratorSet,
    facets: Mat,
    facet_pinv: Mat,
}

impl Zonotope {
    /// Builds a zonotope from both descriptions, checking full column rank of
    /// `facets` and that every facet row is supporting: `Σ_k |h_τᵀ ξ_k| = 1`.
    pub fn new(generators: Mat, facets: Mat) -> Result<Self, ZonotopeError> {
        let dim = generators.nrows();
        if facets.ncols() != dim {
            return Err(ZonotopeError::DimensionMismatch {
                expected: dim,
                actual: facets.ncols(),
            });
        }
        let facet_pinv = linalg::pseudo_inverse(&facets)
            .map_err(|_| ZonotopeError::RankDeficientFacets)?;
        let gens = GeneratorSet::new(generators);
        let supports = gens.supports(&facets);
        for (facet, &support) in supports.iter().enumerate() {
            if (support - 1.0).abs() > CONSISTENCY_TOL {
                return Err(ZonotopeError::InconsistentFacet { facet, support });
            }
        }
        Ok(Self {
            generators: gens,
            facets,
            facet_pinv,
        })
    }

    /// Like [`Zonotope::new`] but first rescales each facet row so that its
    /// support against the generators is exactly one.
    pub fn normalized(generators: Mat, mut facets: Mat) -> Result<Self, ZonotopeError> {
        if facets.ncols() != generators.nrows() {
            return Err(ZonotopeError::DimensionMismatch {
                expected: generators.nrows(),
                actual: facets.ncols(),
            });
        }
        let supports = GeneratorSet::new(generators.clone()).supports(&facets);
        for (facet, &s) in supports.iter().enumerate() {
            if s <= 0.0 {
                return Err(ZonotopeError::DegenerateFacet { facet });
            }
            let mut row = facets.row_mut(facet);
            row /= s;
        }
        Self::new(generators, facets)
    }

    /// Axis-aligned box with the given positive half-widths.
    pub fn from_box(half_widths: &[f64]) -> Result<Self, ZonotopeError> {
        for (index, &value) in half_widths.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ZonotopeError::NonPositiveHalfWidth { index, value });
            }
        }
        let n = half_widths.len();
        let generators = linalg::diag(half_widths);
        let mut facets = Mat::zeros(2 * n, n);
        for (k, &h) in half_widths.iter().enumerate() {
            facets[(2 * k, k)] = 1.0 / h;
            facets[(2 * k + 1, k)] = -1.0 / h;
        }
        let facet_pinv = linalg::pseudo_inverse(&facets)?;
        Ok(Self {
            generators: GeneratorSet::new(generators),
            facets,
            facet_pinv,
        })
    }

    /// Half-widths if this zonotope is exactly the one [`Zonotope::from_box`]
    /// builds from them, generators and facet rows alike.
    pub fn box_half_widths(&self) -> Option<Vec<f64>> {
        let g = self.generators.matrix();
        if g.nrows() != g.ncols() {
            return None;
        }
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if i != j && g[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        let widths: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)]).collect();
        let candidate = Self::from_box(&widths).ok()?;
        (candidate.facets == self.facets).then_some(widths)
    }

    pub fn dim(&self) -> usize {
        self.generators.dim()
    }

    pub fn generator_set(&self) -> &GeneratorSet {
        &self.generators
    }

    pub fn generators(&self) -> &Mat {
        self.generators.matrix()
    }

    pub fn facets(&self) -> &Mat {
        &self.facets
    }

    /// Left inverse `H♭` of the facet matrix.
    pub fn facet_pinv(&self) -> &Mat {
        &self.facet_pinv
    }

    /// True when the zonotope is `{0}` (no dimensions).
    pub fn is_trivial(&self) -> bool {
        self.dim() == 0 || self.generators.is_origin()
    }

    /// `H z ≤ 1 + tol` for every facet.
    pub fn satisfies_facets(&self, point: &Vector, tol: f64) -> bool {
        (&self.facets * point).iter().all(|v| *v <= 1.0 + tol)
    }

    pub fn contains_point(&self, point: &Vector) -> bool {
        self.generators.contains_point(point)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, ZonotopeError> {
        assert!(factor > 0.0, "zonotope scale must be positive");
        Ok(Self {
            generators: self.generators.scaled(factor),
            facets: &self.facets / factor,
            facet_pinv: &self.facet_pinv * factor,
        })
    }
}

/// Outcome of testing a generator set against a facet set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub contained: bool,
    /// `1 − max_τ support(inner, h_τ)`; nonnegative exactly when contained.
    pub margin: f64,
}

/// Exact test of `inner ⊆ outer`: every facet support of `inner` must be ≤ 1.
pub fn contains_zonotope(inner: &GeneratorSet, outer: &Zonotope) -> Containment {
    assert_eq!(inner.dim(), outer.dim(), "containment dimension");
    let max_support = inner.supports(outer.facets()).iter().copied().fold(0.0, f64::max);
    let margin = 1.0 - max_support;
    Containment {
        contained: margin >= -CONTAINMENT_TOL,
        margin,
    }
}
