//! Dual Riccati iteration and the resulting observer gain.

use crate::linalg::Mat;

use super::SynthesisError;

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: Mat,
    /// `‖rhs(P) − P‖_F / (1 + ‖P‖_F)`.
    pub residual: f64,
    pub iterations: usize,
}

fn riccati_map(a: &Mat, c: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat, SynthesisError> {
    let apct = a * p * c.transpose();
    let s = r + c * p * c.transpose();
    let chol = s.cholesky().ok_or(SynthesisError::IndefiniteInnovation)?;
    let correction = &apct * chol.solve(&apct.transpose());
    let next = a * p * a.transpose() + q - correction;
    Ok((&next + next.transpose()) * 0.5)
}

/// Residual of the Riccati equation at `p`.
pub fn dare_residual(a: &Mat, c: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<f64, SynthesisError> {
    let next = riccati_map(a, c, q, r, p)?;
    Ok((next - p).norm() / (1.0 + p.norm()))
}

/// Iterates `P ← A P Aᵀ + Q − A P Cᵀ (R + C P Cᵀ)⁻¹ C P Aᵀ` from `P₀ = Q` until
/// the relative Frobenius change drops below `1e-12`.
pub fn solve_dare(a: &Mat, c: &Mat, q: &Mat, r: &Mat) -> Result<DareSolution, SynthesisError> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n || q.shape() != (n, n) || r.shape() != (c.nrows(), c.nrows()) {
        return Err(SynthesisError::Dimension(format!(
            "DARE with A {:?}, C {:?}, Q {:?}, R {:?}",
            a.shape(),
            c.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let mut p = q.clone();
    for it in 1..=DARE_MAX_ITER {
        let next = riccati_map(a, c, q, r, &p)?;
        let change = (&next - &p).norm();
        let scale = next.norm();
        if !scale.is_finite() || !change.is_finite() {
            return Err(SynthesisError::DareDivergence { iterations: it });
        }
        p = next;
        if change <= DARE_TOL * scale.max(f64::MIN_POSITIVE) {
            let residual = dare_residual(a, c, q, r, &p)?;
            return Ok(DareSolution {
                p,
                residual,
                iterations: it,
            });
        }
    }
    Err(SynthesisError::DareDivergence {
        iterations: DARE_MAX_ITER,
    })
}

/// Observer gain `L = −A P Cᵀ (R + C P Cᵀ)⁻¹`, oriented so that `A + L C` is the
/// error dynamics matrix.
pub fn local_gain(a: &Mat, c: &Mat, p: &Mat, r: &Mat) -> Result<Mat, SynthesisError> {
    let s = r + c * p * c.transpose();
    let chol = s.cholesky().ok_or(SynthesisError::IndefiniteInnovation)?;
    let apct = a * p * c.transpose();
    Ok(-chol.solve(&apct.transpose()).transpose())
}
