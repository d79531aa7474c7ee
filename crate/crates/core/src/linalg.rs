//! Dense linear-algebra helpers shared by the geometry, analysis and synthesis code.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not full column rank (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular")]
    Singular,
}

/// Induced infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Entrywise 1-norm, the sum of absolute values of all entries.
pub fn entrywise_one_norm(m: &Mat) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Left inverse `(MᵀM)⁻¹Mᵀ` of a full-column-rank matrix.
///
/// Rank is judged from the singular values: the ratio of the smallest to the
/// largest must exceed `1e-12`.
pub fn pseudo_inverse(m: &Mat) -> Result<Mat, LinalgError> {
    let cols = m.ncols();
    if cols == 0 {
        return Ok(Mat::zeros(0, m.nrows()));
    }
    if m.nrows() < cols {
        return Err(LinalgError::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin / smax < 1e-12 {
        return Err(LinalgError::RankDeficient {
            condition: if smin == 0.0 { f64::INFINITY } else { smax / smin },
        });
    }
    let gram = m.transpose() * m;
    let chol = gram.cholesky().ok_or(LinalgError::Singular)?;
    Ok(chol.solve(&m.transpose()))
}

/// Moore-Penrose pseudo-inverse for matrices of any rank (SVD based).
pub fn pinv_any(m: &Mat) -> Mat {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Mat::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (m.nrows().max(m.ncols()) as f64);
    svd.pseudo_inverse(eps.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| Mat::zeros(m.ncols(), m.nrows()))
}

/// Spectral radius from the eigenvalues of the real Schur form.
pub fn spectral_radius(m: &Mat) -> Result<f64, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn hcat(blocks: &[Mat], rows: usize) -> Mat {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn diag(values: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(values))
}

pub fn mat_from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Option<Mat> {
    if rows.is_empty() {
        return Some(Mat::zeros(0, ncols_if_empty));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &Mat) -> Result<Mat, LinalgError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    let norm = inf_norm(m);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings);
    let mut result = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled / k as f64;
        result += &term;
        if inf_norm(&term) <= 1e-17 * inf_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Serde adapter storing a matrix as an array of rows.
///
/// A matrix with zero rows serializes as `[]` and reads back as `0×0`.
pub mod serde_rows {
    use super::{mat_from_rows, mat_to_rows, Mat};
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        mat_from_rows(&rows, 0).ok_or_else(|| D::Error::custom("ragged matrix rows"))
    }
}
