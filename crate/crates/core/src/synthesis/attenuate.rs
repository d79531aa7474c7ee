//! Coupling attenuation: choose `L_ij` to shrink `H_i (A_ij + L_ij C_j) H_j♭`.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat, Vector};
use crate::lp::{LinearProgram, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttenuationNorm {
    #[default]
    Frobenius,
    /// Entrywise 1-norm, solved as a linear program.
    One,
}

impl AttenuationNorm {
    pub fn eval(self, m: &Mat) -> f64 {
        match self {
            AttenuationNorm::Frobenius => m.norm(),
            AttenuationNorm::One => linalg::entrywise_one_norm(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attenuation {
    pub gain: Mat,
    pub objective: f64,
}

/// `‖H_i (A_ij + L C_j) H_j♭‖` in the chosen norm.
pub fn attenuation_objective(
    h_i: &Mat,
    a_ij: &Mat,
    c_j: &Mat,
    h_j_pinv: &Mat,
    gain: &Mat,
    norm: AttenuationNorm,
) -> f64 {
    norm.eval(&(h_i * (a_ij + gain * c_j) * h_j_pinv))
}

/// Minimizes `‖H_i (A_ij + L C_j) H_j♭‖` over `L`.
///
/// With `U = H_i`, `V = C_j H_j♭` and `X = H_i A_ij H_j♭` the objective is
/// `‖X + U L V‖`. In the Frobenius norm the minimizer is `L = −U⁺ X V⁺`.
pub fn attenuate_coupling(
    h_i: &Mat,
    a_ij: &Mat,
    c_j: &Mat,
    h_j_pinv: &Mat,
    norm: AttenuationNorm,
) -> Attenuation {
    let n_i = a_ij.nrows();
    let p_j = c_j.nrows();
    let zero = Mat::zeros(n_i, p_j);
    if c_j.iter().all(|v| *v == 0.0) {
        let objective = attenuation_objective(h_i, a_ij, c_j, h_j_pinv, &zero, norm);
        return Attenuation {
            gain: zero,
            objective,
        };
    }
    let x = h_i * a_ij * h_j_pinv;
    let v = c_j * h_j_pinv;
    let gain = match norm {
        AttenuationNorm::Frobenius => -(linalg::pinv_any(h_i) * &x * linalg::pinv_any(&v)),
        AttenuationNorm::One => one_norm_gain(h_i, &x, &v).unwrap_or(zero),
    };
    let objective = attenuation_objective(h_i, a_ij, c_j, h_j_pinv, &gain, norm);
    Attenuation { gain, objective }
}

/// `min Σ |X + U L V|` as an LP in `(L, t⁺, t⁻)` with `X + U L V = t⁺ − t⁻`.
fn one_norm_gain(u: &Mat, x: &Mat, v: &Mat) -> Option<Mat> {
    let (fi, fj) = x.shape();
    let (ni, pj) = (u.ncols(), v.nrows());
    let nl = ni * pj;
    let nt = fi * fj;
    let mut a = Mat::zeros(nt, nl + 2 * nt);
    let mut b = Vector::zeros(nt);
    for col in 0..fj {
        for row in 0..fi {
            let eq = col * fi + row;
            for s in 0..pj {
                for r in 0..ni {
                    a[(eq, s * ni + r)] = u[(row, r)] * v[(s, col)];
                }
            }
            a[(eq, nl + eq)] = -1.0;
            a[(eq, nl + nt + eq)] = 1.0;
            b[eq] = -x[(row, col)];
        }
    }
    let mut cost = vec![0.0; nl];
    cost.extend(std::iter::repeat_n(1.0, 2 * nt));
    let mut lower = vec![f64::NEG_INFINITY; nl];
    lower.extend(std::iter::repeat_n(0.0, 2 * nt));
    let lp = LinearProgram {
        a,
        b,
        c: cost,
        lower,
        upper: vec![f64::INFINITY; nl + 2 * nt],
    };
    let sol = lp.solve();
    (sol.status == LpStatus::Optimal).then(|| Mat::from_column_slice(ni, pj, &sol.x[..nl]))
}
