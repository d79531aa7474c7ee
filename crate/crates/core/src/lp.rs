//! Bounded-variable revised simplex for small dense linear programs.
//!
//! Solves
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x = b,   l ≤ x ≤ u
//! ```
//!
//! where bounds may be infinite. Phase one drives a set of signed artificial
//! columns out of the basis; phase two optimizes the real objective. The basis
//! inverse is kept explicitly and refactored periodically, which is the right
//! trade-off for the problems in this crate: few equality rows (the ambient
//! dimension of a zonotope) and possibly many bounded columns (its generators).

use crate::linalg::{Mat, Vector};

const REFACTOR_EVERY: usize = 64;
const COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub a: Mat,
    pub b: Vector,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Feasibility problem with zero objective.
    pub fn feasibility(a: Mat, b: Vector, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = a.ncols();
        Self {
            a,
            b,
            c: vec![0.0; n],
            lower,
            upper,
        }
    }

    pub fn solve(&self) -> LpSolution {
        let n = self.a.ncols();
        assert_eq!(self.b.len(), self.a.nrows(), "rhs length");
        assert_eq!(self.c.len(), n, "cost length");
        assert_eq!(self.lower.len(), n, "lower bound length");
        assert_eq!(self.upper.len(), n, "upper bound length");
        let mut tableau = Simplex::new(self);
        let limit = 50 * (self.a.nrows() + n) + 1000;

        let phase_one = tableau.run(limit);
        if phase_one == LpStatus::IterationLimit {
            return tableau.solution(LpStatus::IterationLimit, self);
        }
        let infeasibility: f64 = (n..n + self.a.nrows()).map(|j| tableau.x[j]).sum();
        let scale = 1.0 + self.b.amax();
        if infeasibility > 1e-9 * scale {
            return tableau.solution(LpStatus::Infeasible, self);
        }
        if self.c.iter().all(|&v| v == 0.0) {
            return tableau.solution(LpStatus::Optimal, self);
        }
        tableau.enter_phase_two(self);
        let status = tableau.run(limit);
        tableau.solution(status, self)
    }
}

struct Simplex<'a> {
    a: &'a Mat,
    b: &'a Vector,
    m: usize,
    n: usize,
    art_sign: Vec<f64>,
    x: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    basic_row: Vec<Option<usize>>,
    binv: Mat,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let m = lp.a.nrows();
        let n = lp.a.ncols();
        let mut x = vec![0.0; n + m];
        let mut lo = lp.lower.clone();
        let mut up = lp.upper.clone();
        for j in 0..n {
            x[j] = if lo[j].is_finite() {
                lo[j]
            } else if up[j].is_finite() {
                up[j]
            } else {
                0.0
            };
        }
        let xn = Vector::from_column_slice(&x[..n]);
        let residual = &lp.b - &lp.a * xn;
        let mut art_sign = vec![1.0; m];
        for i in 0..m {
            if residual[i] < 0.0 {
                art_sign[i] = -1.0;
            }
            x[n + i] = residual[i].abs();
        }
        lo.extend(std::iter::repeat_n(0.0, m));
        up.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut cost = vec![0.0; n];
        cost.extend(std::iter::repeat_n(1.0, m));
        let basis: Vec<usize> = (n..n + m).collect();
        let mut basic_row = vec![None; n + m];
        for (r, &j) in basis.iter().enumerate() {
            basic_row[j] = Some(r);
        }
        let binv = Mat::from_diagonal(&Vector::from_vec(art_sign.clone()));
        Self {
            a: &lp.a,
            b: &lp.b,
            m,
            n,
            art_sign,
            x,
            lo,
            up,
            cost,
            basis,
            basic_row,
            binv,
        }
    }

    fn column(&self, j: usize) -> Vector {
        if j < self.n {
            self.a.column(j).into_owned()
        } else {
            let mut v = Vector::zeros(self.m);
            v[j - self.n] = self.art_sign[j - self.n];
            v
        }
    }

    fn dot_column(&self, y: &Vector, j: usize) -> f64 {
        if j < self.n {
            self.a.column(j).dot(y)
        } else {
            y[j - self.n] * self.art_sign[j - self.n]
        }
    }

    fn enter_phase_two(&mut self, lp: &LinearProgram) {
        for j in self.n..self.n + self.m {
            self.up[j] = 0.0;
            if self.basic_row[j].is_none() {
                self.x[j] = 0.0;
            }
        }
        self.cost = lp.c.clone();
        self.cost.extend(std::iter::repeat_n(0.0, self.m));
        self.refactor();
    }

    /// Rebuild the basis inverse and recompute basic values from nonbasics.
    fn refactor(&mut self) {
        let mut bmat = Mat::zeros(self.m, self.m);
        for (r, &j) in self.basis.iter().enumerate() {
            bmat.set_column(r, &self.column(j));
        }
        if let Some(inv) = bmat.try_inverse() {
            self.binv = inv;
        }
        let mut rhs = self.b.clone();
        for j in 0..self.n + self.m {
            if self.basic_row[j].is_none() && self.x[j] != 0.0 {
                rhs -= self.column(j) * self.x[j];
            }
        }
        let xb = &self.binv * rhs;
        for (r, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[r];
        }
    }

    fn run(&mut self, limit: usize) -> LpStatus {
        let total = self.n + self.m;
        let mut degenerate_streak = 0usize;
        for iter in 0..limit {
            if iter > 0 && iter % REFACTOR_EVERY == 0 {
                self.refactor();
            }
            let cb = Vector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost[j]));
            let y = self.binv.transpose() * cb;
            let bland = degenerate_streak > 30;

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..total {
                if self.basic_row[j].is_some() || self.up[j] - self.lo[j] <= BOUND_TOL {
                    continue;
                }
                let d = self.cost[j] - self.dot_column(&y, j);
                let can_inc = self.x[j] < self.up[j] - BOUND_TOL;
                let can_dec = self.x[j] > self.lo[j] + BOUND_TOL;
                let (score, dir) = if d < -COST_TOL && can_inc {
                    (-d, 1.0)
                } else if d > COST_TOL && can_dec {
                    (d, -1.0)
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if score > best {
                    best = score;
                    entering = Some((j, dir));
                }
            }
            let Some((j, dir)) = entering else {
                return LpStatus::Optimal;
            };

            let alpha = &self.binv * self.column(j);
            let mut theta = if self.up[j].is_finite() && self.lo[j].is_finite() {
                self.up[j] - self.lo[j]
            } else {
                f64::INFINITY
            };
            let mut leaving: Option<(usize, f64)> = None;
            let mut leaving_pivot = 0.0;
            for r in 0..self.m {
                let a = dir * alpha[r];
                let bj = self.basis[r];
                let limit_r = if a > PIVOT_TOL {
                    if self.lo[bj].is_finite() {
                        ((self.x[bj] - self.lo[bj]) / a).max(0.0)
                    } else {
                        continue;
                    }
                } else if a < -PIVOT_TOL {
                    if self.up[bj].is_finite() {
                        ((self.up[bj] - self.x[bj]) / -a).max(0.0)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                let take = if limit_r < theta - 1e-12 {
                    true
                } else if (limit_r - theta).abs() <= 1e-12 {
                    match leaving {
                        None => true,
                        Some((r0, _)) if bland => bj < self.basis[r0],
                        Some(_) => a.abs() > leaving_pivot,
                    }
                } else {
                    false
                };
                if take {
                    theta = limit_r;
                    let target = if a > 0.0 { self.lo[bj] } else { self.up[bj] };
                    leaving = Some((r, target));
                    leaving_pivot = a.abs();
                }
            }
            if !theta.is_finite() {
                return LpStatus::Unbounded;
            }
            if theta <= 1e-14 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }

            self.x[j] += dir * theta;
            for r in 0..self.m {
                let bj = self.basis[r];
                self.x[bj] -= dir * theta * alpha[r];
            }
            match leaving {
                None => {
                    // bound flip
                    self.x[j] = if dir > 0.0 { self.up[j] } else { self.lo[j] };
                }
                Some((r, target)) => {
                    let out = self.basis[r];
                    self.x[out] = target;
                    self.basic_row[out] = None;
                    self.basis[r] = j;
                    self.basic_row[j] = Some(r);
                    let piv = alpha[r];
                    let pivot_row = self.binv.row(r) / piv;
                    for i in 0..self.m {
                        if i != r && alpha[i] != 0.0 {
                            let f = alpha[i];
                            let mut row = self.binv.row_mut(i);
                            for (dst, src) in row.iter_mut().zip(pivot_row.iter()) {
                                *dst -= f * src;
                            }
                        }
                    }
                    self.binv.set_row(r, &pivot_row);
                }
            }
        }
        LpStatus::IterationLimit
    }

    fn solution(&self, status: LpStatus, lp: &LinearProgram) -> LpSolution {
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let objective = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();
        LpSolution {
            status,
            x,
            objective,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bounded_problem() {
        // min -x - y  s.t. x + y + s = 1.5, 0 ≤ x,y ≤ 1, s ≥ 0
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let lp = LinearProgram {
            a,
            b: Vector::from_vec(vec![1.5]),
            c: vec![-1.0, -1.0, 0.0],
            lower: vec![0.0; 3],
            upper: vec![1.0, 1.0, f64::INFINITY],
        };
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.5).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let a = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        let lp = LinearProgram::feasibility(
            a,
            Vector::from_vec(vec![3.0]),
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
        );
        assert_eq!(lp.solve().status, LpStatus::Infeasible);
    }

    #[test]
    fn free_variables_and_absolute_values() {
        // min |z - 2| with z free: z - p + q = 2, p,q ≥ 0, minimize p + q.
        let a = Mat::from_row_slice(1, 3, &[1.0, -1.0, 1.0]);
        let lp = LinearProgram {
            a,
            b: Vector::from_vec(vec![2.0]),
            c: vec![0.0, 1.0, 1.0],
            lower: vec![f64::NEG_INFINITY, 0.0, 0.0],
            upper: vec![f64::INFINITY; 3],
        };
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_is_reported() {
        let a = Mat::from_row_slice(1, 2, &[1.0, -1.0]);
        let lp = LinearProgram {
            a,
            b: Vector::from_vec(vec![0.0]),
            c: vec![-1.0, 0.0],
            lower: vec![0.0, 0.0],
            upper: vec![f64::INFINITY; 2],
        };
        assert_eq!(lp.solve().status, LpStatus::Unbounded);
    }
}
