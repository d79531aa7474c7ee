//! Derivative-free search over diagonal `Q`, `R` for a local gain meeting the
//! small-gain conditions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, CertifiedSum, SeriesOptions, SmallGainReport};
use crate::linalg::{self, Mat};
use crate::zonotope::{GeneratorSet, Zonotope};

use super::dare::{local_gain, solve_dare};

pub const LOG_BOUND: f64 = 6.0;

/// Score minimized once a feasible point is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchObjective {
    /// `β` alone.
    Beta,
    /// `max(β, ρ(Ā_ii))`, which also favours fast local error decay.
    #[default]
    BetaAndRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub objective: SearchObjective,
    pub eval_budget: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Extra seeded random poll directions per sweep.
    pub random_directions: usize,
    pub seed: u64,
    pub series: SeriesOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            objective: SearchObjective::default(),
            eval_budget: 500,
            initial_step: 0.5,
            min_step: 1e-3,
            random_directions: 8,
            seed: 0,
            series: SeriesOptions::default(),
        }
    }
}

/// Best point seen by an unsuccessful search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub evaluations: usize,
    pub best_beta: Option<f64>,
    pub best_gamma: Option<f64>,
    pub best_spectral_radius: Option<f64>,
}

impl fmt::Display for SearchDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        write!(
            f,
            "best beta {}, gamma {}, spectral radius {} after {} evaluations",
            show(self.best_beta),
            show(self.best_gamma),
            show(self.best_spectral_radius),
            self.evaluations
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub riccati: Mat,
    pub gain: Mat,
    pub a_bar: Mat,
    pub report: SmallGainReport,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Feasible(Box<QrSolution>),
    Infeasible(SearchDiagnostics),
}

/// Local problem data seen by the search. Cross gains are already fixed.
pub struct SearchProblem<'a> {
    pub a: &'a Mat,
    pub c: &'a Mat,
    pub error_set: &'a Zonotope,
    /// `(Ā_ij, H_j♭)` for every parent.
    pub parents: &'a [(Mat, Mat)],
    pub psi: &'a GeneratorSet,
    /// Whether `W_i ≠ {0}`, which activates the γ constraint.
    pub disturbed: bool,
}

#[derive(Debug, Clone)]
struct Eval {
    feasible: bool,
    score: f64,
    solution: QrSolution,
}

impl Eval {
    fn better_than(&self, other: &Option<Eval>) -> bool {
        match other {
            None => true,
            Some(o) => match (self.feasible, o.feasible) {
                (true, false) => true,
                (false, true) => false,
                _ => self.score < o.score,
            },
        }
    }
}

fn upper(s: &Option<CertifiedSum>) -> f64 {
    s.map_or(f64::INFINITY, |v| v.upper)
}

fn evaluate(problem: &SearchProblem<'_>, x: &[f64], opts: &SearchOptions) -> Option<Eval> {
    let n = problem.a.nrows();
    let q: Vec<f64> = x[..n].iter().map(|v| 10f64.powf(*v)).collect();
    let r: Vec<f64> = x[n..].iter().map(|v| 10f64.powf(*v).max(1e-9)).collect();
    let dare = solve_dare(problem.a, problem.c, &linalg::diag(&q), &linalg::diag(&r)).ok()?;
    let gain = local_gain(problem.a, problem.c, &dare.p, &linalg::diag(&r)).ok()?;
    let a_bar = problem.a + &gain * problem.c;
    let report = analysis::small_gain_report(&a_bar, problem.error_set, problem.parents, problem.psi, opts.series)
        .ok()?;
    if !report.schur_local.is_schur {
        return None;
    }
    let beta = upper(&report.beta);
    let gamma = upper(&report.gamma);
    let feasible = beta < 1.0 && (!problem.disturbed || gamma < 1.0);
    let score = if feasible {
        match opts.objective {
            SearchObjective::Beta => beta,
            SearchObjective::BetaAndRate => beta.max(report.schur_local.spectral_radius),
        }
    } else if problem.disturbed {
        beta.max(gamma)
    } else {
        beta
    };
    Some(Eval {
        feasible,
        score,
        solution: QrSolution {
            q,
            r,
            riccati: dare.p,
            gain,
            a_bar,
            report,
            evaluations: 0,
        },
    })
}

fn poll_directions(dim: usize, n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(2 * dim + 4 + extra);
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[k] = sign;
            dirs.push(d);
        }
    }
    for sign in [1.0, -1.0] {
        dirs.push((0..dim).map(|k| if k < n { sign } else { 0.0 }).collect());
        dirs.push((0..dim).map(|k| if k < n { 0.0 } else { sign }).collect());
    }
    for _ in 0..extra {
        let mut d: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            d.iter_mut().for_each(|v| *v /= scale);
            dirs.push(d);
        }
    }
    dirs
}

/// Pattern search on `log₁₀` of the diagonals of `Q` and `R` within `[−6, 6]`.
///
/// Starts at `Q = I`, `R = I`. Before a feasible point is known the score is
/// `max(β, γ)` (or `β` without disturbance); afterwards infeasible iterates are
/// rejected and the [`SearchObjective`] score is minimized. Each sweep polls
/// coordinate, block-scaling and seeded random directions, moving
/// opportunistically, and the last successful direction is polled first in the
/// next sweep; a sweep without improvement halves the step. The search stops once feasible
/// and a sweep improves the score by less than `1e-4` relatively, or when the
/// budget is spent.
pub fn search_qr(problem: &SearchProblem<'_>, opts: &SearchOptions) -> SearchOutcome {
    let n = problem.a.nrows();
    let dim = n + problem.c.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = vec![0.0; dim];
    let mut evaluations = 1;
    let mut best = evaluate(problem, &x, opts);
    let mut step = opts.initial_step;
    let mut last_success: Option<Vec<f64>> = None;

    // A decoupled, undisturbed subsystem is solved by the Riccati gain alone.
    let done = |best: &Option<Eval>| {
        best.as_ref().is_some_and(|b| {
            b.feasible && (b.score == 0.0 || (!problem.disturbed && upper(&b.solution.report.beta) == 0.0))
        })
    };
    while evaluations < opts.eval_budget && step >= opts.min_step && !done(&best) {
        let start = best.as_ref().map(|b| (b.feasible, b.score));
        let mut improved = false;
        let mut dirs = poll_directions(dim, n, opts.random_directions, &mut rng);
        if let Some(d) = last_success.take() {
            dirs.insert(0, d);
        }
        for dir in dirs {
            if evaluations >= opts.eval_budget {
                break;
            }
            let cand: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| (xi + step * di).clamp(-LOG_BOUND, LOG_BOUND))
                .collect();
            if cand == x {
                continue;
            }
            evaluations += 1;
            if let Some(e) = evaluate(problem, &cand, opts) {
                if e.better_than(&best) {
                    x = cand;
                    best = Some(e);
                    improved = true;
                    last_success = Some(dir);
                }
            }
        }
        if !improved {
            step *= 0.5;
            continue;
        }
        if let (Some((true, before)), Some(b)) = (start, best.as_ref()) {
            if before - b.score <= 1e-4 * before.abs() {
                break;
            }
        }
    }

    match best {
        Some(b) if b.feasible => {
            let mut solution = b.solution;
            solution.evaluations = evaluations;
            SearchOutcome::Feasible(Box::new(solution))
        }
        other => SearchOutcome::Infeasible(SearchDiagnostics {
            evaluations,
            best_beta: other.as_ref().and_then(|b| b.solution.report.beta.map(|v| v.upper)),
            best_gamma: other.as_ref().and_then(|b| b.solution.report.gamma.map(|v| v.upper)),
            best_spectral_radius: other.as_ref().map(|b| b.solution.report.schur_local.spectral_radius),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn decoupled_noiseless_is_feasible_at_once() {
        let e = Zonotope::from_box(&[1.0, 1.0]).unwrap();
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.9]);
        let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let psi = GeneratorSet::origin(2);
        let problem = SearchProblem {
            a: &a,
            c: &c,
            error_set: &e,
            parents: &[],
            psi: &psi,
            disturbed: false,
        };
        match search_qr(&problem, &SearchOptions::default()) {
            SearchOutcome::Feasible(sol) => {
                assert_eq!(sol.evaluations, 1);
                assert_eq!(sol.report.beta.unwrap().upper, 0.0);
                assert_eq!(sol.q, vec![1.0, 1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overwhelming_coupling_is_infeasible() {
        let e = Zonotope::from_box(&[1.0]).unwrap();
        let parents = vec![(s(2.0), e.facet_pinv().clone())];
        let psi = GeneratorSet::new(s(2.0));
        let problem = SearchProblem {
            a: &s(0.5),
            c: &s(1.0),
            error_set: &e,
            parents: &parents,
            psi: &psi,
            disturbed: false,
        };
        let opts = SearchOptions {
            eval_budget: 60,
            ..SearchOptions::default()
        };
        match search_qr(&problem, &opts) {
            SearchOutcome::Infeasible(d) => {
                assert!(d.best_beta.unwrap() >= 2.0);
                assert!(d.evaluations <= 60);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weak_coupling_becomes_feasible() {
        let e = Zonotope::from_box(&[1.0]).unwrap();
        let parents = vec![(s(0.3), e.facet_pinv().clone())];
        let psi = GeneratorSet::new(s(0.3));
        let problem = SearchProblem {
            a: &s(1.1),
            c: &s(1.0),
            error_set: &e,
            parents: &parents,
            psi: &psi,
            disturbed: false,
        };
        match search_qr(&problem, &SearchOptions::default()) {
            SearchOutcome::Feasible(sol) => {
                assert!(sol.report.beta.unwrap().upper < 1.0);
                assert!(sol.report.schur_local.is_schur);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
