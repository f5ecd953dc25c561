//! Dense LP feasibility via a phase-1 simplex with bounded variables.
//!
//! The verifier's leaf subproblems are small systems of linear inequalities
//! over a box: a few dozen rows (one per branched hidden unit plus the
//! objective cut) over up to a few thousand input coordinates. Variable
//! bounds are handled natively — nonbasic variables may rest at either end
//! of their interval — so the box never inflates the row count, which keeps
//! each pivot cheap.
//!
//! All arithmetic is `f64` regardless of the model's scalar type; callers
//! cast in and out. Pricing is Dantzig's rule (steepest improving reduced
//! cost, lowest column index on ties) while pivots make progress, falling
//! back to Bland's rule (lowest eligible index) during degenerate stalls;
//! the leaving row is always the lowest limiting one. Every tie-break is
//! by index, so solves are deterministic — repeated runs produce
//! bit-identical witnesses — and the Bland fallback keeps them cycle-free.

use crate::{Error, Result};

/// Feasibility is declared when the phase-1 objective (total constraint
/// violation) drops to this level or below.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Reduced costs smaller than this are treated as zero when picking an
/// entering column.
const PIVOT_TOL: f64 = 1e-9;

/// Ratio-test coefficients smaller than this impose no limit.
const RATIO_TOL: f64 = 1e-11;

/// Consecutive degenerate pivots tolerated under Dantzig pricing before
/// switching to Bland's rule until progress resumes.
const DEGENERACY_PATIENCE: u32 = 16;

/// A conjunction of `coeffs . x <= rhs` rows over a finite box.
#[derive(Clone, Debug)]
pub struct FeasibilityProblem {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<f64>, f64)>,
}

impl FeasibilityProblem {
    /// A problem over the box `lower[j] <= x[j] <= upper[j]`.
    ///
    /// Bounds must be finite with `lower <= upper` coordinatewise; an empty
    /// interval is an invalid argument (callers prune empty boxes before
    /// building LPs).
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("feasibility box: dimension mismatch"));
        }
        for j in 0..lower.len() {
            if !lower[j].is_finite() || !upper[j].is_finite() || lower[j] > upper[j] {
                return Err(Error::invalid(format!(
                    "feasibility box: bad interval [{}, {}] at coordinate {j}",
                    lower[j], upper[j]
                )));
            }
        }
        Ok(FeasibilityProblem {
            dim: lower.len(),
            lower,
            upper,
            rows: Vec::new(),
        })
    }

    /// Adds the constraint `coeffs . x <= rhs`.
    ///
    /// Panics if `coeffs` does not match the box dimension; rows come from
    /// the verifier's own bookkeeping, so a mismatch is a programming error.
    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.dim, "constraint dimension mismatch");
        debug_assert!(coeffs.iter().all(|c| c.is_finite()) && rhs.is_finite());
        self.rows.push((coeffs, rhs));
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Searches for a point satisfying every row within [`FEASIBILITY_TOL`].
    ///
    /// Returns a witness inside the box on success, `None` when the system
    /// is infeasible. Deterministic: identical problems yield identical
    /// witnesses.
    pub fn feasible_point(&self) -> Option<Vec<f64>> {
        let d = self.dim;
        let m = self.rows.len();
        let range: Vec<f64> = (0..d).map(|j| self.upper[j] - self.lower[j]).collect();
        if m == 0 {
            return Some(self.lower.clone());
        }

        // Shift to s = x - lower with s in [0, range]. Rows with negative
        // shifted rhs are negated and given an artificial variable so the
        // all-slack basis starts feasible; phase 1 minimizes the artificial
        // total.
        let shifted_rhs: Vec<f64> = self
            .rows
            .iter()
            .map(|(a, b)| {
                let mut bp = *b;
                for j in 0..d {
                    bp -= a[j] * self.lower[j];
                }
                bp
            })
            .collect();
        let n_art = shifted_rhs.iter().filter(|&&b| b < 0.0).count();
        let n = d + m + n_art;

        let mut tab = vec![0.0f64; m * n];
        let mut rhs = vec![0.0f64; m];
        let mut basis = vec![0usize; m];
        let mut in_basis = vec![false; n];
        let mut at_upper = vec![false; n];
        let mut art_next = d + m;
        for i in 0..m {
            let (a, _) = &self.rows[i];
            let neg = shifted_rhs[i] < 0.0;
            let sgn = if neg { -1.0 } else { 1.0 };
            for j in 0..d {
                tab[i * n + j] = sgn * a[j];
            }
            tab[i * n + d + i] = sgn; // slack
            rhs[i] = sgn * shifted_rhs[i];
            basis[i] = if neg {
                let col = art_next;
                tab[i * n + col] = 1.0;
                art_next += 1;
                col
            } else {
                d + i
            };
            in_basis[basis[i]] = true;
        }

        let col_ub = |k: usize| -> f64 {
            if k < d {
                range[k]
            } else {
                f64::INFINITY
            }
        };

        let max_iter = 10_000 + 50 * (m + n);
        let mut beta = vec![0.0f64; m];
        let mut d_costs = vec![0.0f64; d + m];
        let mut degenerate_streak = 0u32;
        for _ in 0..max_iter {
            // Current basic values given the nonbasic bound assignment.
            beta.copy_from_slice(&rhs);
            for k in 0..d {
                if at_upper[k] && !in_basis[k] {
                    let u = range[k];
                    if u != 0.0 {
                        for i in 0..m {
                            beta[i] -= tab[i * n + k] * u;
                        }
                    }
                }
            }

            let art_rows: Vec<usize> = (0..m).filter(|&i| basis[i] >= d + m).collect();
            let z: f64 = art_rows.iter().map(|&i| beta[i]).sum();
            if z <= FEASIBILITY_TOL {
                // Feasible: materialize x = lower + s.
                let mut x = self.lower.clone();
                for j in 0..d {
                    if at_upper[j] && !in_basis[j] {
                        x[j] = self.upper[j];
                    }
                }
                for i in 0..m {
                    let b = basis[i];
                    if b < d {
                        x[b] = self.lower[b] + beta[i].clamp(0.0, range[b]);
                    }
                }
                return Some(x);
            }

            // Price every structural/slack column against the artificial
            // rows in one pass.
            d_costs.fill(0.0);
            for &i in &art_rows {
                let row = &tab[i * n..i * n + d + m];
                for (dk, &t) in d_costs.iter_mut().zip(row) {
                    *dk -= t;
                }
            }

            // Entering column: Dantzig's rule (steepest improving reduced
            // cost, lowest index on ties) while pivots progress; Bland's
            // rule (lowest eligible index) during degenerate stalls, which
            // rules out cycling.
            let mut entering = None;
            if degenerate_streak < DEGENERACY_PATIENCE {
                let mut best = PIVOT_TOL;
                for k in 0..d + m {
                    if in_basis[k] {
                        continue;
                    }
                    let gain = if at_upper[k] { d_costs[k] } else { -d_costs[k] };
                    if gain > best {
                        best = gain;
                        entering = Some((k, at_upper[k]));
                    }
                }
            } else {
                for k in 0..d + m {
                    if in_basis[k] {
                        continue;
                    }
                    let dk = d_costs[k];
                    if (!at_upper[k] && dk < -PIVOT_TOL) || (at_upper[k] && dk > PIVOT_TOL) {
                        entering = Some((k, at_upper[k]));
                        break;
                    }
                }
            }
            let Some((k, from_upper)) = entering else {
                return None; // phase-1 optimum above tolerance: infeasible
            };
            let sigma = if from_upper { -1.0 } else { 1.0 };

            // Ratio test: how far can x_k move before it flips to its own
            // opposite bound or drives a basic variable to one of its
            // bounds. Lowest limiting row wins ties; the bound flip wins
            // only when strictly smaller than every row limit.
            let mut best_delta = col_ub(k);
            let mut best_row = None;
            for i in 0..m {
                let coeff = sigma * tab[i * n + k];
                let limit = if coeff > RATIO_TOL {
                    beta[i] / coeff
                } else if coeff < -RATIO_TOL {
                    let ub = col_ub(basis[i]);
                    if ub.is_finite() {
                        (ub - beta[i]) / (-coeff)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                if limit < best_delta {
                    best_delta = limit;
                    best_row = Some(i);
                }
            }
            if best_delta.is_infinite() {
                // Phase 1 is bounded below by zero, so an unbounded ray
                // can only appear through numeric breakdown.
                debug_assert!(false, "unbounded phase-1 direction");
                return None;
            }
            if best_delta > RATIO_TOL {
                degenerate_streak = 0;
            } else {
                degenerate_streak += 1;
            }

            match best_row {
                None => {
                    // Bound flip; the next beta recomputation absorbs it.
                    at_upper[k] = !at_upper[k];
                }
                Some(l) => {
                    let leaving = basis[l];
                    // Which bound did the leaving variable hit?
                    at_upper[leaving] = sigma * tab[l * n + k] < 0.0 && leaving < d;
                    in_basis[leaving] = false;

                    let pivot = tab[l * n + k];
                    debug_assert!(pivot.abs() > RATIO_TOL);
                    let inv = 1.0 / pivot;
                    for c in 0..n {
                        tab[l * n + c] *= inv;
                    }
                    rhs[l] *= inv;
                    for i in 0..m {
                        if i == l {
                            continue;
                        }
                        let f = tab[i * n + k];
                        if f != 0.0 {
                            for c in 0..n {
                                tab[i * n + c] -= f * tab[l * n + c];
                            }
                            rhs[i] -= f * rhs[l];
                        }
                    }
                    basis[l] = k;
                    in_basis[k] = true;
                    at_upper[k] = false;
                }
            }
        }
        debug_assert!(false, "phase-1 simplex exceeded its iteration cap");
        None
    }
}
