//! Multinomial logit over categorical windows, fit by Newton-Raphson with
//! step halving on the exact log-likelihood.
//!
//! Outcome category 0 and window 0 are the reference levels. The linear
//! predictor of outcome `c ≥ 1` in window `w` is `β_{c,0} + β_{c,w}`
//! (window dummies as sole predictors), so `β_{c,w}` is the log-odds of
//! outcome `c` vs the reference outcome in window `w` relative to the
//! reference window, and the odds ratio is its exponential.

use super::InferenceError;
use crate::stats::mannwhitney::standard_normal_sf;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_STEP_HALVINGS: usize = 40;

#[derive(Debug, Clone, Serialize)]
pub struct MLMResult {
    /// Names of the non-reference outcome categories, index 1.. of inputs.
    pub outcome_names: Vec<String>,
    /// Names of all window levels, index 0 = reference.
    pub window_names: Vec<String>,
    /// Coefficients: row = non-reference outcome, column 0 = intercept,
    /// column w ≥ 1 = window-w dummy.
    pub coefficients: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub p_values: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub n_obs: usize,
}

impl MLMResult {
    /// Log-odds of `outcome` (1-based among non-reference categories) vs the
    /// reference outcome, in window `window` (≥ 1) vs the reference window.
    pub fn log_odds(&self, outcome: usize, window: usize) -> f64 {
        self.coefficients[outcome - 1][window]
    }

    pub fn odds_ratio(&self, outcome: usize, window: usize) -> f64 {
        self.log_odds(outcome, window).exp()
    }
}

/// Fits the multinomial logit on `(outcome, window)` rows.
///
/// Errors with the offending cell name when any outcome category is empty in
/// some window (complete separation of the saturated fit).
#[allow(clippy::needless_range_loop)] // index style mirrors the (c, w) subscripts
pub fn multinomial_logit(
    rows: &[(usize, usize)],
    outcome_names: &[&str],
    window_names: &[&str],
) -> Result<MLMResult, InferenceError> {
    let n_outcomes = outcome_names.len();
    let n_windows = window_names.len();
    if n_outcomes < 2 || n_windows < 2 {
        return Err(InferenceError::DimensionMismatch {
            detail: format!("{n_outcomes} outcomes × {n_windows} windows"),
        });
    }
    // Cell counts; all cells must be populated.
    let mut counts = vec![vec![0.0_f64; n_windows]; n_outcomes];
    for &(outcome, window) in rows {
        counts[outcome][window] += 1.0;
    }
    for (outcome, row) in outcome_names.iter().zip(&counts) {
        for (window, &cnt) in window_names.iter().zip(row) {
            if cnt == 0.0 {
                return Err(InferenceError::EmptyCell {
                    outcome: outcome.to_string(),
                    window: window.to_string(),
                });
            }
        }
    }
    let window_totals: Vec<f64> = (0..n_windows)
        .map(|w| (0..n_outcomes).map(|c| counts[c][w]).sum())
        .collect();

    // Parameters θ[(c−1)·n_windows + j]: intercept (j = 0) and window
    // dummies for each non-reference outcome c.
    let n_free = n_outcomes - 1;
    let dim = n_free * n_windows;
    let mut theta = DVector::<f64>::zeros(dim);
    let eta = |theta: &DVector<f64>, c: usize, w: usize| -> f64 {
        let base = (c - 1) * n_windows;
        theta[base] + if w > 0 { theta[base + w] } else { 0.0 }
    };
    let log_likelihood = |theta: &DVector<f64>| -> f64 {
        let mut ll = 0.0;
        for w in 0..n_windows {
            let mut denom = 1.0;
            for c in 1..n_outcomes {
                denom += eta(theta, c, w).exp();
            }
            ll -= window_totals[w] * denom.ln();
            for c in 1..n_outcomes {
                ll += counts[c][w] * eta(theta, c, w);
            }
        }
        ll
    };

    let mut ll = log_likelihood(&theta);
    let mut iterations = 0;
    loop {
        // Fitted probabilities per window.
        let mut probs = vec![vec![0.0; n_windows]; n_outcomes];
        for w in 0..n_windows {
            let mut denom = 1.0;
            let mut e = vec![0.0; n_outcomes];
            for c in 1..n_outcomes {
                e[c] = eta(&theta, c, w).exp();
                denom += e[c];
            }
            probs[0][w] = 1.0 / denom;
            for c in 1..n_outcomes {
                probs[c][w] = e[c] / denom;
            }
        }

        // Gradient and Hessian over the window-aggregated design.
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for w in 0..n_windows {
            // Design vector of window w: x[0] = 1, x[w] = 1 for w ≥ 1.
            let idx: &[usize] = if w == 0 { &[0] } else { &[0, w][..] };
            for c in 1..n_outcomes {
                let resid = counts[c][w] - window_totals[w] * probs[c][w];
                for &j in idx {
                    grad[(c - 1) * n_windows + j] += resid;
                }
                for d in 1..n_outcomes {
                    let fisher = window_totals[w]
                        * probs[c][w]
                        * (if c == d { 1.0 - probs[d][w] } else { -probs[d][w] });
                    for &j in idx {
                        for &l in idx {
                            hess[((c - 1) * n_windows + j, (d - 1) * n_windows + l)] -= fisher;
                        }
                    }
                }
            }
        }

        if grad.amax() < GRADIENT_TOLERANCE {
            // Converged; covariance from the observed information.
            let info = -hess;
            let cov = info
                .try_inverse()
                .ok_or(InferenceError::SingularCovariance)?;
            let mut coefficients = vec![vec![0.0; n_windows]; n_free];
            let mut std_errors = vec![vec![0.0; n_windows]; n_free];
            let mut p_values = vec![vec![0.0; n_windows]; n_free];
            for c in 0..n_free {
                for j in 0..n_windows {
                    let idx = c * n_windows + j;
                    coefficients[c][j] = theta[idx];
                    let se = cov[(idx, idx)].sqrt();
                    std_errors[c][j] = se;
                    let z = theta[idx] / se;
                    p_values[c][j] = (2.0 * standard_normal_sf(z.abs())).min(1.0);
                }
            }
            return Ok(MLMResult {
                outcome_names: outcome_names[1..].iter().map(|s| s.to_string()).collect(),
                window_names: window_names.iter().map(|s| s.to_string()).collect(),
                coefficients,
                std_errors,
                p_values,
                log_likelihood: ll,
                iterations,
                n_obs: rows.len(),
            });
        }
        if iterations >= MAX_ITERATIONS {
            return Err(InferenceError::NoConvergence(MAX_ITERATIONS));
        }
        iterations += 1;

        let step = (-hess)
            .try_inverse()
            .ok_or(InferenceError::SingularCovariance)?
            * &grad;
        // Step halving keeps the log-likelihood non-decreasing.
        let mut scale = 1.0;
        let mut halvings = 0;
        loop {
            let candidate = &theta + scale * &step;
            let cand_ll = log_likelihood(&candidate);
            if cand_ll >= ll - 1e-12 {
                theta = candidate;
                ll = cand_ll;
                break;
            }
            halvings += 1;
            if halvings > MAX_STEP_HALVINGS {
                return Err(InferenceError::NoConvergence(iterations));
            }
            scale *= 0.5;
        }
    }
}
