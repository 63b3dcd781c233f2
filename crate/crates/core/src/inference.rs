//! E-step quantities: the backward `q` recursion, conditional transition
//! posteriors and smoothed marginals, plus enumeration oracles.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, log_sum_exp, normalize_log};
use crate::model::{complete_data_log_density, eval_beta_row, for_each_path, ModelParams, ObjectSeries, SeriesTerms};
use crate::{Error, Result};

/// Posterior label distributions for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    k: usize,
    len: usize,
    marginals: Vec<f64>,
    conditionals: Vec<f64>,
}

impl Posterior {
    /// Assembles a posterior from raw row-major blocks: `len x k` marginals
    /// and `(len - 1) x k x k` conditionals.
    pub fn from_parts(k: usize, len: usize, marginals: Vec<f64>, conditionals: Vec<f64>) -> Result<Self> {
        if marginals.len() != k * len {
            return Err(Error::DimensionMismatch {
                what: "posterior marginals",
                expected: k * len,
                found: marginals.len(),
            });
        }
        let nc = len.saturating_sub(1) * k * k;
        if conditionals.len() != nc {
            return Err(Error::DimensionMismatch {
                what: "posterior conditionals",
                expected: nc,
                found: conditionals.len(),
            });
        }
        Ok(Posterior {
            k,
            len,
            marginals,
            conditionals,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `P(Z_t = . | X)`.
    #[inline]
    pub fn marginal(&self, t: usize) -> &[f64] {
        &self.marginals[t * self.k..(t + 1) * self.k]
    }

    /// `P(Z_{s+1} = . | Z_s = h, X)` for `s` in `0..len - 1`.
    #[inline]
    pub fn conditional(&self, s: usize, h: usize) -> &[f64] {
        let start = (s * self.k + h) * self.k;
        &self.conditionals[start..start + self.k]
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn conditionals(&self) -> &[f64] {
        &self.conditionals
    }

    /// Largest absolute difference in marginals and conditionals.
    pub fn max_abs_diff(&self, other: &Posterior) -> f64 {
        assert_eq!((self.k, self.len), (other.k, other.len));
        self.marginals
            .iter()
            .zip(&other.marginals)
            .chain(self.conditionals.iter().zip(&other.conditionals))
            .map(|(a, b)| crate::math::abs(a - b))
            .fold(0.0, f64::max)
    }
}

/// Backward recursion output, kept in the log domain with per-step rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardQ {
    k: usize,
    len: usize,
    /// `T x K`: rescaled `ln sum_l q(Z_{t+1} = l | Z_t = k)`; zero at `T - 1`.
    log_row_sums: Vec<f64>,
    /// `(T-1) x K x K`: `ln q(Z_{s+1} = k | Z_s = h)` (rescaled).
    log_q: Vec<f64>,
    /// Constant removed from `log_row_sums` at each step `0..T-1`.
    log_scales: Vec<f64>,
}

impl BackwardQ {
    pub fn log_row_sums(&self, t: usize) -> &[f64] {
        &self.log_row_sums[t * self.k..(t + 1) * self.k]
    }

    pub fn log_q(&self, s: usize, h: usize) -> &[f64] {
        let start = (s * self.k + h) * self.k;
        &self.log_q[start..start + self.k]
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    /// Normalized `q` rows, i.e. `P(Z_{s+1} = . | Z_s = h, X)`.
    pub fn conditional(&self, s: usize, h: usize) -> Vec<f64> {
        let mut row = self.log_q(s, h).to_vec();
        normalize_log(&mut row);
        row
    }
}

/// Backward `q` recursion: `q(Z_T | Z_{T-1}) = beta * emission` at the last
/// step and, moving backwards, each `q` multiplied by the summed `q` mass of
/// the step after it. Cost is `O(T K^2)`.
pub fn backward_q(series: &ObjectSeries, params: &ModelParams) -> Result<BackwardQ> {
    let terms = SeriesTerms::new(series, params)?;
    Ok(backward_from_terms(&terms))
}

pub(crate) fn backward_from_terms(terms: &SeriesTerms) -> BackwardQ {
    let (k, len) = (terms.k, terms.len);
    let slots = len.saturating_sub(1);
    let mut log_row_sums = vec![0.0; len * k];
    let mut log_q = vec![0.0; slots * k * k];
    let mut log_scales = vec![0.0; slots];
    for s in (0..slots).rev() {
        let emit = terms.emit(s + 1);
        for h in 0..k {
            let trans = terms.trans(s, h);
            let base = (s * k + h) * k;
            for c in 0..k {
                log_q[base + c] = trans[c] + emit[c] + log_row_sums[(s + 1) * k + c];
            }
            log_row_sums[s * k + h] = log_sum_exp(&log_q[base..base + k]);
        }
        let row = &mut log_row_sums[s * k..(s + 1) * k];
        let scale = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if scale.is_finite() {
            row.iter_mut().for_each(|v| *v -= scale);
            log_scales[s] = scale;
        }
    }
    BackwardQ {
        k,
        len,
        log_row_sums,
        log_q,
        log_scales,
    }
}

/// Smoothed marginals and conditional transition posteriors.
pub fn posterior(series: &ObjectSeries, params: &ModelParams) -> Result<Posterior> {
    posterior_with_loglik(series, params).map(|(p, _)| p)
}

/// Posterior together with the marginal log-likelihood recovered from the
/// backward scaling constants.
pub fn posterior_with_loglik(series: &ObjectSeries, params: &ModelParams) -> Result<(Posterior, f64)> {
    let terms = SeriesTerms::new(series, params)?;
    posterior_from_terms(&terms)
}

pub(crate) fn posterior_from_terms(terms: &SeriesTerms) -> Result<(Posterior, f64)> {
    let (k, len) = (terms.k, terms.len);
    let bq = backward_from_terms(terms);
    let mut marginals = vec![0.0; len * k];
    let mut first: Vec<f64> = (0..k)
        .map(|c| terms.log_init[c] + terms.emit(0)[c] + bq.log_row_sums(0)[c])
        .collect();
    let lse = normalize_log(&mut first);
    if !lse.is_finite() {
        return Err(Error::NumericalUnderflow { t: 0 });
    }
    let loglik = lse + bq.log_scales.iter().sum::<f64>();
    marginals[..k].copy_from_slice(&first);

    let slots = len.saturating_sub(1);
    let mut conditionals = vec![0.0; slots * k * k];
    for s in 0..slots {
        for h in 0..k {
            let base = (s * k + h) * k;
            let row = &mut conditionals[base..base + k];
            row.copy_from_slice(bq.log_q(s, h));
            let z = normalize_log(row);
            if !z.is_finite() {
                // unreachable state; any distribution is consistent
                row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
            }
        }
        for c in 0..k {
            let mut acc = 0.0;
            for h in 0..k {
                acc += marginals[s * k + h] * conditionals[(s * k + h) * k + c];
            }
            marginals[(s + 1) * k + c] = acc;
        }
    }
    Ok((
        Posterior {
            k,
            len,
            marginals,
            conditionals,
        },
        loglik,
    ))
}

/// Exact posteriors by normalizing the complete-data density over every
/// label path. Only for small oracle instances.
pub fn brute_force_posterior(series: &ObjectSeries, params: &ModelParams) -> Result<Posterior> {
    params.check_series(series)?;
    let (k, len) = (params.k(), series.len());
    let mut paths: Vec<(Vec<usize>, f64)> = Vec::new();
    for_each_path(k, len, |path| {
        paths.push((path.to_vec(), complete_data_log_density(series, params, path)?));
        Ok(())
    })?;
    let max = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut marginals = vec![0.0; len * k];
    let slots = len.saturating_sub(1);
    let mut joint = vec![0.0; slots * k * k];
    let mut total = 0.0;
    for (path, lp) in &paths {
        let w = exp(lp - max);
        total += w;
        for t in 0..len {
            marginals[t * k + path[t]] += w;
        }
        for s in 0..slots {
            joint[(s * k + path[s]) * k + path[s + 1]] += w;
        }
    }
    let mut conditionals = vec![0.0; slots * k * k];
    for s in 0..slots {
        for h in 0..k {
            let occ: f64 = (0..k).map(|c| joint[(s * k + h) * k + c]).sum();
            for c in 0..k {
                conditionals[(s * k + h) * k + c] = if occ > 0.0 {
                    joint[(s * k + h) * k + c] / occ
                } else {
                    1.0 / k as f64
                };
            }
        }
    }
    marginals.iter_mut().for_each(|v| *v /= total);
    Ok(Posterior {
        k,
        len,
        marginals,
        conditionals,
    })
}

/// Checks that, given the previous label, the next label is independent of
/// the observations so far: `P(Z_t | Z_{t-1}, X_1..X_{t-1})` is computed by
/// enumeration over all label paths for `prefix` (observations `1..t-1`)
/// and compared against the model's transition row. Returns the largest
/// absolute deviation. `w_next` are the covariates at time `t` (regressed
/// models only).
pub fn transition_given_history_deviation(
    params: &ModelParams,
    prefix: &ObjectSeries,
    w_next: Option<&[f64]>,
) -> Result<f64> {
    params.check_series(prefix)?;
    let k = params.k();
    let len = prefix.len();
    let tm = &params.transitions;
    let rows: Vec<Vec<f64>> = (0..k).map(|h| eval_beta_row(tm, h, w_next)).collect::<Result<_>>()?;
    // joint[h][c] = sum over paths of pi(X_1..X_{t-1}, Z_{t-1} = h, Z_t = c)
    let mut log_terms: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k]; k];
    for_each_path(k, len, |path| {
        let lp = complete_data_log_density(prefix, params, path)?;
        let h = path[len - 1];
        for c in 0..k {
            log_terms[h][c].push(lp + ln(rows[h][c]));
        }
        Ok(())
    })?;
    let mut worst: f64 = 0.0;
    for h in 0..k {
        let joint: Vec<f64> = log_terms[h].iter().map(|v| log_sum_exp(v)).collect();
        let occ = log_sum_exp(&joint);
        for c in 0..k {
            let cond = exp(joint[c] - occ);
            worst = worst.max(crate::math::abs(cond - rows[h][c]));
        }
    }
    Ok(worst)
}

/// Per-time argmax of the marginals, lowest index on ties.
pub fn hard_labels(post: &Posterior) -> Vec<usize> {
    (0..post.len)
        .map(|t| {
            let row = post.marginal(t);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
