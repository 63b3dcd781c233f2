//! Weighted multinomial-logistic objectives for the regressed transitions.
//!
//! Coefficients are packed per free column as `[delta_c, gamma_c...]`, the
//! same layout as [`LogisticTransitions::row_coefficients`]. The last column
//! is the reference and carries no parameters.
//!
//! [`LogisticTransitions::row_coefficients`]: crate::model::LogisticTransitions::row_coefficients

use alloc::vec;
use alloc::vec::Vec;

use crate::inference::Posterior;
use crate::math::{exp, log_softmax_pinned};
use crate::model::PanelDataset;
use crate::{Error, Result};

/// A weighted multinomial-logistic log-likelihood over observations with
/// covariates `w_n` and soft outcome weights `W_nk`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    k: usize,
    d: usize,
    features: Vec<f64>,
    weights: Vec<f64>,
    ridge: f64,
}

impl LogisticObjective {
    /// Builds an objective directly. `features` is `N x d`, `weights` is
    /// `N x K`; observations with zero total weight are dropped.
    pub fn new(k: usize, d: usize, features: Vec<f64>, weights: Vec<f64>, ridge: f64) -> Result<Self> {
        if k == 0 || !features.len().is_multiple_of(d.max(1)) {
            return Err(Error::InvalidParameter("malformed logistic objective".into()));
        }
        let n = features.len().checked_div(d).unwrap_or(weights.len() / k);
        if weights.len() != n * k || (d == 0 && !features.is_empty()) {
            return Err(Error::DimensionMismatch {
                what: "logistic weights",
                expected: n * k,
                found: weights.len(),
            });
        }
        if !(ridge >= 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("ridge must be nonnegative, got {ridge}")));
        }
        let mut obj = LogisticObjective {
            k,
            d,
            features: Vec::with_capacity(features.len()),
            weights: Vec::with_capacity(weights.len()),
            ridge,
        };
        for i in 0..n {
            let wrow = &weights[i * k..(i + 1) * k];
            if wrow.iter().all(|&v| v == 0.0) {
                continue;
            }
            obj.weights.extend_from_slice(wrow);
            obj.features.extend_from_slice(&features[i * d..(i + 1) * d]);
        }
        Ok(obj)
    }

    /// Initial-cluster objective: one observation per object at `w_i1`,
    /// weighted by `P(Z_i1 = k | X_i)`.
    pub fn initial(posts: &[Posterior], ds: &PanelDataset, ridge: f64) -> Result<Self> {
        let (k, d) = (k_of(posts)?, ds.d());
        let mut features = Vec::with_capacity(ds.n() * d);
        let mut weights = Vec::with_capacity(ds.n() * k);
        for (series, post) in ds.objects().iter().zip(posts) {
            features.extend_from_slice(series.w(0).ok_or(Error::MissingCovariates)?);
            weights.extend_from_slice(post.marginal(0));
        }
        Self::new(k, d, features, weights, ridge)
    }

    /// Transition-out-of-`h` objective: one observation per step `t >= 2` at
    /// `w_it`, weighted by `P(Z_{t-1} = h, Z_t = k | X_i)`.
    pub fn transition(h: usize, posts: &[Posterior], ds: &PanelDataset, ridge: f64) -> Result<Self> {
        let (k, d) = (k_of(posts)?, ds.d());
        let mut features = Vec::new();
        let mut weights = Vec::new();
        for (series, post) in ds.objects().iter().zip(posts) {
            for s in 0..series.len().saturating_sub(1) {
                let m = post.marginal(s)[h];
                if m == 0.0 {
                    continue;
                }
                features.extend_from_slice(series.w(s + 1).ok_or(Error::MissingCovariates)?);
                weights.extend(post.conditional(s, h).iter().map(|c| m * c));
            }
        }
        Self::new(k, d, features, weights, ridge)
    }

    /// Number of free coefficients, `(K - 1)(1 + d)`.
    pub fn dim(&self) -> usize {
        (self.k - 1) * (1 + self.d)
    }

    pub fn observations(&self) -> usize {
        self.weights.len() / self.k
    }

    /// Objective value and gradient at `coeffs`.
    pub fn value_and_gradient(&self, coeffs: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(coeffs.len(), self.dim());
        let (k, d) = (self.k, self.d);
        let stride = 1 + d;
        let mut value = 0.0;
        let mut grad = vec![0.0; coeffs.len()];
        let mut eta = vec![0.0; k - 1];
        let mut logp = vec![0.0; k];
        for n in 0..self.observations() {
            let w = &self.features[n * d..(n + 1) * d];
            let wt = &self.weights[n * k..(n + 1) * k];
            for (c, e) in eta.iter_mut().enumerate() {
                let b = &coeffs[c * stride..(c + 1) * stride];
                *e = b[0] + b[1..].iter().zip(w).map(|(g, x)| g * x).sum::<f64>();
            }
            log_softmax_pinned(&eta, &mut logp);
            let total: f64 = wt.iter().sum();
            for c in 0..k {
                if wt[c] != 0.0 {
                    value += wt[c] * logp[c];
                }
            }
            for c in 0..k - 1 {
                let r = wt[c] - total * exp(logp[c]);
                let g = &mut grad[c * stride..(c + 1) * stride];
                g[0] += r;
                for (gj, x) in g[1..].iter_mut().zip(w) {
                    *gj += r * x;
                }
            }
        }
        if self.ridge > 0.0 {
            for (g, b) in grad.iter_mut().zip(coeffs) {
                value -= self.ridge * b * b;
                *g -= 2.0 * self.ridge * b;
            }
        }
        (value, grad)
    }
}

fn k_of(posts: &[Posterior]) -> Result<usize> {
    posts
        .first()
        .map(Posterior::k)
        .ok_or_else(|| Error::InvalidDataset("no posteriors".into()))
}

/// Initial-cluster objective value and gradient at `coeffs`.
pub fn logistic_objective_initial(coeffs: &[f64], posts: &[Posterior], ds: &PanelDataset, ridge: f64) -> Result<(f64, Vec<f64>)> {
    let obj = LogisticObjective::initial(posts, ds, ridge)?;
    check_dim(&obj, coeffs)?;
    Ok(obj.value_and_gradient(coeffs))
}

/// Transition-out-of-`h` objective value and gradient at `coeffs`.
pub fn logistic_objective_transition(
    h: usize,
    coeffs: &[f64],
    posts: &[Posterior],
    ds: &PanelDataset,
    ridge: f64,
) -> Result<(f64, Vec<f64>)> {
    let obj = LogisticObjective::transition(h, posts, ds, ridge)?;
    check_dim(&obj, coeffs)?;
    Ok(obj.value_and_gradient(coeffs))
}

fn check_dim(obj: &LogisticObjective, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            what: "logistic coefficients",
            expected: obj.dim(),
            found: coeffs.len(),
        });
    }
    Ok(())
}
