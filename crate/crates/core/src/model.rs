//! Data containers, model parameters, emission densities and the forward
//! recursion for the marginal likelihood.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{mvn_logpdf, SpdMatrix};
use crate::math::{abs, exp, log_softmax_pinned, log_sum_exp, ln, normalize_log};
use crate::{Error, Result};

/// Oracle guard for path enumeration.
pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// One object's time series: a `T x p` response block and optionally a
/// `T x d` covariate block, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSeries {
    id: String,
    p: usize,
    d: usize,
    x: Vec<f64>,
    w: Option<Vec<f64>>,
}

impl ObjectSeries {
    pub fn new(id: impl Into<String>, p: usize, x: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if p == 0 || x.is_empty() || !x.len().is_multiple_of(p) {
            return Err(Error::InvalidDataset(format!(
                "object {id}: {} response values do not form rows of width {p}",
                x.len()
            )));
        }
        Ok(ObjectSeries { id, p, d: 0, x, w: None })
    }

    /// Attaches a `T x d` covariate block.
    pub fn with_covariates(mut self, d: usize, w: Vec<f64>) -> Result<Self> {
        if d == 0 || w.len() != d * self.len() {
            return Err(Error::InvalidDataset(format!(
                "object {}: covariates need {} rows of width {d}, got {} values",
                self.id,
                self.len(),
                w.len()
            )));
        }
        self.d = d;
        self.w = Some(w);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of time points `T_i`.
    pub fn len(&self) -> usize {
        self.x.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn x(&self, t: usize) -> &[f64] {
        &self.x[t * self.p..(t + 1) * self.p]
    }

    #[inline]
    pub fn w(&self, t: usize) -> Option<&[f64]> {
        self.w.as_ref().map(|w| &w[t * self.d..(t + 1) * self.d])
    }

    pub fn responses(&self) -> &[f64] {
        &self.x
    }

    pub fn covariates(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    /// The first `len` time points.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate a series of length {} to {len}",
                self.len()
            )));
        }
        Ok(ObjectSeries {
            id: self.id.clone(),
            p: self.p,
            d: self.d,
            x: self.x[..len * self.p].to_vec(),
            w: self.w.as_ref().map(|w| w[..len * self.d].to_vec()),
        })
    }
}

/// A panel of independent objects sharing `p` and `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    objects: Vec<ObjectSeries>,
    p: usize,
    d: usize,
}

impl PanelDataset {
    pub fn new(objects: Vec<ObjectSeries>) -> Result<Self> {
        let first = objects
            .first()
            .ok_or_else(|| Error::InvalidDataset("dataset has no objects".into()))?;
        let (p, d) = (first.p, first.d);
        for o in &objects {
            if o.p != p {
                return Err(Error::InvalidDataset(format!(
                    "object {} has response dimension {}, expected {p}",
                    o.id, o.p
                )));
            }
            if o.d != d {
                return Err(Error::InvalidDataset(format!(
                    "object {} has covariate dimension {}, expected {d}",
                    o.id, o.d
                )));
            }
        }
        Ok(PanelDataset { objects, p, d })
    }

    pub fn objects(&self) -> &[ObjectSeries] {
        &self.objects
    }

    pub fn n(&self) -> usize {
        self.objects.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `sum_i T_i`.
    pub fn total_observations(&self) -> usize {
        self.objects.iter().map(ObjectSeries::len).sum()
    }

    /// All `(i, t)` response rows, object-major and time-minor.
    pub fn pooled_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.objects.iter().flat_map(|o| (0..o.len()).map(move |t| o.x(t)))
    }
}

/// Cluster means, covariances and the blend weight `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<SpdMatrix>,
    pub lambda: f64,
}

impl ClusterParams {
    pub fn new(mu: Vec<Vec<f64>>, sigma: Vec<SpdMatrix>, lambda: f64) -> Result<Self> {
        let cp = ClusterParams { mu, sigma, lambda };
        cp.validate()?;
        Ok(cp)
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn p(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::InvalidParameter("need at least one cluster".into()));
        }
        if self.sigma.len() != k {
            return Err(Error::DimensionMismatch {
                what: "covariance count",
                expected: k,
                found: self.sigma.len(),
            });
        }
        let p = self.p();
        for (m, s) in self.mu.iter().zip(&self.sigma) {
            if m.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "cluster mean",
                    expected: p,
                    found: m.len(),
                });
            }
            if s.dim() != p {
                return Err(Error::DimensionMismatch {
                    what: "cluster covariance",
                    expected: p,
                    found: s.dim(),
                });
            }
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidParameter(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Multinomial-logistic coefficients for the initial row (`row 0`) and the
/// transition rows out of each cluster (`row h + 1`). Column `K - 1` is the
/// reference category and stays exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTransitions {
    k: usize,
    d: usize,
    delta: Vec<f64>,
    gamma: Vec<f64>,
}

impl LogisticTransitions {
    pub fn zeros(k: usize, d: usize) -> Self {
        LogisticTransitions {
            k,
            d,
            delta: vec![0.0; (k + 1) * k],
            gamma: vec![0.0; (k + 1) * k * d],
        }
    }

    /// `delta` is `(K+1) x K`, `gamma` is `(K+1) x K x d`.
    pub fn new(delta: Vec<Vec<f64>>, gamma: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let rows = delta.len();
        if rows < 2 {
            return Err(Error::InvalidParameter("delta needs K + 1 rows".into()));
        }
        let k = rows - 1;
        let d = gamma.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut out = LogisticTransitions::zeros(k, d);
        if gamma.len() != rows {
            return Err(Error::DimensionMismatch {
                what: "gamma rows",
                expected: rows,
                found: gamma.len(),
            });
        }
        for (row, (drow, grow)) in delta.iter().zip(&gamma).enumerate() {
            if drow.len() != k || grow.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "logistic row width",
                    expected: k,
                    found: drow.len().min(grow.len()),
                });
            }
            if drow[k - 1] != 0.0 || grow[k - 1].iter().any(|&g| g != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "reference column of logistic row {row} must be zero"
                )));
            }
            for c in 0..k {
                out.delta[row * k + c] = drow[c];
                if grow[c].len() != d {
                    return Err(Error::DimensionMismatch {
                        what: "gamma vector",
                        expected: d,
                        found: grow[c].len(),
                    });
                }
                out.gamma_mut(row, c).copy_from_slice(&grow[c]);
            }
        }
        Ok(out)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn delta(&self, row: usize, c: usize) -> f64 {
        self.delta[row * self.k + c]
    }

    pub fn set_delta(&mut self, row: usize, c: usize, v: f64) {
        assert!(c + 1 < self.k, "reference column is pinned");
        self.delta[row * self.k + c] = v;
    }

    pub fn gamma(&self, row: usize, c: usize) -> &[f64] {
        let start = (row * self.k + c) * self.d;
        &self.gamma[start..start + self.d]
    }

    fn gamma_mut(&mut self, row: usize, c: usize) -> &mut [f64] {
        let start = (row * self.k + c) * self.d;
        &mut self.gamma[start..start + self.d]
    }

    pub fn set_gamma(&mut self, row: usize, c: usize, g: &[f64]) {
        assert!(c + 1 < self.k, "reference column is pinned");
        self.gamma_mut(row, c).copy_from_slice(g);
    }

    /// Number of free coefficients in one row: `(K - 1) * (1 + d)`.
    pub fn row_len(&self) -> usize {
        (self.k - 1) * (1 + self.d)
    }

    /// Free coefficients of a row packed as `[delta_c, gamma_c...]` for each
    /// non-reference column `c`.
    pub fn row_coefficients(&self, row: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.row_len());
        for c in 0..self.k - 1 {
            out.push(self.delta(row, c));
            out.extend_from_slice(self.gamma(row, c));
        }
        out
    }

    pub fn set_row_coefficients(&mut self, row: usize, coeffs: &[f64]) {
        assert_eq!(coeffs.len(), self.row_len());
        let stride = 1 + self.d;
        for c in 0..self.k - 1 {
            let chunk = &coeffs[c * stride..(c + 1) * stride];
            self.delta[row * self.k + c] = chunk[0];
            let d = self.d;
            self.gamma_mut(row, c)[..d].copy_from_slice(&chunk[1..]);
        }
    }

    /// Log-probabilities of logistic row `row` at covariates `w`.
    pub fn row_log_probs(&self, row: usize, w: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut logits = vec![0.0; k - 1];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = self.delta(row, c) + self.gamma(row, c).iter().zip(w).map(|(g, x)| g * x).sum::<f64>();
        }
        let mut out = vec![0.0; k];
        log_softmax_pinned(&logits, &mut out);
        out
    }

    /// Whether any coefficient is nonzero in a gamma vector.
    pub fn has_covariate_effects(&self) -> bool {
        self.gamma.iter().any(|&g| g != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionModel {
    Fixed { alpha: Vec<f64>, beta: Vec<Vec<f64>> },
    Regressed(LogisticTransitions),
}

impl TransitionModel {
    pub fn k(&self) -> usize {
        match self {
            TransitionModel::Fixed { alpha, .. } => alpha.len(),
            TransitionModel::Regressed(l) => l.k,
        }
    }

    pub fn is_regressed(&self) -> bool {
        matches!(self, TransitionModel::Regressed(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransitionModel::Fixed { alpha, beta } => {
                let k = alpha.len();
                check_simplex(alpha, "alpha")?;
                if beta.len() != k {
                    return Err(Error::DimensionMismatch {
                        what: "beta rows",
                        expected: k,
                        found: beta.len(),
                    });
                }
                for row in beta {
                    if row.len() != k {
                        return Err(Error::DimensionMismatch {
                            what: "beta row",
                            expected: k,
                            found: row.len(),
                        });
                    }
                    check_simplex(row, "beta row")?;
                }
                Ok(())
            }
            TransitionModel::Regressed(l) => {
                for row in 0..=l.k {
                    if l.delta(row, l.k - 1) != 0.0 || l.gamma(row, l.k - 1).iter().any(|&g| g != 0.0) {
                        return Err(Error::InvalidParameter("pinned logistic column is not zero".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Log initial probabilities; regressed models need `w`.
    pub fn initial_log_probs(&self, w: Option<&[f64]>) -> Result<Vec<f64>> {
        match self {
            TransitionModel::Fixed { alpha, .. } => Ok(alpha.iter().map(|&a| ln(a)).collect()),
            TransitionModel::Regressed(l) => Ok(l.row_log_probs(0, regressed_covariates(l, w)?)),
        }
    }

    /// Log transition probabilities out of cluster `h`.
    pub fn transition_log_probs(&self, h: usize, w: Option<&[f64]>) -> Result<Vec<f64>> {
        match self {
            TransitionModel::Fixed { beta, .. } => Ok(beta[h].iter().map(|&b| ln(b)).collect()),
            TransitionModel::Regressed(l) => Ok(l.row_log_probs(h + 1, regressed_covariates(l, w)?)),
        }
    }
}

fn regressed_covariates<'a>(l: &LogisticTransitions, w: Option<&'a [f64]>) -> Result<&'a [f64]> {
    let w = w.ok_or(Error::MissingCovariates)?;
    if w.len() != l.d {
        return Err(Error::DimensionMismatch {
            what: "covariate vector",
            expected: l.d,
            found: w.len(),
        });
    }
    Ok(w)
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    let s: f64 = v.iter().sum();
    if v.iter().any(|&a| !(a >= 0.0)) || abs(s - 1.0) > 1e-9 {
        return Err(Error::InvalidParameter(format!("{what} is not a probability vector: {v:?}")));
    }
    Ok(())
}

/// Complete parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub clusters: ClusterParams,
    pub transitions: TransitionModel,
}

impl ModelParams {
    pub fn new(clusters: ClusterParams, transitions: TransitionModel) -> Result<Self> {
        let m = ModelParams { clusters, transitions };
        m.validate()?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.clusters.k()
    }

    pub fn p(&self) -> usize {
        self.clusters.p()
    }

    pub fn validate(&self) -> Result<()> {
        self.clusters.validate()?;
        self.transitions.validate()?;
        if self.transitions.k() != self.k() {
            return Err(Error::DimensionMismatch {
                what: "transition model cluster count",
                expected: self.k(),
                found: self.transitions.k(),
            });
        }
        Ok(())
    }

    /// Checks that `series` can be evaluated under these parameters.
    pub fn check_series(&self, series: &ObjectSeries) -> Result<()> {
        if series.p() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "response dimension",
                expected: self.p(),
                found: series.p(),
            });
        }
        if let TransitionModel::Regressed(l) = &self.transitions {
            if series.covariates().is_none() {
                return Err(Error::MissingCovariates);
            }
            if series.d() != l.d() {
                return Err(Error::DimensionMismatch {
                    what: "covariate dimension",
                    expected: l.d(),
                    found: series.d(),
                });
            }
        }
        Ok(())
    }

    /// Relabels clusters: new cluster `j` is old cluster `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> ModelParams {
        let k = self.k();
        assert_eq!(perm.len(), k);
        let clusters = ClusterParams {
            mu: perm.iter().map(|&o| self.clusters.mu[o].clone()).collect(),
            sigma: perm.iter().map(|&o| self.clusters.sigma[o].clone()).collect(),
            lambda: self.clusters.lambda,
        };
        let transitions = match &self.transitions {
            TransitionModel::Fixed { alpha, beta } => TransitionModel::Fixed {
                alpha: perm.iter().map(|&o| alpha[o]).collect(),
                beta: perm
                    .iter()
                    .map(|&oh| perm.iter().map(|&ok| beta[oh][ok]).collect())
                    .collect(),
            },
            TransitionModel::Regressed(l) => {
                // Re-express every row against the new reference column
                // perm[K-1]: subtract its logit from all columns.
                let mut out = LogisticTransitions::zeros(k, l.d);
                for new_row in 0..=k {
                    let old_row = if new_row == 0 { 0 } else { perm[new_row - 1] + 1 };
                    let ref_old = perm[k - 1];
                    let ref_delta = l.delta(old_row, ref_old);
                    let ref_gamma = l.gamma(old_row, ref_old).to_vec();
                    for (new_c, &old_c) in perm.iter().enumerate().take(k - 1) {
                        out.delta[new_row * k + new_c] = l.delta(old_row, old_c) - ref_delta;
                        let g: Vec<f64> = l.gamma(old_row, old_c).iter().zip(&ref_gamma).map(|(a, b)| a - b).collect();
                        out.gamma_mut(new_row, new_c).copy_from_slice(&g);
                    }
                }
                TransitionModel::Regressed(out)
            }
        };
        ModelParams { clusters, transitions }
    }
}

fn probs_from_logs(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(exp).collect()
}

/// Initial cluster probabilities, `alpha(w)` for regressed models.
pub fn eval_alpha(tm: &TransitionModel, w: Option<&[f64]>) -> Result<Vec<f64>> {
    match tm {
        TransitionModel::Fixed { alpha, .. } => Ok(alpha.clone()),
        TransitionModel::Regressed(_) => Ok(probs_from_logs(tm.initial_log_probs(w)?)),
    }
}

/// Row `h` of the transition matrix, `beta_h(w)` for regressed models.
pub fn eval_beta_row(tm: &TransitionModel, h: usize, w: Option<&[f64]>) -> Result<Vec<f64>> {
    if h >= tm.k() {
        return Err(Error::InvalidParameter(format!("cluster index {h} out of range")));
    }
    match tm {
        TransitionModel::Fixed { beta, .. } => Ok(beta[h].clone()),
        TransitionModel::Regressed(_) => Ok(probs_from_logs(tm.transition_log_probs(h, w)?)),
    }
}

/// `ln N(x1 | mu_k, Sigma_k)`.
pub fn emission_initial_log(x1: &[f64], k: usize, cp: &ClusterParams) -> Result<f64> {
    mvn_logpdf(x1, &cp.mu[k], &cp.sigma[k])
}

/// `ln N(xt | lambda mu_k + (1 - lambda) xprev, Sigma_k)`.
pub fn emission_transition_log(xt: &[f64], xprev: &[f64], k: usize, cp: &ClusterParams) -> Result<f64> {
    let lambda = cp.lambda;
    let mean: Vec<f64> = cp.mu[k].iter().zip(xprev).map(|(m, x)| lambda * m + (1.0 - lambda) * x).collect();
    mvn_logpdf(xt, &mean, &cp.sigma[k])
}

/// Per-series log emissions (`T x K`) and log transition probabilities.
pub(crate) struct SeriesTerms {
    pub k: usize,
    pub len: usize,
    pub log_emit: Vec<f64>,
    pub log_init: Vec<f64>,
    /// Slot `s` holds `ln P(Z_{s+1} = k | Z_s = h)` at `[s][h][k]`.
    pub log_trans: Vec<f64>,
}

impl SeriesTerms {
    pub fn new(series: &ObjectSeries, params: &ModelParams) -> Result<Self> {
        params.check_series(series)?;
        let k = params.k();
        let len = series.len();
        let cp = &params.clusters;
        let p = series.p();
        let mut log_emit = vec![0.0; len * k];
        let mut mean = vec![0.0; p];
        for t in 0..len {
            let xt = series.x(t);
            for c in 0..k {
                log_emit[t * k + c] = if t == 0 {
                    cp.sigma[c].log_density(xt, &cp.mu[c])
                } else {
                    let xprev = series.x(t - 1);
                    for j in 0..p {
                        mean[j] = cp.lambda * cp.mu[c][j] + (1.0 - cp.lambda) * xprev[j];
                    }
                    cp.sigma[c].log_density(xt, &mean)
                };
            }
        }
        let log_init = params.transitions.initial_log_probs(series.w(0))?;
        let mut log_trans = vec![0.0; len.saturating_sub(1) * k * k];
        match &params.transitions {
            TransitionModel::Fixed { beta, .. } => {
                for s in 0..len.saturating_sub(1) {
                    for h in 0..k {
                        for c in 0..k {
                            log_trans[(s * k + h) * k + c] = ln(beta[h][c]);
                        }
                    }
                }
            }
            TransitionModel::Regressed(_) => {
                for s in 0..len.saturating_sub(1) {
                    for h in 0..k {
                        let row = params.transitions.transition_log_probs(h, series.w(s + 1))?;
                        log_trans[(s * k + h) * k..(s * k + h + 1) * k].copy_from_slice(&row);
                    }
                }
            }
        }
        Ok(SeriesTerms {
            k,
            len,
            log_emit,
            log_init,
            log_trans,
        })
    }

    #[inline]
    pub fn emit(&self, t: usize) -> &[f64] {
        &self.log_emit[t * self.k..(t + 1) * self.k]
    }

    #[inline]
    pub fn trans(&self, s: usize, h: usize) -> &[f64] {
        let start = (s * self.k + h) * self.k;
        &self.log_trans[start..start + self.k]
    }
}

/// Forward-recursion output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub loglik: f64,
    /// `T x K` filtering distributions `P(Z_t | X_1..X_t)`, row-major.
    pub filtered: Vec<f64>,
    pub k: usize,
}

impl ForwardResult {
    pub fn filtered_at(&self, t: usize) -> &[f64] {
        &self.filtered[t * self.k..(t + 1) * self.k]
    }
}

/// Marginal log-likelihood of one series by the forward recursion.
///
/// The filtering distribution is normalized at every step and the log of the
/// normalizer accumulated, so the cost is `O(T K^2)`.
pub fn forward_filter(series: &ObjectSeries, params: &ModelParams) -> Result<ForwardResult> {
    let terms = SeriesTerms::new(series, params)?;
    forward_from_terms(&terms)
}

pub(crate) fn forward_from_terms(terms: &SeriesTerms) -> Result<ForwardResult> {
    let (k, len) = (terms.k, terms.len);
    let mut filtered = vec![0.0; len * k];
    let mut row: Vec<f64> = terms.log_init.iter().zip(terms.emit(0)).map(|(a, e)| a + e).collect();
    let mut loglik = normalize_log(&mut row);
    if !loglik.is_finite() {
        return Err(Error::NumericalUnderflow { t: 0 });
    }
    filtered[..k].copy_from_slice(&row);
    let mut next = vec![0.0; k];
    for t in 1..len {
        let prev = &filtered[(t - 1) * k..t * k];
        for c in 0..k {
            let mut pred = 0.0;
            for h in 0..k {
                pred += prev[h] * exp(terms.trans(t - 1, h)[c]);
            }
            next[c] = ln(pred) + terms.emit(t)[c];
        }
        let c_t = normalize_log(&mut next);
        if !c_t.is_finite() {
            return Err(Error::NumericalUnderflow { t });
        }
        loglik += c_t;
        filtered[t * k..(t + 1) * k].copy_from_slice(&next);
    }
    Ok(ForwardResult { loglik, filtered, k })
}

/// Iterates over all `K^T` label paths, calling `f` with each path.
pub(crate) fn for_each_path(k: usize, len: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let paths = libm::pow(k as f64, len as f64);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(Error::InstanceTooLarge { paths });
    }
    let mut path = vec![0usize; len];
    loop {
        f(&path)?;
        let mut i = len;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
        }
    }
}

/// `ln` of the complete-data density of one series along `path`, evaluated
/// term by term from the emission and probability functions.
pub(crate) fn complete_data_log_density(series: &ObjectSeries, params: &ModelParams, path: &[usize]) -> Result<f64> {
    let cp = &params.clusters;
    let tm = &params.transitions;
    let mut lp = ln(eval_alpha(tm, series.w(0))?[path[0]]) + emission_initial_log(series.x(0), path[0], cp)?;
    for t in 1..path.len() {
        lp += ln(eval_beta_row(tm, path[t - 1], series.w(t))?[path[t]]);
        lp += emission_transition_log(series.x(t), series.x(t - 1), path[t], cp)?;
    }
    Ok(lp)
}

/// Marginal log-likelihood by explicit summation over all `K^T` paths.
/// Only meant as an oracle for small instances.
pub fn brute_force_loglik(series: &ObjectSeries, params: &ModelParams) -> Result<f64> {
    params.check_series(series)?;
    let mut terms = Vec::new();
    for_each_path(params.k(), series.len(), |path| {
        terms.push(complete_data_log_density(series, params, path)?);
        Ok(())
    })?;
    Ok(log_sum_exp(&terms))
}

/// Sum of per-object forward log-likelihoods.
pub fn dataset_loglik(ds: &PanelDataset, params: &ModelParams) -> Result<f64> {
    let per_object = crate::par_map(ds.objects(), |o| forward_filter(o, params).map(|f| f.loglik));
    per_object.into_iter().try_fold(0.0, |acc, v| v.map(|l| acc + l))
}
