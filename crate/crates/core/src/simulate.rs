//! Synthetic panels with known cluster paths.
//!
//! Parameters are drawn once from stream 0 of the configured seed; object
//! `i` is generated from its own stream `i + 1`, so results do not depend on
//! thread count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Matrix, SpdMatrix};
use crate::math::{ln, sqrt};
use crate::model::{
    eval_alpha, eval_beta_row, ClusterParams, LogisticTransitions, ModelParams, ObjectSeries, PanelDataset,
    TransitionModel,
};
use crate::rng::{sample_beta, sample_chi_squared, sample_dirichlet, sample_inverse_wishart, sample_mvn, RngStream};
use crate::{par_map, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimHyperparams {
    /// Both shape parameters of the Beta prior on `lambda`.
    pub beta_shape: f64,
    /// Common Dirichlet parameter for `alpha`.
    pub dirichlet: f64,
    /// Prior variance of each mean coordinate.
    pub mu_var: f64,
    /// Inverse-Wishart degrees of freedom is `p + iw_df_offset`.
    pub iw_df_offset: f64,
    pub iw_scale_diag: f64,
    /// Multiplier for the stay-probability weight in each `beta` row.
    pub self_weight: f64,
    pub covariate_df: f64,
    pub walk_sd: f64,
    pub gamma_unit: f64,
    pub delta_unit: f64,
    pub self_logit: f64,
}

impl Default for SimHyperparams {
    fn default() -> Self {
        let ln15 = ln(1.5);
        SimHyperparams {
            beta_shape: 10.0,
            dirichlet: 10.0,
            mu_var: 20.0,
            iw_df_offset: 4.0,
            iw_scale_diag: 3.0,
            self_weight: 15.0,
            covariate_df: 5.0,
            walk_sd: 0.5,
            gamma_unit: ln15,
            delta_unit: -5.0 * ln15,
            self_logit: ln(15.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub t_max: usize,
    pub k: usize,
    pub p: usize,
    pub regressed: bool,
    pub seed: u64,
    pub hyper: SimHyperparams,
}

impl SimConfig {
    pub fn new(n: usize, t_max: usize, k: usize, p: usize, seed: u64) -> Self {
        SimConfig {
            n,
            t_max,
            k,
            p,
            regressed: false,
            seed,
            hyper: SimHyperparams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        if self.n == 0 || self.t_max == 0 || self.k == 0 || self.p == 0 {
            return Err(Error::InvalidParameter("n, t_max, K and p must be positive".into()));
        }
        let positive = [
            h.beta_shape,
            h.dirichlet,
            h.mu_var,
            h.iw_scale_diag,
            h.self_weight,
            h.covariate_df,
            h.walk_sd,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("hyperparameters must be positive: {h:?}")));
        }
        if !(self.p as f64 + h.iw_df_offset > self.p as f64 - 1.0) {
            return Err(Error::InvalidParameter("inverse-Wishart degrees of freedom too small".into()));
        }
        Ok(())
    }
}

/// True parameters and labels behind a simulated panel. Labels are
/// zero-based cluster indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub params: ModelParams,
    pub z: Vec<Vec<usize>>,
}

impl SimTruth {
    /// Labels concatenated in dataset order.
    pub fn flat_labels(&self) -> Vec<usize> {
        self.z.iter().flatten().copied().collect()
    }
}

/// Row `h` of the distance-weighted transition matrix: entries proportional
/// to `1 / |mu_k - mu_h|`, with the stay entry set to `self_weight` times
/// the largest of those.
pub fn build_beta_row(h: usize, mus: &[Vec<f64>], self_weight: f64) -> Result<Vec<f64>> {
    let k = mus.len();
    if h >= k {
        return Err(Error::InvalidParameter(format!("row {h} out of range for K = {k}")));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let mut row = vec![0.0; k];
    let mut max_inv: f64 = 0.0;
    for c in (0..k).filter(|&c| c != h) {
        let d = sqrt(mus[c].iter().zip(&mus[h]).map(|(a, b)| (a - b) * (a - b)).sum());
        if !(d > 0.0) {
            return Err(Error::CoincidentMeans { h, k: c });
        }
        row[c] = 1.0 / d;
        max_inv = max_inv.max(row[c]);
    }
    row[h] = self_weight * max_inv;
    let total: f64 = row.iter().sum();
    Ok(row.into_iter().map(|v| v / total).collect())
}

/// Logistic coefficients for the covariate-driven design: cluster 0 gets
/// intercept `delta_unit` and slope `gamma_unit` in every row, staying put
/// gets `+self_logit` in rows `1..K-1`, and the last cluster's row penalizes
/// moves to clusters `0..K-2` by `self_logit`.
pub fn regressed_design(k: usize, hyper: &SimHyperparams) -> LogisticTransitions {
    let mut l = LogisticTransitions::zeros(k, 1);
    if k < 2 {
        return l;
    }
    for row in 0..=k {
        l.set_delta(row, 0, hyper.delta_unit);
        l.set_gamma(row, 0, &[hyper.gamma_unit]);
    }
    for h in 0..k - 1 {
        let row = h + 1;
        l.set_delta(row, h, l.delta(row, h) + hyper.self_logit);
    }
    for c in 0..k.saturating_sub(2) {
        l.set_delta(k, c, l.delta(k, c) - hyper.self_logit);
    }
    l
}

fn draw_clusters(cfg: &SimConfig, rng: &mut RngStream) -> Result<ClusterParams> {
    let h = &cfg.hyper;
    let p = cfg.p;
    let lambda = sample_beta(h.beta_shape, h.beta_shape, rng)?;
    let prior = SpdMatrix::new(Matrix::from_diagonal(&vec![h.mu_var; p]))?;
    let scale = SpdMatrix::new(Matrix::from_diagonal(&vec![h.iw_scale_diag; p]))?;
    let zero = vec![0.0; p];
    let mu = (0..cfg.k).map(|_| sample_mvn(&zero, &prior, rng)).collect::<Result<Vec<_>>>()?;
    let df = p as f64 + h.iw_df_offset;
    let sigma = (0..cfg.k)
        .map(|_| sample_inverse_wishart(df, &scale, rng))
        .collect::<Result<Vec<_>>>()?;
    ClusterParams::new(mu, sigma, lambda)
}

/// Generates one object given the parameters and (optionally) covariates.
fn generate_object(
    id: usize,
    params: &ModelParams,
    cfg: &SimConfig,
    rng: &mut RngStream,
) -> Result<(ObjectSeries, Vec<usize>)> {
    let len = rng.uniform_int(1, cfg.t_max as i64)? as usize;
    let w = if cfg.regressed {
        let mut w = Vec::with_capacity(len);
        w.push(sample_chi_squared(cfg.hyper.covariate_df, rng)?);
        for t in 1..len {
            w.push(w[t - 1] + cfg.hyper.walk_sd * rng.standard_normal());
        }
        Some(w)
    } else {
        None
    };
    let w_at = |t: usize| w.as_ref().map(|w| &w[t..t + 1]);
    let cp = &params.clusters;
    let mut z = Vec::with_capacity(len);
    let mut x = Vec::with_capacity(len * cfg.p);
    z.push(rng.categorical(&eval_alpha(&params.transitions, w_at(0))?));
    x.extend(sample_mvn(&cp.mu[z[0]], &cp.sigma[z[0]], rng)?);
    for t in 1..len {
        let zt = rng.categorical(&eval_beta_row(&params.transitions, z[t - 1], w_at(t))?);
        let prev = &x[(t - 1) * cfg.p..t * cfg.p];
        let mean: Vec<f64> = cp.mu[zt]
            .iter()
            .zip(prev)
            .map(|(m, xp)| cp.lambda * m + (1.0 - cp.lambda) * xp)
            .collect();
        let xt = sample_mvn(&mean, &cp.sigma[zt], rng)?;
        x.extend(xt);
        z.push(zt);
    }
    let mut series = ObjectSeries::new(format!("{}", id + 1), cfg.p, x)?;
    if let Some(w) = w {
        series = series.with_covariates(1, w)?;
    }
    Ok((series, z))
}

fn assemble(cfg: &SimConfig, params: ModelParams) -> Result<(PanelDataset, SimTruth)> {
    params.validate()?;
    let ids: Vec<usize> = (0..cfg.n).collect();
    let objects = par_map(&ids, |&i| {
        let mut rng = RngStream::with_stream(cfg.seed, i as u64 + 1);
        generate_object(i, &params, cfg, &mut rng)
    });
    let mut series = Vec::with_capacity(cfg.n);
    let mut z = Vec::with_capacity(cfg.n);
    for o in objects {
        let (s, labels) = o?;
        series.push(s);
        z.push(labels);
    }
    Ok((PanelDataset::new(series)?, SimTruth { params, z }))
}

/// Panel with fixed initial and transition probabilities.
pub fn simulate_nonregressed(cfg: &SimConfig) -> Result<(PanelDataset, SimTruth)> {
    cfg.validate()?;
    let mut rng = RngStream::with_stream(cfg.seed, 0);
    let clusters = draw_clusters(cfg, &mut rng)?;
    let alpha = sample_dirichlet(&vec![cfg.hyper.dirichlet; cfg.k], &mut rng)?;
    let beta = (0..cfg.k)
        .map(|h| build_beta_row(h, &clusters.mu, cfg.hyper.self_weight))
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::new(clusters, TransitionModel::Fixed { alpha, beta })?;
    let mut cfg = cfg.clone();
    cfg.regressed = false;
    assemble(&cfg, params)
}

/// Panel whose cluster probabilities depend on a single covariate that
/// follows a Gaussian random walk started from a chi-squared draw.
pub fn simulate_regressed(cfg: &SimConfig) -> Result<(PanelDataset, SimTruth)> {
    cfg.validate()?;
    let mut rng = RngStream::with_stream(cfg.seed, 0);
    let clusters = draw_clusters(cfg, &mut rng)?;
    let params = ModelParams::new(clusters, TransitionModel::Regressed(regressed_design(cfg.k, &cfg.hyper)))?;
    let mut cfg = cfg.clone();
    cfg.regressed = true;
    assemble(&cfg, params)
}
