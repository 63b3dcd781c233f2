//! Parameter estimation: the generalized EM driver and its M-step pieces.
//!
//! Each iteration computes posteriors under the current parameters, then
//! updates the transition part (closed form for fixed transitions, BFGS on
//! the concave logistic objectives for regressed ones) and runs coordinate
//! ascent over `lambda`, `mu_k` and `Sigma_k`. Every step is an improvement
//! of the expected complete-data log-likelihood, so the observed
//! log-likelihood never decreases.

mod bfgs;
mod kmeans;
mod logistic;
mod updates;

use alloc::vec;
use alloc::vec::Vec;

pub use bfgs::{bfgs_maximize, BfgsOptions, BfgsOutcome};
pub use kmeans::{kmeans_init, lloyd, KMeansResult};
pub use logistic::{logistic_objective_initial, logistic_objective_transition, LogisticObjective};
pub use updates::{
    q_function, q_function_given, responsibility, update_alpha, update_beta, update_lambda, update_mu, update_sigma,
    BetaUpdate, LAMBDA_MAX, LAMBDA_MIN,
};

use crate::inference::{hard_labels, posterior_with_loglik, Posterior};
use crate::math::{abs, ln, sqrt};
use crate::model::{LogisticTransitions, ModelParams, PanelDataset, TransitionModel};
use crate::rng::RngStream;
use crate::{par_map, Error, Result};

/// Which transition model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    Fixed,
    Regressed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub transitions: TransitionKind,
    pub max_iters: usize,
    /// Stop when the log-likelihood changes by less than this relative amount.
    pub rel_tol: f64,
    pub kmeans_restarts: usize,
    /// Sweeps over `lambda`, `mu_k`, `Sigma_k` per M-step.
    pub coordinate_passes: usize,
    pub bfgs_grad_tol: f64,
    pub bfgs_max_iters: usize,
    /// Penalty `ridge * |coeffs|^2` on the logistic coefficients.
    pub ridge: f64,
    pub seed: u64,
    /// Keep the covariate effects of a regressed fit at their starting values.
    pub freeze_covariate_effects: bool,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        FitConfig {
            k,
            transitions: TransitionKind::Fixed,
            max_iters: 500,
            rel_tol: 1e-8,
            kmeans_restarts: 15,
            coordinate_passes: 1,
            bfgs_grad_tol: 1e-6,
            bfgs_max_iters: 200,
            ridge: 0.0,
            seed: 0,
            freeze_covariate_effects: false,
        }
    }

    pub fn regressed(mut self) -> Self {
        self.transitions = TransitionKind::Regressed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if self.kmeans_restarts == 0 {
            return bad("kmeans_restarts must be at least 1");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be nonnegative");
        }
        if !(self.bfgs_grad_tol > 0.0) {
            return bad("bfgs_grad_tol must be positive");
        }
        Ok(())
    }
}

/// A starved cluster that was re-seeded during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reinitialization {
    pub iteration: usize,
    pub cluster: usize,
    /// Expected number of observations the cluster held.
    pub responsibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: ModelParams,
    /// Log-likelihood of the starting point followed by one entry per iteration.
    pub loglik_trace: Vec<f64>,
    pub posteriors: Vec<Posterior>,
    pub hard_labels: Vec<Vec<usize>>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub reinitializations: Vec<Reinitialization>,
    /// Logistic rows whose coefficients exceeded the separation bound.
    pub separation_warnings: usize,
    /// Transition rows left unchanged for lack of expected visits.
    pub starved_rows: usize,
}

impl FitReport {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace starts with the initial value")
    }

    /// Hard labels of all objects, concatenated in dataset order.
    pub fn flat_labels(&self) -> Vec<usize> {
        self.hard_labels.iter().flatten().copied().collect()
    }
}

/// Fits the model from a k-means start.
pub fn fit(ds: &PanelDataset, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    let (init, _) = kmeans_init(ds, config.k, config.kmeans_restarts, config.seed, config.transitions)?;
    fit_from(ds, init, config)
}

struct EStep {
    posts: Vec<Posterior>,
    loglik: f64,
}

fn e_step(ds: &PanelDataset, params: &ModelParams) -> Result<EStep> {
    let results = par_map(ds.objects(), |o| posterior_with_loglik(o, params));
    let mut posts = Vec::with_capacity(results.len());
    let mut loglik = 0.0;
    for r in results {
        let (p, ll) = r?;
        posts.push(p);
        loglik += ll;
    }
    Ok(EStep { posts, loglik })
}

#[cfg(feature = "std")]
struct Timer(std::time::Instant);
#[cfg(feature = "std")]
impl Timer {
    fn start() -> Self {
        Timer(std::time::Instant::now())
    }
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
#[cfg(not(feature = "std"))]
struct Timer;
#[cfg(not(feature = "std"))]
impl Timer {
    fn start() -> Self {
        Timer
    }
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Runs generalized EM from `init`.
pub fn fit_from(ds: &PanelDataset, init: ModelParams, config: &FitConfig) -> Result<FitReport> {
    let timer = Timer::start();
    config.validate()?;
    init.validate()?;
    if init.k() != config.k {
        return Err(Error::DimensionMismatch {
            what: "initial cluster count",
            expected: config.k,
            found: init.k(),
        });
    }
    for o in ds.objects() {
        init.check_series(o)?;
    }

    let mut theta = init;
    let mut est = e_step(ds, &theta)?;
    let mut trace = vec![est.loglik];
    let mut report_extra = (Vec::new(), 0usize, 0usize);
    let mut converged = false;
    let mut iterations = 0;
    let floor = 1e-3 * ds.total_observations() as f64 / config.k as f64;

    while iterations < config.max_iters {
        iterations += 1;

        if config.k > 1 {
            let occupancy: Vec<f64> = (0..config.k).map(|k| responsibility(&est.posts, k)).collect();
            let starved: Vec<usize> = (0..config.k).filter(|&k| occupancy[k] < floor).collect();
            if !starved.is_empty() {
                for &k in &starved {
                    log::debug!("cluster {k} starved ({:.3e} expected rows); reinitializing", occupancy[k]);
                    report_extra.0.push(Reinitialization {
                        iteration: iterations,
                        cluster: k,
                        responsibility: occupancy[k],
                    });
                }
                reinitialize(&mut theta, &starved, &occupancy, config.seed, report_extra.0.len() as u64);
                est = e_step(ds, &theta)?;
                *trace.last_mut().expect("nonempty") = est.loglik;
            }
        }

        let (separations, starved_rows) = m_step(ds, &est.posts, &mut theta, config)?;
        report_extra.1 += separations;
        report_extra.2 += starved_rows;

        let previous = est.loglik;
        est = e_step(ds, &theta)?;
        trace.push(est.loglik);
        if !est.loglik.is_finite() {
            return Err(Error::NumericalUnderflow { t: 0 });
        }
        if abs(est.loglik - previous) < config.rel_tol * abs(previous) {
            converged = true;
            break;
        }
    }

    let hard = est.posts.iter().map(hard_labels).collect();
    Ok(FitReport {
        params: theta,
        loglik_trace: trace,
        posteriors: est.posts,
        hard_labels: hard,
        converged,
        iterations,
        wall_seconds: timer.seconds(),
        reinitializations: report_extra.0,
        separation_warnings: report_extra.1,
        starved_rows: report_extra.2,
    })
}

/// One M-step in place. Returns the number of separation warnings and
/// starved transition rows.
fn m_step(ds: &PanelDataset, posts: &[Posterior], theta: &mut ModelParams, config: &FitConfig) -> Result<(usize, usize)> {
    let mut separations = 0;
    let mut starved_rows = 0;
    match &mut theta.transitions {
        TransitionModel::Fixed { alpha, beta } => {
            *alpha = update_alpha(posts);
            let up = update_beta(posts, beta);
            starved_rows = up.starved_rows.len();
            *beta = up.beta;
        }
        TransitionModel::Regressed(l) => {
            let rows: Vec<usize> = (0..=l.k()).collect();
            let opts = BfgsOptions {
                grad_tol: config.bfgs_grad_tol,
                max_iters: config.bfgs_max_iters,
                ..BfgsOptions::default()
            };
            let current = l.clone();
            let results = par_map(&rows, |&row| -> Result<Option<(Vec<f64>, bool)>> {
                let obj = if row == 0 {
                    LogisticObjective::initial(posts, ds, config.ridge)?
                } else {
                    LogisticObjective::transition(row - 1, posts, ds, config.ridge)?
                };
                if obj.observations() == 0 {
                    return Ok(None);
                }
                Ok(Some(optimize_row(&obj, &current, row, config.freeze_covariate_effects, &opts)))
            });
            for (row, r) in rows.into_iter().zip(results) {
                match r? {
                    Some((coeffs, separated)) => {
                        if separated {
                            log::warn!("logistic row {row} may be separated: coefficients exceed the bound");
                            separations += 1;
                        }
                        l.set_row_coefficients(row, &coeffs);
                    }
                    None => starved_rows += 1,
                }
            }
        }
    }

    let cp = &mut theta.clusters;
    for _ in 0..config.coordinate_passes.max(1) {
        cp.lambda = update_lambda(posts, ds, cp);
        for k in 0..cp.k() {
            let mu = match update_mu(posts, ds, k, cp.lambda) {
                Ok(mu) => mu,
                Err(Error::DegenerateCluster { .. }) => continue,
                Err(e) => return Err(e),
            };
            match update_sigma(posts, ds, k, cp.lambda, &mu) {
                Ok(s) => {
                    cp.mu[k] = mu;
                    cp.sigma[k] = s;
                }
                Err(Error::DegenerateCluster { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((separations, starved_rows))
}

/// Maximizes one logistic row, warm-started from the current coefficients.
fn optimize_row(
    obj: &LogisticObjective,
    current: &LogisticTransitions,
    row: usize,
    freeze: bool,
    opts: &BfgsOptions,
) -> (Vec<f64>, bool) {
    let start = current.row_coefficients(row);
    let v0 = obj.value_and_gradient(&start).0;
    if !freeze {
        let out = bfgs_maximize(|x| obj.value_and_gradient(x), &start, opts);
        return if out.value >= v0 { (out.x, out.separation) } else { (start, false) };
    }
    // only the intercepts move
    let stride = 1 + current.d();
    let free = current.k() - 1;
    let expand = |delta: &[f64]| {
        let mut full = start.clone();
        for c in 0..free {
            full[c * stride] = delta[c];
        }
        full
    };
    let deltas: Vec<f64> = (0..free).map(|c| start[c * stride]).collect();
    let out = bfgs_maximize(
        |x| {
            let (v, g) = obj.value_and_gradient(&expand(x));
            (v, (0..free).map(|c| g[c * stride]).collect())
        },
        &deltas,
        opts,
    );
    if out.value >= v0 {
        (expand(&out.x), out.separation)
    } else {
        (start, false)
    }
}

/// Moves each starved cluster next to the most occupied one and flattens
/// the transition probabilities halfway toward uniform so it can attract
/// observations again.
fn reinitialize(theta: &mut ModelParams, starved: &[usize], occupancy: &[f64], seed: u64, stream: u64) {
    let k_total = theta.k();
    let big = (0..k_total)
        .max_by(|&a, &b| occupancy[a].total_cmp(&occupancy[b]))
        .expect("K >= 1");
    let mut rng = RngStream::with_stream(seed, 0x5eed_0000 + stream);
    let cp = &mut theta.clusters;
    for &k in starved {
        let sigma = cp.sigma[big].clone();
        let mu: Vec<f64> = cp.mu[big]
            .iter()
            .enumerate()
            .map(|(j, m)| m + 0.5 * sqrt(sigma.values()[(j, j)]) * rng.standard_normal())
            .collect();
        cp.mu[k] = mu;
        cp.sigma[k] = sigma;
    }
    let uniform = 1.0 / k_total as f64;
    match &mut theta.transitions {
        TransitionModel::Fixed { alpha, beta } => {
            alpha.iter_mut().for_each(|a| *a = 0.5 * *a + 0.5 * uniform);
            for row in beta.iter_mut() {
                row.iter_mut().for_each(|b| *b = 0.5 * *b + 0.5 * uniform);
            }
        }
        TransitionModel::Regressed(l) => {
            for row in 0..=k_total {
                let halved: Vec<f64> = l.row_coefficients(row).iter().map(|c| 0.5 * c).collect();
                l.set_row_coefficients(row, &halved);
            }
        }
    }
}

/// Regressed transitions with zero covariate effects equivalent to the
/// fixed probabilities `alpha`, `beta`.
pub fn logistic_from_fixed(alpha: &[f64], beta: &[Vec<f64>], d: usize) -> LogisticTransitions {
    let k = alpha.len();
    let mut l = LogisticTransitions::zeros(k, d);
    for c in 0..k.saturating_sub(1) {
        l.set_delta(0, c, ln(alpha[c] / alpha[k - 1]));
        for h in 0..k {
            l.set_delta(h + 1, c, ln(beta[h][c] / beta[h][k - 1]));
        }
    }
    l
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::inference::Posterior;
    use crate::linalg::SpdMatrix;
    use crate::model::tests::random_instance;
    use crate::model::{ClusterParams, ObjectSeries};

    /// `n` random series of length `len` sharing one random parameter set.
    /// Regressed instances carry two covariates.
    pub(crate) fn random_dataset(
        k: usize,
        n: usize,
        len: usize,
        p: usize,
        regressed: bool,
        rng: &mut RngStream,
    ) -> (PanelDataset, ModelParams) {
        let d = if regressed { 2 } else { 0 };
        let (first, params) = random_instance(k, len, p, d, regressed, rng);
        let mut objects = vec![first];
        while objects.len() < n {
            let (mut s, _) = random_instance(k, len, p, d, regressed, rng);
            s = relabel(s, objects.len());
            objects.push(s);
        }
        (PanelDataset::new(objects).unwrap(), params)
    }

    fn relabel(s: ObjectSeries, i: usize) -> ObjectSeries {
        let x = s.responses().to_vec();
        let out = ObjectSeries::new(alloc::format!("obj{i}"), s.p(), x).unwrap();
        match s.covariates() {
            Some(w) => out.with_covariates(s.d(), w.to_vec()).unwrap(),
            None => out,
        }
    }

    /// A posterior assembled from explicit marginal and conditional rows.
    pub(crate) fn fixed_posterior(marginals: &[&[f64]], conditionals: &[&[&[f64]]]) -> Posterior {
        let k = marginals[0].len();
        let m: Vec<f64> = marginals.iter().flat_map(|r| r.iter().copied()).collect();
        let c: Vec<f64> = conditionals.iter().flat_map(|s| s.iter().flat_map(|r| r.iter().copied())).collect();
        Posterior::from_parts(k, marginals.len(), m, c).unwrap()
    }

    /// Scalar clusters with the given means and variances.
    pub(crate) fn scalar_clusters(mu: &[f64], var: &[f64], lambda: f64) -> ClusterParams {
        let sigma = var
            .iter()
            .map(|v| SpdMatrix::new(crate::linalg::Matrix::from_diagonal(&[*v])).unwrap())
            .collect();
        ClusterParams::new(mu.iter().map(|m| vec![*m]).collect(), sigma, lambda).unwrap()
    }
}
