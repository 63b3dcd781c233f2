//! Closed-form M-step updates and the expected complete-data log-likelihood.

use alloc::vec;
use alloc::vec::Vec;

use crate::inference::{posterior, Posterior};
use crate::linalg::{Matrix, SpdMatrix};
use crate::model::{ClusterParams, ModelParams, PanelDataset, SeriesTerms};
use crate::{Error, Result};

/// Bounds applied to the blend weight after its update.
pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-6;

/// Responsibilities below this are treated as zero in denominators.
const TINY: f64 = 1e-300;

/// `Q(theta, theta_hat)` with posteriors computed under `theta_hat`.
pub fn q_function(theta: &ModelParams, theta_hat: &ModelParams, ds: &PanelDataset) -> Result<f64> {
    let posts: Vec<Posterior> = ds.objects().iter().map(|o| posterior(o, theta_hat)).collect::<Result<_>>()?;
    q_function_given(theta, ds, &posts)
}

/// `Q(theta, .)` for precomputed posteriors: single sums over time and
/// cluster pairs instead of sums over label paths.
pub fn q_function_given(theta: &ModelParams, ds: &PanelDataset, posts: &[Posterior]) -> Result<f64> {
    check_posts(ds, posts)?;
    let mut total = 0.0;
    for (series, post) in ds.objects().iter().zip(posts) {
        let terms = SeriesTerms::new(series, theta)?;
        let k = terms.k;
        for c in 0..k {
            total += weighted(post.marginal(0)[c], terms.log_init[c] + terms.emit(0)[c]);
        }
        for s in 0..terms.len.saturating_sub(1) {
            let m = post.marginal(s);
            for h in 0..k {
                let cond = post.conditional(s, h);
                let lt = terms.trans(s, h);
                for c in 0..k {
                    total += weighted(m[h] * cond[c], lt[c]);
                }
            }
            let next = post.marginal(s + 1);
            let emit = terms.emit(s + 1);
            for c in 0..k {
                total += weighted(next[c], emit[c]);
            }
        }
    }
    Ok(total)
}

/// `w * v`, with zero weight annihilating `-inf`.
#[inline]
fn weighted(w: f64, v: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * v
    }
}

fn check_posts(ds: &PanelDataset, posts: &[Posterior]) -> Result<()> {
    if posts.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            what: "posterior count",
            expected: ds.n(),
            found: posts.len(),
        });
    }
    for (o, p) in ds.objects().iter().zip(posts) {
        if o.len() != p.len() {
            return Err(Error::DimensionMismatch {
                what: "posterior length",
                expected: o.len(),
                found: p.len(),
            });
        }
    }
    Ok(())
}

/// `alpha_k = (1/n) sum_i P(Z_i1 = k | X_i)`.
pub fn update_alpha(posts: &[Posterior]) -> Vec<f64> {
    let k = posts.first().map_or(0, Posterior::k);
    let mut alpha = vec![0.0; k];
    for p in posts {
        for (a, m) in alpha.iter_mut().zip(p.marginal(0)) {
            *a += m;
        }
    }
    let n = posts.len() as f64;
    alpha.iter_mut().for_each(|a| *a /= n);
    alpha
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaUpdate {
    pub beta: Vec<Vec<f64>>,
    /// Rows with no expected visits, left at their previous values.
    pub starved_rows: Vec<usize>,
}

/// Expected transition counts over expected occupancy of the source cluster.
pub fn update_beta(posts: &[Posterior], previous: &[Vec<f64>]) -> BetaUpdate {
    let k = previous.len();
    let mut counts = vec![vec![0.0; k]; k];
    let mut occupancy = vec![0.0; k];
    for p in posts {
        for s in 0..p.len().saturating_sub(1) {
            let m = p.marginal(s);
            for h in 0..k {
                occupancy[h] += m[h];
                for (cnt, c) in counts[h].iter_mut().zip(p.conditional(s, h)) {
                    *cnt += m[h] * c;
                }
            }
        }
    }
    let mut starved_rows = Vec::new();
    let beta = (0..k)
        .map(|h| {
            if occupancy[h] > TINY {
                let row: Vec<f64> = counts[h].iter().map(|c| c / occupancy[h]).collect();
                // absorb rounding so the row is exactly stochastic
                let s: f64 = row.iter().sum();
                row.into_iter().map(|v| v / s).collect()
            } else {
                starved_rows.push(h);
                previous[h].clone()
            }
        })
        .collect();
    BetaUpdate { beta, starved_rows }
}

/// Blend-weight update: the ratio of responsibility-weighted quadratic forms
/// in `X_t - X_{t-1}` and `mu_k - X_{t-1}`, clamped to
/// `[LAMBDA_MIN, LAMBDA_MAX]`. Keeps the current value when no transition
/// terms exist.
pub fn update_lambda(posts: &[Posterior], ds: &PanelDataset, cp: &ClusterParams) -> f64 {
    let k = cp.k();
    let p = cp.p();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut step = vec![0.0; p];
    let mut pull = vec![0.0; p];
    for (series, post) in ds.objects().iter().zip(posts) {
        for t in 1..series.len() {
            let (xt, xp) = (series.x(t), series.x(t - 1));
            let m = post.marginal(t);
            for c in 0..k {
                if m[c] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    step[j] = xt[j] - xp[j];
                    pull[j] = cp.mu[c][j] - xp[j];
                }
                num += m[c] * cp.sigma[c].inner(&step, &pull);
                den += m[c] * cp.sigma[c].mahalanobis_sq(&pull);
            }
        }
    }
    if !(den > 0.0) || !num.is_finite() {
        return cp.lambda;
    }
    (num / den).clamp(LAMBDA_MIN, LAMBDA_MAX)
}

/// Total expected responsibility of cluster `k`.
pub fn responsibility(posts: &[Posterior], k: usize) -> f64 {
    posts.iter().map(|p| (0..p.len()).map(|t| p.marginal(t)[k]).sum::<f64>()).sum()
}

/// Cluster-mean update given the blend weight.
pub fn update_mu(posts: &[Posterior], ds: &PanelDataset, k: usize, lambda: f64) -> Result<Vec<f64>> {
    let p = ds.p();
    let mut num = vec![0.0; p];
    let mut den = 0.0;
    for (series, post) in ds.objects().iter().zip(posts) {
        let m0 = post.marginal(0)[k];
        for (n, x) in num.iter_mut().zip(series.x(0)) {
            *n += m0 * x;
        }
        den += m0;
        for t in 1..series.len() {
            let m = post.marginal(t)[k];
            let (xt, xp) = (series.x(t), series.x(t - 1));
            for j in 0..p {
                num[j] += lambda * m * (xt[j] - (1.0 - lambda) * xp[j]);
            }
            den += lambda * lambda * m;
        }
    }
    if !(den > TINY) {
        return Err(Error::DegenerateCluster { cluster: k });
    }
    Ok(num.into_iter().map(|v| v / den).collect())
}

/// Covariance update: responsibility-weighted outer products of the initial
/// residuals `X_1 - mu_k` and transition residuals
/// `X_t - lambda mu_k - (1 - lambda) X_{t-1}`.
pub fn update_sigma(posts: &[Posterior], ds: &PanelDataset, k: usize, lambda: f64, mu: &[f64]) -> Result<SpdMatrix> {
    let p = ds.p();
    let mut scatter = Matrix::zeros(p, p);
    let mut den = 0.0;
    let mut r = vec![0.0; p];
    let add = |w: f64, r: &[f64], scatter: &mut Matrix| {
        for i in 0..p {
            for j in 0..=i {
                scatter[(i, j)] += w * r[i] * r[j];
            }
        }
    };
    for (series, post) in ds.objects().iter().zip(posts) {
        let m0 = post.marginal(0)[k];
        for j in 0..p {
            r[j] = series.x(0)[j] - mu[j];
        }
        add(m0, &r, &mut scatter);
        den += m0;
        for t in 1..series.len() {
            let m = post.marginal(t)[k];
            let (xt, xp) = (series.x(t), series.x(t - 1));
            for j in 0..p {
                r[j] = xt[j] - lambda * mu[j] - (1.0 - lambda) * xp[j];
            }
            add(m, &r, &mut scatter);
            den += m;
        }
    }
    if !(den > TINY) {
        return Err(Error::DegenerateCluster { cluster: k });
    }
    for i in 0..p {
        for j in 0..=i {
            let v = scatter[(i, j)] / den;
            scatter[(i, j)] = v;
            scatter[(j, i)] = v;
        }
    }
    SpdMatrix::new(scatter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::testutil::*;
    use crate::model::{complete_data_log_density, for_each_path, ObjectSeries, TransitionModel};
    use crate::rng::RngStream;

    #[test]
    fn q_function_matches_path_expectation() {
        let mut rng = RngStream::new(21);
        for regressed in [false, true] {
            let (ds, theta_hat) = random_dataset(2, 3, 2, 2, regressed, &mut rng);
            let (_, theta) = random_dataset(2, 3, 2, 2, regressed, &mut rng);
            let q = q_function(&theta, &theta_hat, &ds).unwrap();
            // oracle: E[ln L^c(theta)] under exact path posteriors of theta_hat
            let mut oracle = 0.0;
            for series in ds.objects() {
                let mut paths = Vec::new();
                for_each_path(2, series.len(), |path| {
                    let lp_hat = complete_data_log_density(series, &theta_hat, path)?;
                    let lp = complete_data_log_density(series, &theta, path)?;
                    paths.push((lp_hat, lp));
                    Ok(())
                })
                .unwrap();
                let max = paths.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = paths.iter().map(|p| (p.0 - max).exp()).sum();
                oracle += paths.iter().map(|p| (p.0 - max).exp() / z * p.1).sum::<f64>();
            }
            assert!((q - oracle).abs() <= 1e-10 * oracle.abs(), "{q} vs {oracle}");
        }
    }

    #[test]
    fn q_function_single_cluster_is_complete_loglik() {
        let mut rng = RngStream::new(22);
        let (ds, theta) = random_dataset(1, 4, 5, 2, false, &mut rng);
        let q = q_function(&theta, &theta, &ds).unwrap();
        let direct: f64 = ds
            .objects()
            .iter()
            .map(|s| complete_data_log_density(s, &theta, &vec![0; s.len()]).unwrap())
            .sum();
        assert!((q - direct).abs() < 1e-10 * direct.abs());
    }

    fn posts_for(ds: &PanelDataset, params: &ModelParams) -> Vec<Posterior> {
        ds.objects().iter().map(|o| posterior(o, params).unwrap()).collect()
    }

    #[test]
    fn alpha_from_first_marginals() {
        let a = fixed_posterior(&[&[1.0, 0.0, 0.0]], &[]);
        assert_eq!(update_alpha(&[a.clone(), a]), vec![1.0, 0.0, 0.0]);
        let u = fixed_posterior(&[&[0.25; 4]], &[]);
        assert_eq!(update_alpha(&[u]), vec![0.25; 4]);
        let posts = [
            fixed_posterior(&[&[0.2, 0.5, 0.3]], &[]),
            fixed_posterior(&[&[0.6, 0.1, 0.3]], &[]),
            fixed_posterior(&[&[0.1, 0.1, 0.8]], &[]),
        ];
        let a = update_alpha(&posts);
        let hand = [0.9 / 3.0, 0.7 / 3.0, 1.4 / 3.0];
        for (x, y) in a.iter().zip(&hand) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_from_deterministic_path() {
        // path 1 -> 2 -> 2 with certainty
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let u = [1.0 / 3.0; 3];
        let post = fixed_posterior(&[&e1, &e2, &e2], &[&[&e2, &u, &u], &[&u, &e2, &u]]);
        let prev = vec![vec![1.0 / 3.0; 3]; 3];
        let up = update_beta(&[post], &prev);
        assert_eq!(up.beta[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(up.beta[1], vec![0.0, 1.0, 0.0]);
        assert_eq!(up.beta[2], prev[2]);
        assert_eq!(up.starved_rows, vec![2]);
    }

    #[test]
    fn beta_hand_arithmetic() {
        let post = fixed_posterior(
            &[&[0.6, 0.4], &[0.5, 0.5], &[0.3, 0.7]],
            &[&[&[0.7, 0.3], &[0.2, 0.8]], &[&[0.4, 0.6], &[0.1, 0.9]]],
        );
        let up = update_beta(&[post], &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        // row 0: (0.6*0.7 + 0.5*0.4) / (0.6 + 0.5)
        let b00 = (0.6 * 0.7 + 0.5 * 0.4) / 1.1;
        let b10 = (0.4 * 0.2 + 0.5 * 0.1) / 0.9;
        assert!((up.beta[0][0] - b00).abs() < 1e-15);
        assert!((up.beta[1][0] - b10).abs() < 1e-15);
        assert!((up.beta[1].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_scalar_example() {
        let ds = PanelDataset::new(vec![ObjectSeries::new("a", 1, vec![0.0, 0.5]).unwrap()]).unwrap();
        let cp = scalar_clusters(&[1.0], &[1.0], 0.3);
        let post = fixed_posterior(&[&[1.0], &[1.0]], &[&[&[1.0]]]);
        let l = update_lambda(&[post], &ds, &cp);
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lambda_clamped_to_open_interval() {
        // data sit exactly on the cluster mean after the first step
        let ds = PanelDataset::new(vec![ObjectSeries::new("a", 1, vec![0.0, 1.0, 1.0]).unwrap()]).unwrap();
        let cp = scalar_clusters(&[1.0], &[1.0], 0.3);
        let post = fixed_posterior(&[&[1.0], &[1.0], &[1.0]], &[&[&[1.0]], &[&[1.0]]]);
        assert_eq!(update_lambda(std::slice::from_ref(&post), &ds, &cp), LAMBDA_MAX);
        // moving away from the mean pushes the ratio below zero
        let ds = PanelDataset::new(vec![ObjectSeries::new("a", 1, vec![0.0, -1.0, 1.0]).unwrap()]).unwrap();
        let v = update_lambda(&[post], &ds, &cp);
        assert!((LAMBDA_MIN..=LAMBDA_MAX).contains(&v));
    }

    #[test]
    fn mu_reduces_to_weighted_mean_when_lambda_is_one() {
        let ds = PanelDataset::new(vec![
            ObjectSeries::new("a", 1, vec![1.0, 2.0, 4.0]).unwrap(),
            ObjectSeries::new("b", 1, vec![7.0]).unwrap(),
        ])
        .unwrap();
        let posts = [
            fixed_posterior(&[&[1.0], &[1.0], &[1.0]], &[&[&[1.0]], &[&[1.0]]]),
            fixed_posterior(&[&[1.0]], &[]),
        ];
        let mu = update_mu(&posts, &ds, 0, 1.0).unwrap();
        assert!((mu[0] - 14.0 / 4.0).abs() < 1e-15);

        let single = PanelDataset::new(vec![ObjectSeries::new("c", 2, vec![3.0, -2.0]).unwrap()]).unwrap();
        let post = fixed_posterior(&[&[1.0, 0.0]], &[]);
        assert_eq!(update_mu(std::slice::from_ref(&post), &single, 0, 0.4).unwrap(), vec![3.0, -2.0]);
        assert_eq!(update_mu(&[post], &single, 1, 0.4), Err(Error::DegenerateCluster { cluster: 1 }));
    }

    #[test]
    fn sigma_edge_cases() {
        let single = PanelDataset::new(vec![ObjectSeries::new("c", 2, vec![3.0, -2.0]).unwrap()]).unwrap();
        let post = fixed_posterior(&[&[1.0]], &[]);
        // one observation: rank-one outer product, needs jitter
        let s = update_sigma(std::slice::from_ref(&post), &single, 0, 0.5, &[1.0, 1.0]).unwrap();
        assert!(s.was_jittered());
        let eps = 1e-8 * (4.0 + 9.0) / 2.0;
        assert!((s.values()[(0, 0)] - (4.0 + eps)).abs() < 1e-12);
        assert!((s.values()[(0, 1)] + 6.0).abs() < 1e-12);
        // zero residuals
        let z = update_sigma(&[post], &single, 0, 0.5, &[3.0, -2.0]).unwrap();
        assert!(z.was_jittered());
        assert!(z.values()[(0, 0)] > 0.0 && z.values()[(0, 0)] < 1e-7);
    }

    /// Golden-section maximization of a unimodal function on `[lo, hi]`.
    fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = hi - g * (hi - lo);
        let mut b = lo + g * (hi - lo);
        let (mut fa, mut fb) = (f(a), f(b));
        while hi - lo > 1e-11 {
            if fa < fb {
                lo = a;
                a = b;
                fa = fb;
                b = lo + g * (hi - lo);
                fb = f(b);
            } else {
                hi = b;
                b = a;
                fb = fa;
                a = hi - g * (hi - lo);
                fa = f(a);
            }
        }
        0.5 * (lo + hi)
    }

    fn with_clusters(base: &ModelParams, cp: ClusterParams) -> ModelParams {
        ModelParams {
            clusters: cp,
            transitions: base.transitions.clone(),
        }
    }

    #[test]
    fn lambda_matches_numeric_argmax() {
        let mut rng = RngStream::new(31);
        let (ds, theta) = random_dataset(3, 6, 12, 2, false, &mut rng);
        let posts = posts_for(&ds, &theta);
        let closed = update_lambda(&posts, &ds, &theta.clusters);
        let q = |l: f64| {
            let mut cp = theta.clusters.clone();
            cp.lambda = l;
            q_function_given(&with_clusters(&theta, cp), &ds, &posts).unwrap()
        };
        let numeric = golden_max(q, LAMBDA_MIN, LAMBDA_MAX);
        assert!((closed - numeric).abs() < 1e-6, "{closed} vs {numeric}");
    }

    #[test]
    fn mu_matches_numeric_argmax() {
        let mut rng = RngStream::new(32);
        let (ds, theta) = random_dataset(2, 6, 12, 2, false, &mut rng);
        let posts = posts_for(&ds, &theta);
        let k = 1;
        let closed = update_mu(&posts, &ds, k, theta.clusters.lambda).unwrap();
        let q = |m: &[f64]| {
            let mut cp = theta.clusters.clone();
            cp.mu[k] = m.to_vec();
            q_function_given(&with_clusters(&theta, cp), &ds, &posts).unwrap()
        };
        // cyclic coordinate golden-section search
        let mut m = theta.clusters.mu[k].clone();
        for _ in 0..60 {
            for j in 0..2 {
                let c = m[j];
                let best = golden_max(
                    |v| {
                        let mut mm = m.clone();
                        mm[j] = v;
                        q(&mm)
                    },
                    c - 20.0,
                    c + 20.0,
                );
                m[j] = best;
            }
        }
        for j in 0..2 {
            assert!((closed[j] - m[j]).abs() < 1e-6, "{closed:?} vs {m:?}");
        }
    }

    #[test]
    fn sigma_matches_numeric_argmax_scalar() {
        let mut rng = RngStream::new(33);
        let (ds, theta) = random_dataset(2, 6, 12, 1, false, &mut rng);
        let posts = posts_for(&ds, &theta);
        let k = 0;
        let mu = theta.clusters.mu[k].clone();
        let closed = update_sigma(&posts, &ds, k, theta.clusters.lambda, &mu).unwrap();
        // optimize over the Cholesky factor l, sigma = l^2
        let q = |l: f64| {
            let mut cp = theta.clusters.clone();
            cp.sigma[k] = SpdMatrix::new(Matrix::from_diagonal(&[l * l])).unwrap();
            q_function_given(&with_clusters(&theta, cp), &ds, &posts).unwrap()
        };
        let l = golden_max(q, 1e-3, 20.0);
        assert!((closed.values()[(0, 0)] - l * l).abs() < 1e-6, "{:?} vs {}", closed.values(), l * l);
    }

    #[test]
    fn sigma_is_stationary_in_two_dimensions() {
        let mut rng = RngStream::new(34);
        let (ds, theta) = random_dataset(2, 6, 12, 2, false, &mut rng);
        let posts = posts_for(&ds, &theta);
        let k = 1;
        let mu = theta.clusters.mu[k].clone();
        let closed = update_sigma(&posts, &ds, k, theta.clusters.lambda, &mu).unwrap();
        let base_l = closed.cholesky_factor().clone();
        let q = |l: &Matrix| {
            let mut cp = theta.clusters.clone();
            cp.sigma[k] = SpdMatrix::new_symmetrized(l.matmul(&l.transpose()).unwrap()).unwrap();
            q_function_given(&with_clusters(&theta, cp), &ds, &posts).unwrap()
        };
        let q0 = q(&base_l);
        let h = 1e-5;
        for (i, j) in [(0, 0), (1, 0), (1, 1)] {
            let mut lp = base_l.clone();
            lp[(i, j)] += h;
            let mut lm = base_l.clone();
            lm[(i, j)] -= h;
            let (qp, qm) = (q(&lp), q(&lm));
            let grad = (qp - qm) / (2.0 * h);
            assert!(grad.abs() < 1e-4 * q0.abs().max(1.0), "grad {grad}");
            assert!(qp <= q0 + 1e-9 && qm <= q0 + 1e-9);
        }
    }

    #[test]
    fn each_update_does_not_decrease_q() {
        let mut rng = RngStream::new(35);
        for _ in 0..10 {
            let (ds, theta) = random_dataset(3, 6, 10, 2, false, &mut rng);
            let posts = posts_for(&ds, &theta);
            let slack = |q: f64| 1e-8 * q.abs();
            let mut cur = theta.clone();
            let mut q_cur = q_function_given(&cur, &ds, &posts).unwrap();

            let new_alpha = update_alpha(&posts);
            if let TransitionModel::Fixed { alpha, .. } = &mut cur.transitions {
                *alpha = new_alpha;
            }
            let q = q_function_given(&cur, &ds, &posts).unwrap();
            assert!(q >= q_cur - slack(q_cur));
            q_cur = q;
            if let TransitionModel::Fixed { beta, .. } = &mut cur.transitions {
                *beta = update_beta(&posts, beta).beta;
            }
            let q = q_function_given(&cur, &ds, &posts).unwrap();
            assert!(q >= q_cur - slack(q_cur));
            q_cur = q;

            cur.clusters.lambda = update_lambda(&posts, &ds, &cur.clusters);
            let q = q_function_given(&cur, &ds, &posts).unwrap();
            assert!(q >= q_cur - slack(q_cur));
            q_cur = q;
            for k in 0..3 {
                cur.clusters.mu[k] = update_mu(&posts, &ds, k, cur.clusters.lambda).unwrap();
                let q = q_function_given(&cur, &ds, &posts).unwrap();
                assert!(q >= q_cur - slack(q_cur));
                q_cur = q;
                let mu = cur.clusters.mu[k].clone();
                cur.clusters.sigma[k] = update_sigma(&posts, &ds, k, cur.clusters.lambda, &mu).unwrap();
                let q = q_function_given(&cur, &ds, &posts).unwrap();
                assert!(q >= q_cur - slack(q_cur));
                q_cur = q;
            }
            let q_hat = q_function_given(&theta, &ds, &posts).unwrap();
            assert!(q_cur >= q_hat);
        }
    }
}
