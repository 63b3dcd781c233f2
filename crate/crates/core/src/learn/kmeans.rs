//! K-means on the pooled observation rows, used to seed EM.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Matrix, SpdMatrix};
use crate::model::{ClusterParams, ModelParams, PanelDataset, TransitionModel};
use crate::rng::RngStream;
use crate::{par_map, Error, Result};

use super::TransitionKind;

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of `restarts` Lloyd runs on the rows of `data` (`n x p`), each seeded
/// by k-means++ from its own random stream. Ties keep the earliest restart.
pub fn lloyd(data: &[f64], p: usize, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.len().checked_div(p).unwrap_or(0);
    if k == 0 || n < k {
        return Err(Error::InvalidParameter(alloc::format!("k-means needs 1 <= K <= n (K = {k}, n = {n})")));
    }
    let runs: Vec<u64> = (0..restarts.max(1) as u64).collect();
    let results = par_map(&runs, |&r| {
        let mut rng = RngStream::with_stream(seed, r);
        lloyd_once(data, p, k, &mut rng)
    });
    let mut best: Option<KMeansResult> = None;
    for r in results {
        if best.as_ref().is_none_or(|b| r.sse < b.sse) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_once(data: &[f64], p: usize, k: usize, rng: &mut RngStream) -> KMeansResult {
    let n = data.len() / p;
    let row = |i: usize| &data[i * p..(i + 1) * p];

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.uniform_int(0, n as i64 - 1).expect("nonempty") as usize;
    centroids.push(row(first).to_vec());
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            rng.categorical(&nearest)
        } else {
            rng.uniform_int(0, n as i64 - 1).expect("nonempty") as usize
        };
        centroids.push(row(next).to_vec());
        let c = centroids.last().expect("just pushed");
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(row(i), c));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for i in 0..n {
            let mut best = (f64::INFINITY, 0);
            for (c, cen) in centroids.iter().enumerate() {
                let d = dist2(row(i), cen);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // empty cluster: take the row farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(row(a), &centroids[labels[a]]).total_cmp(&dist2(row(b), &centroids[labels[b]]))
                    })
                    .expect("nonempty");
                centroids[c] = row(far).to_vec();
                labels[far] = c;
            }
        }
    }
    let sse = (0..n).map(|i| dist2(row(i), &centroids[labels[i]])).sum();
    KMeansResult { centroids, labels, sse }
}

/// Initial parameters from k-means on the pooled rows. Returns the
/// parameters and the flat (object-major) k-means labels.
///
/// Means are centroids, covariances are within-cluster sample covariances
/// (pooled within-cluster covariance when a cluster has at most `p` rows),
/// `lambda = 0.5`, and transition probabilities are add-one smoothed label
/// frequencies. Regressed transitions start with zero covariate effects and
/// intercepts at the log-odds of those frequencies.
pub fn kmeans_init(
    ds: &PanelDataset,
    k: usize,
    restarts: usize,
    seed: u64,
    kind: TransitionKind,
) -> Result<(ModelParams, Vec<usize>)> {
    let p = ds.p();
    let data: Vec<f64> = ds.pooled_rows().flat_map(|r| r.iter().copied()).collect();
    let km = lloyd(&data, p, k, restarts, seed)?;
    let n = km.labels.len();
    let row = |i: usize| &data[i * p..(i + 1) * p];

    let mut scatter = vec![Matrix::zeros(p, p); k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let c = km.labels[i];
        counts[c] += 1;
        let x = row(i);
        let m = &km.centroids[c];
        for a in 0..p {
            for b in 0..p {
                scatter[c][(a, b)] += (x[a] - m[a]) * (x[b] - m[b]);
            }
        }
    }
    let mut pooled = Matrix::zeros(p, p);
    for s in &scatter {
        for a in 0..p {
            for b in 0..p {
                pooled[(a, b)] += s[(a, b)] / n as f64;
            }
        }
    }
    let sigma = (0..k)
        .map(|c| {
            let m = if counts[c] > p {
                let mut m = scatter[c].clone();
                let denom = (counts[c] - 1) as f64;
                for a in 0..p {
                    for b in 0..p {
                        m[(a, b)] /= denom;
                    }
                }
                m
            } else {
                pooled.clone()
            };
            SpdMatrix::new_symmetrized(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = ClusterParams::new(km.centroids.clone(), sigma, 0.5)?;

    let mut init_counts = vec![1.0; k];
    let mut trans_counts = vec![vec![1.0; k]; k];
    let mut offset = 0;
    for series in ds.objects() {
        let labels = &km.labels[offset..offset + series.len()];
        init_counts[labels[0]] += 1.0;
        for pair in labels.windows(2) {
            trans_counts[pair[0]][pair[1]] += 1.0;
        }
        offset += series.len();
    }
    let normalize = |v: &[f64]| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let alpha = normalize(&init_counts);
    let beta: Vec<Vec<f64>> = trans_counts.iter().map(|r| normalize(r)).collect();

    let transitions = match kind {
        TransitionKind::Fixed => TransitionModel::Fixed { alpha, beta },
        TransitionKind::Regressed => {
            if ds.d() == 0 {
                return Err(Error::MissingCovariates);
            }
            TransitionModel::Regressed(super::logistic_from_fixed(&alpha, &beta, ds.d()))
        }
    };
    Ok((ModelParams::new(clusters, transitions)?, km.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_alpha, eval_beta_row, ObjectSeries};

    fn blobs() -> PanelDataset {
        let mut rng = RngStream::new(8);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let objects = (0..30)
            .map(|i| {
                let c = centers[i % 3];
                let x: Vec<f64> = (0..4).flat_map(|_| c.map(|m| m + 0.5 * rng.standard_normal())).collect();
                let w: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
                ObjectSeries::new(alloc::format!("o{i}"), 2, x).unwrap().with_covariates(1, w).unwrap()
            })
            .collect();
        PanelDataset::new(objects).unwrap()
    }

    #[test]
    fn recovers_separated_blobs() {
        let ds = blobs();
        let data: Vec<f64> = ds.pooled_rows().flat_map(|r| r.to_vec()).collect();
        let km = lloyd(&data, 2, 3, 5, 1).unwrap();
        // every object stays in one cluster and the three groups differ
        for (i, chunk) in km.labels.chunks(4).enumerate() {
            assert!(chunk.iter().all(|&l| l == chunk[0]));
            assert_eq!(chunk[0], km.labels[(i % 3) * 4]);
        }
        let mut distinct = km.labels.clone();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn two_blob_centroids() {
        let mut rng = RngStream::new(12);
        let objects = (0..40)
            .map(|i| {
                let c = if i < 20 { -5.0 } else { 5.0 };
                let x: Vec<f64> = (0..10).map(|_| c + 0.3 * rng.standard_normal()).collect();
                ObjectSeries::new(alloc::format!("o{i}"), 2, x).unwrap()
            })
            .collect();
        let ds = PanelDataset::new(objects).unwrap();
        let (params, _) = kmeans_init(&ds, 2, 15, 0, TransitionKind::Fixed).unwrap();
        let mut firsts: Vec<f64> = params.clusters.mu.iter().map(|m| m[0]).collect();
        firsts.sort_by(f64::total_cmp);
        assert!((firsts[0] + 5.0).abs() < 0.1 && (firsts[1] - 5.0).abs() < 0.1, "{:?}", params.clusters.mu);
    }

    #[test]
    fn single_cluster_is_grand_mean_and_covariance() {
        let ds = blobs();
        let rows: Vec<Vec<f64>> = ds.pooled_rows().map(|r| r.to_vec()).collect();
        let n = rows.len() as f64;
        let mean = [0, 1].map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n);
        let (params, labels) = kmeans_init(&ds, 1, 2, 0, TransitionKind::Fixed).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        for j in 0..2 {
            assert!((params.clusters.mu[0][j] - mean[j]).abs() < 1e-12);
        }
        let c01 = rows.iter().map(|r| (r[0] - mean[0]) * (r[1] - mean[1])).sum::<f64>() / (n - 1.0);
        assert!((params.clusters.sigma[0].values()[(0, 1)] - c01).abs() < 1e-10);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let ds = blobs();
        let a = kmeans_init(&ds, 3, 4, 9, TransitionKind::Fixed).unwrap();
        let b = kmeans_init(&ds, 3, 4, 9, TransitionKind::Fixed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_valid_for_both_kinds() {
        let ds = blobs();
        let (fixed, labels) = kmeans_init(&ds, 3, 3, 2, TransitionKind::Fixed).unwrap();
        fixed.validate().unwrap();
        assert_eq!(labels.len(), ds.total_observations());
        let (reg, _) = kmeans_init(&ds, 3, 3, 2, TransitionKind::Regressed).unwrap();
        reg.validate().unwrap();
        // regressed start reproduces the fixed probabilities at any w
        let a = eval_alpha(&fixed.transitions, None).unwrap();
        let ar = eval_alpha(&reg.transitions, Some(&[0.7])).unwrap();
        for (x, y) in a.iter().zip(&ar) {
            assert!((x - y).abs() < 1e-12);
        }
        for h in 0..3 {
            let b = eval_beta_row(&fixed.transitions, h, None).unwrap();
            let br = eval_beta_row(&reg.transitions, h, Some(&[0.1])).unwrap();
            for (x, y) in b.iter().zip(&br) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        let ds = PanelDataset::new(vec![ObjectSeries::new("a", 1, vec![0.0, 1.0]).unwrap()]).unwrap();
        assert!(kmeans_init(&ds, 3, 1, 0, TransitionKind::Fixed).is_err());
        let (params, _) = kmeans_init(&ds, 2, 1, 0, TransitionKind::Fixed).unwrap();
        params.validate().unwrap();
        assert!(kmeans_init(&ds, 2, 1, 0, TransitionKind::Regressed).is_err());
    }
}
