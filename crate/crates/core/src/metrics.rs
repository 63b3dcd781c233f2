//! Partition comparison (variation of information, corrected Rand index) and
//! the average silhouette used to pick the number of clusters.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::learn::{fit, FitConfig};
use crate::math::{ln, sqrt};
use crate::model::PanelDataset;
use crate::{par_map, Error, Result};

/// Labels of every `(object, time)` pair, object-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatLabeling {
    labels: Vec<usize>,
}

impl FlatLabeling {
    pub fn new(labels: Vec<usize>) -> Self {
        FlatLabeling { labels }
    }

    pub fn from_nested(per_object: &[Vec<usize>]) -> Self {
        FlatLabeling::new(per_object.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    /// Number of distinct labels.
    pub fn cluster_count(&self) -> usize {
        let mut v = self.labels.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

impl From<Vec<usize>> for FlatLabeling {
    fn from(v: Vec<usize>) -> Self {
        FlatLabeling::new(v)
    }
}

struct Contingency {
    n: f64,
    rows: Vec<f64>,
    cols: Vec<f64>,
    cells: Vec<f64>,
}

fn contingency(a: &FlatLabeling, b: &FlatLabeling) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut rows = BTreeMap::new();
    let mut cols = BTreeMap::new();
    let mut cells = BTreeMap::new();
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        *rows.entry(x).or_insert(0u64) += 1;
        *cols.entry(y).or_insert(0u64) += 1;
        *cells.entry((x, y)).or_insert(0u64) += 1;
    }
    // sorted counts make every sum independent of argument order
    let sorted = |it: &mut dyn Iterator<Item = u64>| {
        let mut v: Vec<u64> = it.collect();
        v.sort_unstable();
        v.into_iter().map(|c| c as f64).collect::<Vec<f64>>()
    };
    Ok(Contingency {
        n: a.len() as f64,
        rows: sorted(&mut rows.into_values()),
        cols: sorted(&mut cols.into_values()),
        cells: sorted(&mut cells.into_values()),
    })
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    -counts.iter().map(|&c| c / n * ln(c / n)).sum::<f64>()
}

/// `VI(A, B) = H(A) + H(B) - 2 I(A; B)` in nats.
pub fn variation_of_information(a: &FlatLabeling, b: &FlatLabeling) -> Result<f64> {
    let t = contingency(a, b)?;
    if t.n == 0.0 {
        return Ok(0.0);
    }
    let vi = 2.0 * entropy(&t.cells, t.n) - (entropy(&t.rows, t.n) + entropy(&t.cols, t.n));
    Ok(vi.max(0.0))
}

fn pairs(c: f64) -> f64 {
    c * (c - 1.0) / 2.0
}

/// Hubert-Arabie adjusted Rand index. Two single-cluster partitions (where
/// the index is 0/0) score 1.
pub fn corrected_rand(a: &FlatLabeling, b: &FlatLabeling) -> Result<f64> {
    let t = contingency(a, b)?;
    let index: f64 = t.cells.iter().map(|&c| pairs(c)).sum();
    let sa: f64 = t.rows.iter().map(|&c| pairs(c)).sum();
    let sb: f64 = t.cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mean Euclidean silhouette over the pooled observation rows. Points alone
/// in their cluster score 0.
pub fn average_silhouette(ds: &PanelDataset, labels: &FlatLabeling) -> Result<f64> {
    let rows: Vec<&[f64]> = ds.pooled_rows().collect();
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let mut index = BTreeMap::new();
    for &l in &labels.labels {
        let next = index.len();
        index.entry(l).or_insert(next);
    }
    let k = index.len();
    if k < 2 {
        return Err(Error::TooFewClusters);
    }
    let dense: Vec<usize> = labels.labels.iter().map(|l| index[l]).collect();
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }
    let ids: Vec<usize> = (0..rows.len()).collect();
    let scores = par_map(&ids, |&i| {
        let own = dense[i];
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; k];
        for (j, r) in rows.iter().enumerate() {
            if j != i {
                let d2: f64 = rows[i].iter().zip(*r).map(|(a, b)| (a - b) * (a - b)).sum();
                sums[dense[j]] += sqrt(d2);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            (b - a) / m
        } else {
            0.0
        }
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Fits each `K` in `ks` with `base` (its `k` is overridden) and reports the
/// average silhouette of the hard labels. Entries fail individually, e.g.
/// `K = 1` or a fit that leaves one occupied cluster.
pub fn silhouette_scan(ds: &PanelDataset, ks: &[usize], base: &FitConfig) -> Vec<(usize, Result<f64>)> {
    ks.iter()
        .map(|&k| {
            let mut config = base.clone();
            config.k = k;
            let value = if k < 2 {
                Err(Error::TooFewClusters)
            } else {
                fit(ds, &config).and_then(|r| average_silhouette(ds, &FlatLabeling::from_nested(&r.hard_labels)))
            };
            (k, value)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObjectSeries;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn fl(v: &[usize]) -> FlatLabeling {
        FlatLabeling::new(v.to_vec())
    }

    #[test]
    fn worked_examples() {
        let a = fl(&[1, 1, 2, 2]);
        let b = fl(&[1, 2, 1, 2]);
        assert!((variation_of_information(&a, &b).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((corrected_rand(&a, &b).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(variation_of_information(&a, &a).unwrap(), 0.0);
        assert_eq!(corrected_rand(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert_eq!(
            variation_of_information(&fl(&[1, 2]), &fl(&[1])),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        );
        assert!(corrected_rand(&fl(&[1]), &fl(&[1, 2])).is_err());
    }

    #[test]
    fn random_labelings_have_zero_expected_cri() {
        let mut rng = RngStream::new(61);
        let trials = 100;
        let mut mean = 0.0;
        for _ in 0..trials {
            let a: Vec<usize> = (0..10_000).map(|_| rng.uniform_int(1, 4).unwrap() as usize).collect();
            let b: Vec<usize> = (0..10_000).map(|_| rng.uniform_int(1, 4).unwrap() as usize).collect();
            mean += corrected_rand(&a.into(), &b.into()).unwrap() / trials as f64;
        }
        assert!(mean.abs() < 0.02, "{mean}");
    }

    fn blobs(rng: &mut RngStream) -> (PanelDataset, Vec<usize>) {
        let mut objects = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let c = if i % 2 == 0 { -6.0 } else { 6.0 };
            let x: Vec<f64> = (0..6).map(|_| c + rng.standard_normal()).collect();
            objects.push(ObjectSeries::new(alloc::format!("{i}"), 2, x).unwrap());
            truth.extend([i % 2; 3]);
        }
        (PanelDataset::new(objects).unwrap(), truth)
    }

    #[test]
    fn silhouette_on_blobs() {
        let mut rng = RngStream::new(62);
        let (ds, truth) = blobs(&mut rng);
        assert!(average_silhouette(&ds, &truth.clone().into()).unwrap() > 0.7);
        let one = vec![0; truth.len()];
        assert_eq!(average_silhouette(&ds, &one.into()), Err(Error::TooFewClusters));
        let mut mean = 0.0;
        for _ in 0..20 {
            let random: Vec<usize> = (0..truth.len()).map(|_| rng.uniform_int(0, 1).unwrap() as usize).collect();
            mean += average_silhouette(&ds, &random.into()).unwrap() / 20.0;
        }
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn silhouette_hand_computed() {
        // points 0, 1 in cluster a and 5 alone in cluster b
        let ds = PanelDataset::new(vec![ObjectSeries::new("o", 1, vec![0.0, 1.0, 5.0]).unwrap()]).unwrap();
        let s = average_silhouette(&ds, &fl(&[0, 0, 1])).unwrap();
        let s0 = (5.0 - 1.0) / 5.0;
        let s1 = (4.0 - 1.0) / 4.0;
        assert!((s - (s0 + s1 + 0.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scan_reports_per_entry_errors() {
        let mut rng = RngStream::new(63);
        let (ds, _) = blobs(&mut rng);
        let mut config = FitConfig::new(2);
        config.kmeans_restarts = 3;
        let scan = silhouette_scan(&ds, &[1, 2, 3], &config);
        assert_eq!(scan[0].1, Err(Error::TooFewClusters));
        let s2 = *scan[1].1.as_ref().unwrap();
        assert!(s2 > 0.7);
        assert_eq!(scan, silhouette_scan(&ds, &[1, 2, 3], &config));
    }

    fn labeling(max: usize, len: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..max, len)
    }

    proptest! {
        #[test]
        fn vi_is_a_metric(a in labeling(4, 30), b in labeling(3, 30), c in labeling(5, 30)) {
            let (a, b, c) = (FlatLabeling::new(a), FlatLabeling::new(b), FlatLabeling::new(c));
            let ab = variation_of_information(&a, &b).unwrap();
            prop_assert_eq!(ab, variation_of_information(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            let ac = variation_of_information(&a, &c).unwrap();
            let cb = variation_of_information(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn permutation_invariance(a in labeling(4, 25), b in labeling(4, 25), perm in Just([2usize, 0, 3, 1])) {
            let pa: Vec<usize> = a.iter().map(|&l| perm[l] + 7).collect();
            let (a, b, pa) = (FlatLabeling::new(a), FlatLabeling::new(b), FlatLabeling::new(pa));
            let vi = variation_of_information(&a, &b).unwrap();
            let vip = variation_of_information(&pa, &b).unwrap();
            prop_assert!((vi - vip).abs() < 1e-12);
            let cri = corrected_rand(&a, &b).unwrap();
            let crip = corrected_rand(&pa, &b).unwrap();
            prop_assert!((cri - crip).abs() < 1e-12);
            prop_assert!(variation_of_information(&a, &pa).unwrap() < 1e-12);
            prop_assert!(cri <= 1.0 + 1e-12);
        }

        #[test]
        fn zero_vi_iff_same_partition(a in labeling(3, 12), b in labeling(3, 12)) {
            let same = (0..12).all(|i| (0..12).all(|j| (a[i] == a[j]) == (b[i] == b[j])));
            let vi = variation_of_information(&FlatLabeling::new(a), &FlatLabeling::new(b)).unwrap();
            prop_assert_eq!(same, vi < 1e-12);
        }
    }
}
