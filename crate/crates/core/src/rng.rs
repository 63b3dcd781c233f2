//! Seeded random streams and the sampling distributions used by the
//! simulation designs.
//!
//! All streams are ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! generator. The same seed and stream id always yield the same sequence on
//! every platform, which keeps simulation studies reproducible.

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal};

use crate::linalg::{Matrix, SpdMatrix};
use crate::math::sqrt;
use crate::{Error, Result};

/// Identifier of the generator behind [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// An independent stream derived from `seed`. Streams with different ids
    /// never overlap, so parallel tasks can each take their own.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> Result<i64> {
        if lo > hi {
            return Err(Error::InvalidParameter(alloc::format!("uniform_int range {lo}..={hi} is empty")));
        }
        Ok(self.rng.random_range(lo..=hi))
    }

    /// Index drawn from an unnormalized nonnegative weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding at the top end
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Distributions understood by [`sample`].
#[derive(Debug, Clone, Copy)]
pub enum Dist<'a> {
    Normal { mean: &'a [f64], cov: &'a SpdMatrix },
    Dirichlet(&'a [f64]),
    Beta(f64, f64),
    ChiSquared(f64),
    InverseWishart { df: f64, scale: &'a SpdMatrix },
    UniformInt { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(SpdMatrix),
    Int(i64),
}

pub fn sample(dist: Dist<'_>, rng: &mut RngStream) -> Result<Draw> {
    Ok(match dist {
        Dist::Normal { mean, cov } => Draw::Vector(sample_mvn(mean, cov, rng)?),
        Dist::Dirichlet(a) => Draw::Vector(sample_dirichlet(a, rng)?),
        Dist::Beta(a, b) => Draw::Scalar(sample_beta(a, b, rng)?),
        Dist::ChiSquared(df) => Draw::Scalar(sample_chi_squared(df, rng)?),
        Dist::InverseWishart { df, scale } => Draw::Matrix(sample_inverse_wishart(df, scale, rng)?),
        Dist::UniformInt { lo, hi } => Draw::Int(rng.uniform_int(lo, hi)?),
    })
}

fn invalid(msg: alloc::string::String) -> Error {
    Error::InvalidParameter(msg)
}

pub fn sample_mvn(mean: &[f64], cov: &SpdMatrix, rng: &mut RngStream) -> Result<Vec<f64>> {
    let p = cov.dim();
    if mean.len() != p {
        return Err(Error::DimensionMismatch {
            what: "normal mean",
            expected: p,
            found: mean.len(),
        });
    }
    let z: Vec<f64> = (0..p).map(|_| rng.standard_normal()).collect();
    let l = cov.cholesky_factor();
    Ok((0..p)
        .map(|i| mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
        .collect())
}

pub fn sample_dirichlet(alpha: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(invalid(alloc::format!("dirichlet parameters must be positive: {alpha:?}")));
    }
    let mut g = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let gamma = Gamma::new(a, 1.0).map_err(|e| invalid(alloc::format!("gamma({a}): {e}")))?;
        g.push(gamma.sample(rng));
    }
    let total: f64 = g.iter().sum();
    Ok(g.into_iter().map(|v| v / total).collect())
}

pub fn sample_beta(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| invalid(alloc::format!("beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng))
}

pub fn sample_chi_squared(df: f64, rng: &mut RngStream) -> Result<f64> {
    if !(df > 0.0) {
        return Err(invalid(alloc::format!("chi-squared df must be positive, got {df}")));
    }
    let d = ChiSquared::new(df).map_err(|e| invalid(alloc::format!("chi-squared({df}): {e}")))?;
    Ok(d.sample(rng))
}

/// Inverse-Wishart draw: a Wishart matrix on the inverted scale is built by
/// the Bartlett decomposition and then inverted.
pub fn sample_inverse_wishart(df: f64, scale: &SpdMatrix, rng: &mut RngStream) -> Result<SpdMatrix> {
    let p = scale.dim();
    if !(df > (p as f64) - 1.0) {
        return Err(invalid(alloc::format!("inverse-Wishart needs df > p - 1 (df = {df}, p = {p})")));
    }
    let inv_scale = SpdMatrix::new(scale.inverse())?;
    let l = inv_scale.cholesky_factor();
    let mut a = Matrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = sqrt(sample_chi_squared(df - i as f64, rng)?);
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    let la = l.matmul(&a)?;
    let wishart = SpdMatrix::new_symmetrized(la.matmul(&la.transpose())?)?;
    SpdMatrix::new_symmetrized(wishart.inverse())
}
