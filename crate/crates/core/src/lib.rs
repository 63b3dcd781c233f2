//! Model-based clustering of multivariate longitudinal data with
//! time-varying cluster assignments.
//!
//! Each object `i` is observed at `T_i` time points. Its cluster label follows
//! a Markov chain (initial probabilities `alpha`, transition matrix `beta`, or
//! multinomial-logistic functions of covariates), and its observation at time
//! `t` is Gaussian around a blend of the current cluster mean and the previous
//! observation:
//!
//! ```text
//! X_i1 | Z_i1 = k          ~ N(mu_k, Sigma_k)
//! X_it | X_i(t-1), Z_it = k ~ N(lambda * mu_k + (1 - lambda) * X_i(t-1), Sigma_k)
//! ```
//!
//! Parameters are estimated with a generalized EM algorithm whose E-step uses
//! forward and backward recursions that are linear in the series length.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature adds wall-clock
//! timing and std math; `parallel` spreads per-object work over rayon.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
pub mod inference;
pub mod learn;
pub mod linalg;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use inference::{backward_q, brute_force_posterior, hard_labels, posterior, Posterior};
pub use learn::{fit, fit_from, kmeans_init, FitConfig, FitReport, TransitionKind};
pub use linalg::{cholesky, mvn_logpdf, Matrix, SpdMatrix};
pub use metrics::{average_silhouette, corrected_rand, silhouette_scan, variation_of_information, FlatLabeling};
pub use model::{
    brute_force_loglik, dataset_loglik, eval_alpha, eval_beta_row, forward_filter, ClusterParams,
    LogisticTransitions, ModelParams, ObjectSeries, PanelDataset, TransitionModel,
};
pub use rng::{sample, Dist, Draw, RngStream};
pub use simulate::{simulate_nonregressed, simulate_regressed, SimConfig, SimTruth};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> alloc::vec::Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> alloc::vec::Vec<R> {
    items.iter().map(f).collect()
}
