//! JSON form of model parameters and simulation truth.

use std::path::Path;

use longclust_core::{
    ClusterParams, LogisticTransitions, Matrix, ModelParams, SimTruth, SpdMatrix, TransitionModel,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TransitionJson {
    Fixed {
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
    },
    /// Row 0 holds the initial logits, row `h` the logits out of cluster `h`.
    /// The last column is the reference and must be zero.
    Regressed {
        delta: Vec<Vec<f64>>,
        gamma: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub d: usize,
    pub lambda: f64,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub transition: TransitionJson,
}

impl ParamsJson {
    pub fn from_params(params: &ModelParams) -> Self {
        let cp = &params.clusters;
        let (transition, d) = match &params.transitions {
            TransitionModel::Fixed { alpha, beta } => (
                TransitionJson::Fixed {
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                },
                0,
            ),
            TransitionModel::Regressed(l) => {
                let k = l.k();
                let delta = (0..=k).map(|r| (0..k).map(|c| l.delta(r, c)).collect()).collect();
                let gamma = (0..=k).map(|r| (0..k).map(|c| l.gamma(r, c).to_vec()).collect()).collect();
                (TransitionJson::Regressed { delta, gamma }, l.d())
            }
        };
        ParamsJson {
            k: cp.k(),
            p: cp.p(),
            d,
            lambda: cp.lambda,
            mu: cp.mu.clone(),
            sigma: cp.sigma.iter().map(|s| s.values().to_rows()).collect(),
            transition,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let bad = |m: String| CliError::format(format!("parameter file: {m}"));
        if self.mu.len() != self.k || self.sigma.len() != self.k {
            return Err(bad(format!("expected {} means and covariances", self.k)));
        }
        if self.mu.iter().any(|m| m.len() != self.p) {
            return Err(bad(format!("every mean must have length p = {}", self.p)));
        }
        let sigma = self
            .sigma
            .iter()
            .enumerate()
            .map(|(k, rows)| {
                if rows.len() != self.p || rows.iter().any(|r| r.len() != self.p) {
                    return Err(bad(format!("sigma[{k}] must be {p} x {p}", p = self.p)));
                }
                let m = Matrix::from_rows(rows)?;
                Ok(SpdMatrix::new(m)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let clusters = ClusterParams::new(self.mu.clone(), sigma, self.lambda)?;
        let transitions = match &self.transition {
            TransitionJson::Fixed { alpha, beta } => TransitionModel::Fixed {
                alpha: alpha.clone(),
                beta: beta.clone(),
            },
            TransitionJson::Regressed { delta, gamma } => {
                if gamma.iter().flatten().any(|g| g.len() != self.d) {
                    return Err(bad(format!("every gamma vector must have length d = {}", self.d)));
                }
                TransitionModel::Regressed(LogisticTransitions::new(delta.clone(), gamma.clone())?)
            }
        };
        Ok(ModelParams::new(clusters, transitions)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabels {
    pub id: String,
    /// One-based cluster labels, one per time point.
    pub z: Vec<usize>,
}

/// Simulation truth: generating parameters and true label paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthJson {
    pub seed: u64,
    pub rng: String,
    pub params: ParamsJson,
    pub labels: Vec<ObjectLabels>,
}

impl TruthJson {
    pub fn new(truth: &SimTruth, ids: impl IntoIterator<Item = String>, seed: u64) -> Self {
        TruthJson {
            seed,
            rng: longclust_core::rng::RNG_ALGORITHM.to_string(),
            params: ParamsJson::from_params(&truth.params),
            labels: ids
                .into_iter()
                .zip(&truth.z)
                .map(|(id, z)| ObjectLabels {
                    id,
                    z: z.iter().map(|l| l + 1).collect(),
                })
                .collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(format!("json: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(format!("{}: {e}", path.display())))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    read_json::<ParamsJson>(path)?.to_params()
}
