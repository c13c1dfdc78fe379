//! JSON experiment configuration: which experiment to run, on which
//! coupling, at what sample sizes, and where to put the results.
//! Unknown keys are rejected so that typos cannot silently change an
//! experiment.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drift::FeatureSpec;
use crate::error::{Error, Result};
use crate::model::{Coupling, GaussianMixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Moment and score-regularity reports for a coupling.
    Audit,
    /// Fine-grid diffusion marginals vs the interpolation's closed form.
    VerifyMarginals,
    /// Discretization functional across step counts, with a slope fit.
    SweepH,
    /// Drift perturbation levels: squared-error functional and the
    /// excess discretization bound.
    SweepEpsilon,
    /// Early-stopping margins: Wasserstein distance to the smoothed
    /// target and smoothed-audit quantities, with slope fits.
    SweepDelta,
    /// Per-knot drift regression; writes the fitted model as JSON.
    FitDrift,
    /// One discretization-functional evaluation.
    Girsanov,
}

impl ExperimentKind {
    pub fn label(&self) -> &'static str {
        match self {
            ExperimentKind::Audit => "audit",
            ExperimentKind::VerifyMarginals => "verify-marginals",
            ExperimentKind::SweepH => "sweep-h",
            ExperimentKind::SweepEpsilon => "sweep-epsilon",
            ExperimentKind::SweepDelta => "sweep-delta",
            ExperimentKind::FitDrift => "fit-drift",
            ExperimentKind::Girsanov => "girsanov",
        }
    }
}

/// A Gaussian mixture in plain nested lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        let means: Vec<DVector<f64>> = self
            .means
            .iter()
            .map(|m| DVector::from_vec(m.clone()))
            .collect();
        let mut covs = Vec::with_capacity(self.covs.len());
        for c in &self.covs {
            let rows = c.len();
            let cols = c.first().map(Vec::len).unwrap_or(0);
            if c.iter().any(|r| r.len() != cols) {
                return Err(Error::config("ragged covariance matrix in mixture spec"));
            }
            let flat: Vec<f64> = c.iter().flatten().copied().collect();
            covs.push(DMatrix::from_row_slice(rows, cols, &flat));
        }
        GaussianMixture::new(self.weights.clone(), means, covs)
            .map_err(|e| Error::config(format!("invalid mixture: {e}")))
    }
}

/// How the endpoint pair is distributed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CouplingSpec {
    /// Product of a base `mu` and a target `nu`.
    Independent { mu: MixtureSpec, nu: MixtureSpec },
    /// An arbitrary mixture on pair space (dimension 2d).
    Joint { mixture: MixtureSpec },
}

impl CouplingSpec {
    pub fn build(&self) -> Result<Coupling> {
        let built = match self {
            CouplingSpec::Independent { mu, nu } => {
                Coupling::independent(mu.build()?, nu.build()?)
            }
            CouplingSpec::Joint { mixture } => Coupling::from_joint(mixture.build()?),
        };
        built.map_err(|e| Error::config(format!("invalid coupling: {e}")))
    }
}

/// Either one step count or a sweep of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps_list: Option<Vec<usize>>,
}

impl GridSpec {
    pub fn single(&self) -> Result<usize> {
        match (&self.n_steps, &self.n_steps_list) {
            (Some(n), None) => Ok(*n),
            _ => Err(Error::config(
                "this experiment needs grid.n_steps (a single step count)",
            )),
        }
    }

    pub fn list(&self) -> Result<Vec<usize>> {
        match (&self.n_steps, &self.n_steps_list) {
            (Some(n), None) => Ok(vec![*n]),
            (None, Some(l)) if !l.is_empty() => Ok(l.clone()),
            _ => Err(Error::config(
                "provide exactly one of grid.n_steps or a nonempty grid.n_steps_list",
            )),
        }
    }
}

/// One number or a sweep of numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueOrList {
    One(f64),
    Many(Vec<f64>),
}

impl ValueOrList {
    pub fn values(&self) -> Vec<f64> {
        match self {
            ValueOrList::One(v) => vec![*v],
            ValueOrList::Many(vs) => vs.clone(),
        }
    }
}

/// Everything an experiment run needs. The key set is fixed:
/// `experiment, coupling, grid, n, seed, delta, epsilon, features,
/// ridge_lambda, sub_nodes, out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub coupling: CouplingSpec,
    pub grid: GridSpec,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<ValueOrList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<ValueOrList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Structural checks that do not need any computation.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be positive"));
        }
        self.coupling.build()?;
        match self.experiment {
            ExperimentKind::SweepH => {
                self.grid.list()?;
            }
            ExperimentKind::SweepEpsilon => {
                self.grid.single()?;
                if self.epsilon.is_none() {
                    return Err(Error::config("sweep-epsilon needs an epsilon list"));
                }
            }
            ExperimentKind::SweepDelta => {
                if self.delta.is_none() {
                    return Err(Error::config("sweep-delta needs a delta list"));
                }
            }
            ExperimentKind::Audit => {}
            _ => {
                self.grid.single()?;
            }
        }
        if let Some(s) = self.sub_nodes {
            if s == 0 {
                return Err(Error::config("sub_nodes must be at least 1"));
            }
        }
        if let Some(l) = self.ridge_lambda {
            if l <= 0.0 {
                return Err(Error::config("ridge_lambda must be positive"));
            }
        }
        Ok(())
    }
}
