//! Experiment configuration files.
//!
//! ```json
//! {
//!   "model_space": { "grid": { "lower": [-2], "upper": [2], "resolution": [41] } },
//!   "reference": { "kind": "uniform" },
//!   "clients": [
//!     { "id": 1, "dataset": "data/client1.csv", "loss": "squared_error", "lambda": "auto" },
//!     { "id": 2, "risk_table": [0.0, 1.0], "lambda": 1.0 }
//!   ],
//!   "lambda0": 1.0,
//!   "channel": { "kind": "identity" }
//! }
//! ```
//!
//! Dataset paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conjugate::{discretize, gaussian_gibbs, gaussian_pooled_from, GaussianMeasure, GridSpec};
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, ModelSpace};
use crate::protocol::{resolve_lambdas, ChainConfig, ChannelTransform, ClientConfig, LambdaSpec};
use crate::risk::{ingest_csv, CsvSchema, Dataset, LossSpec, RiskSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model_space: Option<SpaceSpec>,
    #[serde(default)]
    pub reference: ReferenceSpec,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub channel: ChannelTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceSpec {
    Points(Vec<Vec<f64>>),
    Grid(GridSpec),
    /// `0, 1, …, n−1` on the line.
    Indexed(usize),
}

impl SpaceSpec {
    pub fn build(&self) -> Result<ModelSpace> {
        match self {
            SpaceSpec::Points(p) => ModelSpace::new(p.first().map_or(0, Vec::len), p.clone()),
            SpaceSpec::Grid(g) => ModelSpace::grid(&g.lower, &g.upper, &g.resolution),
            SpaceSpec::Indexed(n) => ModelSpace::indexed(*n),
        }
        .map_err(|e| Error::config("model_space", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    #[default]
    Uniform,
    /// Probabilities in model-space order; normalized on load.
    Probs { values: Vec<f64> },
    /// Gaussian reference; discretized on the model space for the discrete backend.
    Gaussian { mean: Vec<f64>, precision: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: usize,
    #[serde(default)]
    pub risk_table: Option<Vec<f64>>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    pub lambda: LambdaSpec,
}

/// A parsed configuration with its datasets loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub file: ConfigFile,
    pub base_dir: PathBuf,
    datasets: Vec<Option<(Dataset, LossSpec)>>,
}

/// Inputs for the conjugate Gaussian backend.
#[derive(Debug, Clone)]
pub struct GaussianSetup {
    pub q1: GaussianMeasure,
    pub datasets: Vec<Dataset>,
    pub lambdas: Vec<f64>,
    pub lambda0: Option<f64>,
}

impl GaussianSetup {
    /// Every client's measure along the chain.
    pub fn chain_steps(&self) -> Result<Vec<GaussianMeasure>> {
        let mut out = Vec::with_capacity(self.datasets.len());
        let mut current = self.q1.clone();
        for (k, (ds, &l)) in self.datasets.iter().zip(&self.lambdas).enumerate() {
            current = gaussian_gibbs(ds, &current, l).map_err(|e| e.at_client(k + 1))?;
            out.push(current.clone());
        }
        Ok(out)
    }

    pub fn pooled(&self) -> Result<GaussianMeasure> {
        let lambda0 = self
            .lambda0
            .ok_or_else(|| Error::config("lambda0", "required for the pooled benchmark"))?;
        gaussian_pooled_from(&self.datasets, lambda0, &self.q1)
    }
}

fn gaussian_from_spec(mean: &[f64], precision: &[Vec<f64>]) -> Result<GaussianMeasure> {
    let d = mean.len();
    if precision.len() != d || precision.iter().any(|r| r.len() != d) {
        return Err(Error::config("reference.precision", format!("must be {d}×{d}")));
    }
    let flat: Vec<f64> = precision.iter().flatten().copied().collect();
    GaussianMeasure::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(d, d, &flat))
        .map_err(|e| Error::config("reference", e.to_string()))
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })?;
        let mut datasets = Vec::with_capacity(file.clients.len());
        for (i, c) in file.clients.iter().enumerate() {
            if c.id != i + 1 {
                return Err(Error::config(
                    format!("clients[{i}].id"),
                    format!("expected {}, found {}", i + 1, c.id),
                ));
            }
            let entry = match (&c.risk_table, &c.dataset) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(Error::config(
                        format!("clients[{i}]"),
                        "exactly one of risk_table and dataset is required",
                    ))
                }
                (Some(_), None) => {
                    if c.loss.is_some() {
                        return Err(Error::config(format!("clients[{i}].loss"), "only applies to datasets"));
                    }
                    None
                }
                (None, Some(p)) => {
                    let loss = c.loss.unwrap_or(LossSpec::SquaredError);
                    let schema = CsvSchema {
                        pattern_dim: None,
                        loss: Some(loss),
                    };
                    let ds = ingest_csv(base_dir.join(p), c.id, schema).map_err(|e| e.at_client(c.id))?;
                    Some((ds, loss))
                }
            };
            datasets.push(entry);
        }
        Ok(Self {
            file,
            base_dir: base_dir.to_path_buf(),
            datasets,
        })
    }

    fn sources(&self) -> Vec<RiskSource> {
        self.file
            .clients
            .iter()
            .zip(&self.datasets)
            .map(|(c, d)| match d {
                Some((dataset, loss)) => RiskSource::Data {
                    dataset: dataset.clone(),
                    loss: *loss,
                },
                None => RiskSource::Table(c.risk_table.clone().expect("checked on parse")),
            })
            .collect()
    }

    /// Configuration for the discrete backend.
    pub fn discrete(&self) -> Result<ChainConfig> {
        let space = Arc::new(
            self.file
                .model_space
                .as_ref()
                .ok_or_else(|| Error::config("model_space", "required for the discrete backend"))?
                .build()?,
        );
        let q1 = match &self.file.reference {
            ReferenceSpec::Uniform => DiscreteMeasure::uniform(space),
            ReferenceSpec::Probs { values } => {
                DiscreteMeasure::from_probs(space, values).map_err(|e| Error::config("reference.values", e.to_string()))?
            }
            ReferenceSpec::Gaussian { mean, precision } => discretize(&gaussian_from_spec(mean, precision)?, space)?,
        };
        let clients = self
            .file
            .clients
            .iter()
            .zip(self.sources())
            .map(|(c, source)| ClientConfig {
                client_id: c.id,
                source,
                lambda: c.lambda,
            })
            .collect();
        let cfg = ChainConfig {
            clients,
            q1,
            lambda0: self.file.lambda0,
            channel: self.file.channel,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration for the conjugate Gaussian backend.
    pub fn gaussian(&self) -> Result<GaussianSetup> {
        let q1 = match &self.file.reference {
            ReferenceSpec::Gaussian { mean, precision } => gaussian_from_spec(mean, precision)?,
            _ => return Err(Error::config("reference.kind", "the gaussian backend needs a gaussian reference")),
        };
        let mut datasets = Vec::with_capacity(self.datasets.len());
        for (i, d) in self.datasets.iter().enumerate() {
            match d {
                Some((ds, LossSpec::SquaredError)) => {
                    if ds.pattern_dim() != q1.dim() {
                        return Err(Error::config(
                            format!("clients[{i}].dataset"),
                            format!("pattern dimension {} does not match reference dimension {}", ds.pattern_dim(), q1.dim()),
                        ));
                    }
                    datasets.push(ds.clone());
                }
                Some(_) => {
                    return Err(Error::config(format!("clients[{i}].loss"), "the gaussian backend needs squared_error"))
                }
                None => return Err(Error::config(format!("clients[{i}]"), "the gaussian backend needs a dataset")),
            }
        }
        let specs: Vec<LambdaSpec> = self.file.clients.iter().map(|c| c.lambda).collect();
        let ns: Vec<Option<usize>> = datasets.iter().map(|d| Some(d.n())).collect();
        for (i, l) in specs.iter().enumerate() {
            if let LambdaSpec::Explicit(l) = l {
                if !(*l > 0.0 && l.is_finite()) {
                    return Err(Error::config(format!("clients[{i}].lambda"), "must be positive"));
                }
            }
        }
        if let Some(l0) = self.file.lambda0 {
            if !(l0 > 0.0 && l0.is_finite()) {
                return Err(Error::config("lambda0", "must be positive"));
            }
        }
        let lambdas = resolve_lambdas(&specs, &ns, self.file.lambda0)?;
        Ok(GaussianSetup {
            q1,
            datasets,
            lambdas,
            lambda0: self.file.lambda0,
        })
    }
}
