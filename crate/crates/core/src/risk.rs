//! Supervised data, losses and empirical risk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, ModelSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// A client's local training set. Client id 0 is reserved for the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    client_id: usize,
    points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(client_id: usize, points: Vec<DataPoint>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::EmptyInput("dataset has no points".into()))?;
        let p = first.x.len();
        for (row, pt) in points.iter().enumerate() {
            if pt.x.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: pt.x.len(),
                });
            }
            if !pt.y.is_finite() || pt.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: row + 1,
                    column: String::new(),
                    message: "non-finite entry".into(),
                });
            }
        }
        Ok(Self { client_id, points })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn pattern_dim(&self) -> usize {
        self.points[0].x.len()
    }

    /// Checks labels against what `loss` accepts.
    pub fn validate_for(&self, loss: LossSpec) -> Result<()> {
        if loss == LossSpec::Logistic {
            if let Some(row) = self.points.iter().position(|p| p.y != 1.0 && p.y != -1.0) {
                return Err(Error::Parse {
                    row: row + 1,
                    column: "y".into(),
                    message: "logistic loss needs labels in {-1, +1}".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    SquaredError,
    Logistic,
    Absolute,
}

fn dot(x: &[f64], theta: &[f64]) -> f64 {
    x.iter().zip(theta).map(|(a, b)| a * b).sum()
}

impl LossSpec {
    /// `ℓ(x, y, θ) ≥ 0`.
    pub fn eval(self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let fit = dot(x, theta);
        match self {
            LossSpec::SquaredError => (y - fit) * (y - fit),
            LossSpec::Absolute => (y - fit).abs(),
            LossSpec::Logistic => {
                // log(1 + e^{-m}) without overflow
                let m = y * fit;
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
        }
    }
}

/// `(1/n) Σ_i ℓ(x_i, y_i, θ)`.
pub fn empirical_risk(ds: &Dataset, theta: &[f64], loss: LossSpec) -> Result<f64> {
    if theta.len() != ds.pattern_dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.pattern_dim(),
            found: theta.len(),
        });
    }
    Ok(loss_sum(ds, theta, loss) / ds.n() as f64)
}

pub(crate) fn loss_sum(ds: &Dataset, theta: &[f64], loss: LossSpec) -> f64 {
    ds.points.iter().map(|p| loss.eval(&p.x, p.y, theta)).sum()
}

/// Empirical risk tabulated over every point of `space`.
pub fn risk_vector(ds: &Dataset, space: &ModelSpace, loss: LossSpec) -> Result<Vec<f64>> {
    if space.dim() != ds.pattern_dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.pattern_dim(),
            found: space.dim(),
        });
    }
    let n = ds.n() as f64;
    Ok(space
        .points()
        .iter()
        .map(|theta| loss_sum(ds, theta, loss) / n)
        .collect())
}

/// `∫ L(z, θ) dm(θ)` for a measure on a finite space.
pub fn expected_risk(m: &DiscreteMeasure, ds: &Dataset, loss: LossSpec) -> Result<f64> {
    let risks = risk_vector(ds, m.space(), loss)?;
    m.expect(&risks)
}

/// Concatenates client datasets in order into the aggregate (client id 0).
pub fn aggregate(datasets: &[Dataset]) -> Result<Dataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::EmptyInput("no datasets to aggregate".into()))?;
    let p = first.pattern_dim();
    let mut points = Vec::with_capacity(datasets.iter().map(Dataset::n).sum());
    for ds in datasets {
        if ds.pattern_dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: ds.pattern_dim(),
            });
        }
        points.extend_from_slice(&ds.points);
    }
    Dataset::new(0, points)
}

/// Where a client's empirical risk comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskSource {
    Data { dataset: Dataset, loss: LossSpec },
    /// Risk values given directly, one per support point.
    Table(Vec<f64>),
}

impl RiskSource {
    pub fn risks(&self, space: &ModelSpace) -> Result<Vec<f64>> {
        match self {
            RiskSource::Data { dataset, loss } => risk_vector(dataset, space, *loss),
            RiskSource::Table(values) => {
                if values.len() != space.len() {
                    return Err(Error::LengthMismatch(format!(
                        "risk table has {} entries for {} support points",
                        values.len(),
                        space.len()
                    )));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidConfig {
                        field: format!("risk_table[{i}]"),
                        message: "risks must be finite and nonnegative".into(),
                    });
                }
                Ok(values.clone())
            }
        }
    }

    /// Sample count, when backed by data.
    pub fn n(&self) -> Option<usize> {
        match self {
            RiskSource::Data { dataset, .. } => Some(dataset.n()),
            RiskSource::Table(_) => None,
        }
    }

    pub fn dataset(&self) -> Option<(&Dataset, LossSpec)> {
        match self {
            RiskSource::Data { dataset, loss } => Some((dataset, *loss)),
            RiskSource::Table(_) => None,
        }
    }
}

/// CSV layout: header `x1,...,xp,y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvSchema {
    /// Expected pattern dimension; inferred from the header when `None`.
    pub pattern_dim: Option<usize>,
    /// Loss the data will be used with; logistic labels are checked.
    pub loss: Option<LossSpec>,
}

pub fn ingest_csv(path: impl AsRef<Path>, client_id: usize, schema: CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, client_id, schema)
}

pub fn read_csv(reader: impl std::io::Read, client_id: usize, schema: CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let p = header.len().saturating_sub(1);
    if p == 0 || header.get(p) != Some("y") {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "header must be x1,...,xp,y".into(),
        });
    }
    for (j, name) in header.iter().take(p).enumerate() {
        if name != format!("x{}", j + 1) {
            return Err(Error::Parse {
                row: 0,
                column: name.to_string(),
                message: format!("expected column x{}", j + 1),
            });
        }
    }
    if let Some(expected) = schema.pattern_dim {
        if expected != p {
            return Err(Error::DimensionMismatch { expected, found: p });
        }
    }
    let mut points = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut vals = Vec::with_capacity(p + 1);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: header.get(j).unwrap_or("?").to_string(),
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header.get(j).unwrap_or("?").to_string(),
                    message: "non-finite value".into(),
                });
            }
            vals.push(v);
        }
        let y = vals.pop().expect("csv enforces record width");
        points.push(DataPoint::new(vals, y));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("csv has a header but no rows".into()));
    }
    let ds = Dataset::new(client_id, points)?;
    if let Some(loss) = schema.loss {
        ds.validate_for(loss)?;
    }
    Ok(ds)
}
