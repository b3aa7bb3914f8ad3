//! Measure wire format, version 1.
//!
//! ```text
//! {"version": 1, "dim": d, "points": [[..], ..], "log_weights": [w | "-inf", ..]}
//! ```
//!
//! Points must be in canonical (lexicographic) order and the log-weights must
//! satisfy `|logsumexp| <= 1e-9`. Floats are written with shortest round-trip
//! formatting so decode(encode(m)) is bit-exact.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{logsumexp, DiscreteMeasure, ModelSpace, NORMALIZATION_TOL};

pub const WIRE_VERSION: u32 = 1;

/// Largest `|logsumexp|` accepted on load.
pub const LOAD_NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireLogWeight {
    Finite(f64),
    Symbol(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureWire {
    pub version: u32,
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub log_weights: Vec<WireLogWeight>,
}

impl From<DiscreteMeasure> for MeasureWire {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureWire {
            version: WIRE_VERSION,
            dim: m.space().dim(),
            points: m.space().points().to_vec(),
            log_weights: m
                .log_weights()
                .iter()
                .map(|&w| {
                    if w == f64::NEG_INFINITY {
                        WireLogWeight::Symbol("-inf".into())
                    } else {
                        WireLogWeight::Finite(w)
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<MeasureWire> for DiscreteMeasure {
    type Error = Error;

    fn try_from(w: MeasureWire) -> Result<Self> {
        if w.version != WIRE_VERSION {
            return Err(Error::ser(
                "version",
                format!("unsupported version {}, expected {WIRE_VERSION}", w.version),
            ));
        }
        let space = ModelSpace::new(w.dim, w.points).map_err(|e| Error::ser("points", e.to_string()))?;
        let mut lw = Vec::with_capacity(w.log_weights.len());
        for (i, v) in w.log_weights.into_iter().enumerate() {
            match v {
                WireLogWeight::Finite(x) => lw.push(x),
                WireLogWeight::Symbol(s) if s == "-inf" => lw.push(f64::NEG_INFINITY),
                WireLogWeight::Symbol(s) => {
                    return Err(Error::ser(format!("log_weights[{i}]"), format!("unexpected string {s:?}")))
                }
            }
        }
        let lse = logsumexp(&lw);
        if lse.is_nan() || lse.abs() > LOAD_NORMALIZATION_TOL {
            return Err(Error::ser(
                "log_weights",
                format!("not normalized: logsumexp = {lse:e}"),
            ));
        }
        let m = DiscreteMeasure::from_log_weights(Arc::new(space), lw)
            .map_err(|e| Error::ser("log_weights", e.to_string()))?;
        if lse.abs() > NORMALIZATION_TOL {
            m.renormalize()
        } else {
            Ok(m)
        }
    }
}

/// Compact JSON bytes in wire format v1.
pub fn serialize_measure(m: &DiscreteMeasure) -> Vec<u8> {
    serde_json::to_vec(m).expect("measure serialization is infallible")
}

pub fn deserialize_measure(bytes: &[u8]) -> Result<DiscreteMeasure> {
    serde_json::from_slice(bytes).map_err(|e| {
        // Validation errors surface as custom serde errors; keep their message intact.
        Error::ser(
            format!("byte offset near line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}
