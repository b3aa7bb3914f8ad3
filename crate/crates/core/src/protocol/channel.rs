use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

/// Distortion applied to a measure as it crosses a link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelTransform {
    #[default]
    Identity,
    /// Log-weights rounded to `bits` fraction (mantissa) bits; masses at or
    /// below `prune_epsilon` dropped; result renormalized.
    Quantize {
        bits: u32,
        #[serde(default)]
        prune_epsilon: f64,
    },
}

impl ChannelTransform {
    pub fn is_identity(&self) -> bool {
        matches!(self, ChannelTransform::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelTransform::Identity => Ok(()),
            ChannelTransform::Quantize { bits, prune_epsilon } => {
                if bits == 0 {
                    return Err(Error::config("channel.bits", "must be at least 1"));
                }
                if !prune_epsilon.is_finite() || prune_epsilon < 0.0 {
                    return Err(Error::config("channel.prune_epsilon", "must be finite and nonnegative"));
                }
                Ok(())
            }
        }
    }
}

pub fn apply_channel(t: &ChannelTransform, m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    t.validate()?;
    let (bits, eps) = match *t {
        ChannelTransform::Identity => return Ok(m.clone()),
        ChannelTransform::Quantize { bits, prune_epsilon } => (bits, prune_epsilon),
    };
    let lw: Vec<f64> = m
        .log_weights()
        .iter()
        .map(|&w| {
            if w == f64::NEG_INFINITY {
                return w;
            }
            let q = round_mantissa(w, bits);
            if q.exp() <= eps {
                f64::NEG_INFINITY
            } else {
                q
            }
        })
        .collect();
    if lw.iter().all(|w| *w == f64::NEG_INFINITY) {
        return Err(Error::EmptySupport);
    }
    DiscreteMeasure::from_log_weights(m.space().clone(), lw)?.renormalize()
}

/// Rounds `w` to `bits` fraction bits, half away from zero. Relative
/// precision is kept uniform across magnitudes.
fn round_mantissa(w: f64, bits: u32) -> f64 {
    const FRACTION_BITS: u32 = 52;
    if bits >= FRACTION_BITS || !w.is_finite() || w == 0.0 {
        return w;
    }
    let shift = FRACTION_BITS - bits;
    let mask = (1u64 << shift) - 1;
    let half = 1u64 << (shift - 1);
    // Carry out of the fraction bumps the exponent, which is the correct rounding.
    f64::from_bits((w.to_bits() + half) & !mask)
}
