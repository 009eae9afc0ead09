//! Post-training INT8 quantization and the integer reference inference.
//!
//! Weights use one symmetric scale per tensor (`[-127, 127]`), activations
//! one asymmetric scale and zero point per layer output. Accumulation is in
//! `i32`; the only floating-point step in the integer path is the requant
//! multiply, done in `f64` and rounded half-to-even.

mod calib;
mod infer;
mod model;

pub use calib::{calibrate_activations, Calibration};
pub use infer::{agreement, conv_acc, fc_acc, pool_acc, quant_forward, quant_infer, requantize, QuantTrace};
pub use model::{quantize_model, QUnit, QuantModel, UnitKind};

use crate::error::{Error, Result};

/// Round half to even in `f64`.
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

fn clamp_i8(v: f64) -> i8 {
    v.clamp(-128.0, 127.0) as i8
}

/// Symmetric per-tensor quantization: `scale = max|w|/127`,
/// `q = clamp(round(w/scale), -127, 127)`; an all-zero tensor gets scale 1.
pub fn quantize_weights(w: &[f32]) -> Result<(Vec<i8>, f32)> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weights to quantize"));
    }
    let max = w.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
    let q = w
        .iter()
        .map(|v| round_half_even(*v as f64 / scale as f64).clamp(-127.0, 127.0) as i8)
        .collect();
    Ok((q, scale))
}

/// Asymmetric activation quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActQuant {
    pub scale: f32,
    pub zero_point: i32,
}

impl ActQuant {
    /// `scale = (max-min)/255`, `zp = round(-128 - min/scale)` clamped to the
    /// int8 range; a zero range falls back to scale 1.
    pub fn from_range(min: f32, max: f32) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(Error::NonFinite("activation range"));
        }
        let (lo, hi) = (min as f64, max as f64);
        if hi == lo {
            return Ok(ActQuant {
                scale: 1.0,
                zero_point: round_half_even(-128.0 - lo).clamp(-128.0, 127.0) as i32,
            });
        }
        // min/(max-min) keeps symmetric ranges exact: -a/2a = -0.5
        let zp = round_half_even(-128.0 - 255.0 * (lo / (hi - lo)));
        Ok(ActQuant {
            scale: ((hi - lo) / 255.0) as f32,
            zero_point: zp.clamp(-128.0, 127.0) as i32,
        })
    }

    pub fn quantize(&self, x: f32) -> i8 {
        clamp_i8(round_half_even(x as f64 / self.scale as f64) + self.zero_point as f64)
    }

    pub fn dequantize(&self, q: i8) -> f32 {
        ((q as i32 - self.zero_point) as f64 * self.scale as f64) as f32
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) || !(-128..=127).contains(&self.zero_point) {
            return Err(Error::Invalid(format!(
                "activation quantizer scale {} zero point {} out of range",
                self.scale, self.zero_point
            )));
        }
        Ok(())
    }
}
