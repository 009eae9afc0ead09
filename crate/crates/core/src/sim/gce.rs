//! Fully connected engine. The analytical model has no cycle formula for
//! it, so this is a modelled output-stationary systolic array: each PE owns
//! one output neuron of the current tile, and input `i` reaches PE `(r, c)`
//! at cycle `i + r + c`. Its cycle counts are reported separately and never
//! compared against the analytical estimate.

use super::StageCycles;
use crate::error::{Error, Result};

/// Systolic array extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GceArray {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GceArray {
    fn default() -> Self {
        GceArray { rows: 8, cols: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GceOutput {
    pub acc: Vec<i32>,
    pub cycles: StageCycles,
}

/// `acc[o] = Σ_i w[o,i]·(x[i] - zp) + b[o]`, stepped cycle by cycle.
pub fn simulate_gce(arr: GceArray, weight: &[i8], bias: &[i32], x: &[i8], zero_point: i32) -> Result<GceOutput> {
    let (n_out, n_in) = (bias.len(), x.len());
    if arr.rows == 0 || arr.cols == 0 {
        return Err(Error::Invalid("systolic array needs at least one row and column".into()));
    }
    if weight.len() != n_out * n_in || n_in == 0 {
        return Err(Error::shape("simulate_gce", format!("{} weights for {n_out}x{n_in}", weight.len())));
    }
    let per_tile = arr.rows * arr.cols;
    let mut acc = bias.to_vec();
    let mut cyc = StageCycles::default();
    for base in (0..n_out).step_by(per_tile) {
        let mut t = 0usize;
        loop {
            let mut busy = false;
            for r in 0..arr.rows {
                for c in 0..arr.cols {
                    let o = base + r * arr.cols + c;
                    let Some(i) = t.checked_sub(r + c).filter(|i| *i < n_in) else { continue };
                    busy = true;
                    if o < n_out {
                        acc[o] += weight[o * n_in + i] as i32 * (x[i] as i32 - zero_point);
                    }
                }
            }
            if !busy {
                break;
            }
            t += 1;
        }
        cyc.compute += t as u64;
        cyc.per_fold.push(t as u64);
    }
    Ok(GceOutput { acc, cycles: cyc })
}
