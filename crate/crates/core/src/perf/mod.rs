//! Analytical latency and DSP/BRAM model for the convolution (CCE) and
//! max-pooling (MCE) engines.

mod cost;

pub use cost::{channel_gain, model_cost, CostReport, EngineKind, LayerCost, Objective};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibrated pipeline constants. Cycle quantities are integers; the DSP
/// packing factors are real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwConstants {
    pub ii_input: u64,
    pub ii_conv: u64,
    pub ii_b: u64,
    pub d_input: u64,
    pub d_b: u64,
    pub d_conv: u64,
    pub t_ov: u64,
    pub ii_maxpool: u64,
    pub d_maxpool: u64,
    pub rho1: f64,
    pub rho2: f64,
    pub d_ov: u64,
    pub clock_hz: f64,
}

impl Default for HwConstants {
    fn default() -> Self {
        HwConstants {
            ii_input: 1,
            ii_conv: 1,
            ii_b: 1,
            d_input: 3,
            d_b: 3,
            d_conv: 7,
            t_ov: 7,
            ii_maxpool: 6,
            d_maxpool: 50,
            rho1: 1.56,
            rho2: 1.6,
            d_ov: 4,
            clock_hz: 300e6,
        }
    }
}

impl HwConstants {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("ii_input", self.ii_input),
            ("ii_conv", self.ii_conv),
            ("ii_b", self.ii_b),
            ("d_input", self.d_input),
            ("d_b", self.d_b),
            ("d_conv", self.d_conv),
            ("t_ov", self.t_ov),
            ("ii_maxpool", self.ii_maxpool),
            ("d_maxpool", self.d_maxpool),
            ("d_ov", self.d_ov),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("hw constant {name} must be positive")));
        }
        let reals = [("rho1", self.rho1), ("rho2", self.rho2), ("clock_hz", self.clock_hz)];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid(format!("hw constant {name} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataflowMode {
    /// One engine instance per layer, chained by FIFOs.
    Streaming,
    /// One engine instance per kind, reused by every layer.
    Temporal,
}

impl std::str::FromStr for DataflowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "streaming" => Ok(DataflowMode::Streaming),
            "temporal" => Ok(DataflowMode::Temporal),
            _ => Err(Error::Invalid(format!("unknown mode `{s}` (streaming|temporal)"))),
        }
    }
}

impl std::fmt::Display for DataflowMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataflowMode::Streaming => "streaming",
            DataflowMode::Temporal => "temporal",
        })
    }
}

pub const PE_MAX_CHOICES: [usize; 4] = [8, 16, 32, 64];

/// Channel-aware PE allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PePolicy {
    pub mode: DataflowMode,
    pub pe_max: usize,
}

impl PePolicy {
    pub fn new(mode: DataflowMode, pe_max: usize) -> Result<Self> {
        if !PE_MAX_CHOICES.contains(&pe_max) {
            return Err(Error::Invalid(format!(
                "pe-max must be one of {PE_MAX_CHOICES:?}, got {pe_max}"
            )));
        }
        Ok(PePolicy { mode, pe_max })
    }

    pub fn streaming(pe_max: usize) -> Self {
        PePolicy { mode: DataflowMode::Streaming, pe_max }
    }

    pub fn temporal(pe_max: usize) -> Self {
        PePolicy { mode: DataflowMode::Temporal, pe_max }
    }

    /// PEs assigned to a layer with `channels` output channels.
    pub fn n_pe(&self, channels: usize) -> usize {
        match self.mode {
            DataflowMode::Streaming => channels.min(self.pe_max).max(1),
            DataflowMode::Temporal => self.pe_max.max(1),
        }
    }
}

pub fn folds(channels: usize, n_pe: usize) -> usize {
    channels.div_ceil(n_pe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub s: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolDims {
    pub c: usize,
    pub h_in: usize,
    pub w_out: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Resources {
    pub dsp: u64,
    pub bram: u64,
}

/// Cycle breakdown of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCycles {
    pub input_load: u64,
    pub t_loop: u64,
    pub t_buffer: u64,
    pub folds: u64,
    pub compute: u64,
}

impl ConvCycles {
    pub fn total(&self) -> u64 {
        self.input_load + self.compute
    }
}

pub fn conv_cycles(d: &ConvDims, n_pe: usize, c: &HwConstants, first_layer: bool) -> ConvCycles {
    let (k, w_in) = (d.k as u64, d.w_in as u64);
    // The first layer partitions its line buffer along the width, so only K
    // loads are needed before compute starts.
    let input_load = if first_layer {
        k * c.ii_input + c.d_input
    } else {
        k * w_in * c.ii_input + c.d_input
    };
    let t_loop = d.c_in as u64 * c.ii_conv + c.d_conv;
    let t_buffer = d.s as u64 * w_in * c.ii_b + c.d_b;
    let f = folds(d.c_out, n_pe) as u64;
    let (h, w) = (d.h_out as u64, d.w_out as u64);
    let compute = f * (h * w * (t_loop + c.t_ov) + h.saturating_sub(1) * t_buffer);
    ConvCycles {
        input_load,
        t_loop,
        t_buffer,
        folds: f,
        compute,
    }
}

/// `t_input_load + ⌈C_out/N_pe⌉·[H_out·W_out·(t_loop + t_ov) + (H_out−1)·t_buffer]`.
pub fn conv_latency(d: &ConvDims, n_pe: usize, c: &HwConstants, first_layer: bool) -> u64 {
    conv_cycles(d, n_pe, c, first_layer).total()
}

/// `⌈C/N_pe⌉·(H_in+2P)·(W_out+2P)·II_maxpool + D_maxpool`.
pub fn maxpool_latency(d: &PoolDims, n_pe: usize, c: &HwConstants) -> u64 {
    let f = folds(d.c, n_pe) as u64;
    let p = 2 * d.p as u64;
    f * (d.h_in as u64 + p) * (d.w_out as u64 + p) * c.ii_maxpool + c.d_maxpool
}

/// DSP count rounded up: resource estimates never under-report.
fn ceil_div_real(num: u64, rho: f64) -> u64 {
    let q = num as f64 / rho;
    // guard against 1-ulp noise on exact quotients
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.max(1.0) {
        r as u64
    } else {
        q.ceil() as u64
    }
}

/// `DSP = ⌈N_pe·K²/ρ1⌉`, `BRAM = C_in·K`.
pub fn conv_resources(k: usize, c_in: usize, n_pe: usize, c: &HwConstants) -> Resources {
    Resources {
        dsp: ceil_div_real((n_pe * k * k) as u64, c.rho1),
        bram: (c_in * k) as u64,
    }
}

/// `DSP = ⌈N_pe/ρ2⌉ + d_ov`, `BRAM = N_pe`.
pub fn maxpool_resources(n_pe: usize, c: &HwConstants) -> Resources {
    Resources {
        dsp: ceil_div_real(n_pe as u64, c.rho2) + c.d_ov,
        bram: n_pe as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(c_out: usize) -> ConvDims {
        ConvDims { c_in: 2, c_out, k: 3, s: 1, w_in: 8, h_out: 6, w_out: 6 }
    }

    #[test]
    fn conv_hand_values() {
        let c = HwConstants::default();
        let cyc = conv_cycles(&dims(4), 4, &c, false);
        assert_eq!((cyc.input_load, cyc.t_loop, cyc.t_buffer, cyc.compute), (27, 9, 11, 631));
        assert_eq!(cyc.total(), 658);
        assert_eq!(conv_latency(&dims(8), 4, &c, false), 1289);
        assert_eq!(conv_latency(&dims(4), 4, &c, true), 637);
    }

    #[test]
    fn maxpool_hand_values() {
        let c = HwConstants::default();
        let d = PoolDims { c: 4, h_in: 6, w_out: 3, p: 0 };
        assert_eq!(maxpool_latency(&d, 4, &c), 158);
        assert_eq!(maxpool_latency(&PoolDims { c: 8, ..d }, 4, &c), 266);
        assert_eq!(maxpool_latency(&PoolDims { c: 3, h_in: 1, w_out: 1, p: 0 }, 3, &c), 56);
    }

    #[test]
    fn resource_hand_values() {
        let c = HwConstants::default();
        assert_eq!(conv_resources(3, 2, 16, &c), Resources { dsp: 93, bram: 6 });
        assert_eq!(conv_resources(1, 1, 1, &c).dsp, 1);
        assert_eq!(conv_resources(5, 16, 8, &c), Resources { dsp: 129, bram: 80 });
        assert_eq!(maxpool_resources(16, &c), Resources { dsp: 14, bram: 16 });
        assert_eq!(maxpool_resources(8, &c), Resources { dsp: 9, bram: 8 });
        assert_eq!(maxpool_resources(1, &c), Resources { dsp: 5, bram: 1 });
    }

    #[test]
    fn pe_rule() {
        assert_eq!(PePolicy::streaming(8).n_pe(3), 3);
        assert_eq!(PePolicy::streaming(8).n_pe(11), 8);
        assert_eq!(PePolicy::temporal(8).n_pe(3), 8);
        assert_eq!(folds(11, 8), 2);
        assert!(PePolicy::new(DataflowMode::Streaming, 12).is_err());
    }

    #[test]
    fn constants_parse_with_partial_overrides() {
        let c: HwConstants = serde_yaml::from_str("t_ov: 9\nrho1: 2.0\n").unwrap();
        assert_eq!(c.t_ov, 9);
        assert_eq!(c.d_conv, 7);
        assert!(serde_yaml::from_str::<HwConstants>("t_oops: 1").is_err());
        assert!(HwConstants { d_b: 0, ..HwConstants::default() }.validate().is_err());
    }
}
