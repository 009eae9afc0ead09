use std::fmt::Write as _;

use super::{
    conv_latency, conv_resources, folds, maxpool_latency, maxpool_resources, ConvDims,
    DataflowMode, HwConstants, PePolicy, PoolDims, Resources,
};
use crate::error::{Error, Result};
use crate::model::{Architecture, ChannelId, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineKind {
    Cce,
    Mce,
    /// Fully connected layers: counted in MACs only.
    Gce,
}

impl EngineKind {
    pub fn name(&self) -> &'static str {
        match self {
            EngineKind::Cce => "conv",
            EngineKind::Mce => "maxpool",
            EngineKind::Gce => "fc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: EngineKind,
    pub n_pe: usize,
    pub folds: usize,
    pub cycles: u64,
    pub dsp: u64,
    pub bram: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub mode: DataflowMode,
    pub layers: Vec<LayerCost>,
    /// Sum of per-layer cycles (single-image latency).
    pub cycles: u64,
    /// Slowest stage (streaming throughput bound).
    pub bottleneck_cycles: u64,
    pub dsp: u64,
    pub bram: u64,
    pub macs: u64,
    pub clock_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Macs,
    Latency,
    Dsp,
    Bram,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Macs, Objective::Latency, Objective::Dsp, Objective::Bram];

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Macs => "macs",
            Objective::Latency => "latency",
            Objective::Dsp => "dsp",
            Objective::Bram => "bram",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown objective `{s}` (macs|latency|dsp|bram)")))
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl CostReport {
    pub fn latency_seconds(&self) -> f64 {
        self.cycles as f64 / self.clock_hz
    }

    /// The cost `O` tracked by pruning. Latency is measured in cycles.
    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Macs => self.macs as f64,
            Objective::Latency => self.cycles as f64,
            Objective::Dsp => self.dsp as f64,
            Objective::Bram => self.bram as f64,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,cycles,dsp,bram,macs\n");
        for l in &self.layers {
            let _ = writeln!(out, "{}:{},{},{},{},{}", l.layer, l.kind.name(), l.cycles, l.dsp, l.bram, l.macs);
        }
        let _ = writeln!(out, "total,{},{},{},{}", self.cycles, self.dsp, self.bram, self.macs);
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>5}  {:<8} {:>4} {:>5} {:>10} {:>6} {:>6} {:>10}\n",
            "layer", "kind", "pe", "folds", "cycles", "dsp", "bram", "macs"
        );
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:>5}  {:<8} {:>4} {:>5} {:>10} {:>6} {:>6} {:>10}",
                l.layer,
                l.kind.name(),
                l.n_pe,
                l.folds,
                l.cycles,
                l.dsp,
                l.bram,
                l.macs
            );
        }
        let _ = writeln!(
            out,
            "{:>5}  {:<8} {:>4} {:>5} {:>10} {:>6} {:>6} {:>10}",
            "total", self.mode, "", "", self.cycles, self.dsp, self.bram, self.macs
        );
        let _ = writeln!(
            out,
            "latency {:.3} us at {:.0} MHz, bottleneck stage {} cycles",
            self.latency_seconds() * 1e6,
            self.clock_hz / 1e6,
            self.bottleneck_cycles
        );
        out
    }
}

/// Whole-model estimate. Convolution and pooling layers are costed by the
/// engine formulas, fully connected layers contribute MACs only, and
/// ReLU/BN/flatten are free. Streaming sums resources over layer instances;
/// temporal keeps one engine per kind sized by the most demanding layer.
pub fn model_cost(arch: &Architecture, policy: &PePolicy, consts: &HwConstants) -> Result<CostReport> {
    if policy.pe_max == 0 {
        return Err(Error::Invalid("pe-max must be positive".into()));
    }
    let shapes = arch.shapes()?;
    let macs = arch.count_macs()?;
    let mut layers = Vec::new();
    for (i, (layer, s)) in arch.layers.iter().zip(&shapes).enumerate() {
        let entry = match layer {
            LayerSpec::Conv(c) => {
                let n_pe = policy.n_pe(c.out);
                let d = ConvDims {
                    c_in: s.input.c,
                    c_out: c.out,
                    k: c.k,
                    s: c.stride,
                    w_in: s.input.w,
                    h_out: s.output.h,
                    w_out: s.output.w,
                };
                let r = conv_resources(c.k, s.input.c, n_pe, consts);
                LayerCost {
                    layer: i,
                    kind: EngineKind::Cce,
                    n_pe,
                    folds: folds(c.out, n_pe),
                    cycles: conv_latency(&d, n_pe, consts, i == 0),
                    dsp: r.dsp,
                    bram: r.bram,
                    macs: macs.per_layer[i],
                }
            }
            LayerSpec::MaxPool(p) => {
                let n_pe = policy.n_pe(s.input.c);
                let d = PoolDims {
                    c: s.input.c,
                    h_in: s.input.h,
                    w_out: s.output.w,
                    p: p.pad,
                };
                let r = maxpool_resources(n_pe, consts);
                LayerCost {
                    layer: i,
                    kind: EngineKind::Mce,
                    n_pe,
                    folds: folds(s.input.c, n_pe),
                    cycles: maxpool_latency(&d, n_pe, consts),
                    dsp: r.dsp,
                    bram: r.bram,
                    macs: 0,
                }
            }
            LayerSpec::Fc(_) => LayerCost {
                layer: i,
                kind: EngineKind::Gce,
                n_pe: 0,
                folds: 0,
                cycles: 0,
                dsp: 0,
                bram: 0,
                macs: macs.per_layer[i],
            },
            _ => continue,
        };
        layers.push(entry);
    }
    let cycles = layers.iter().map(|l| l.cycles).sum();
    let bottleneck_cycles = layers.iter().map(|l| l.cycles).max().unwrap_or(0);
    let res = match policy.mode {
        DataflowMode::Streaming => layers.iter().fold(Resources::default(), |acc, l| Resources {
            dsp: acc.dsp + l.dsp,
            bram: acc.bram + l.bram,
        }),
        DataflowMode::Temporal => {
            let mut total = Resources::default();
            for kind in [EngineKind::Cce, EngineKind::Mce] {
                let of_kind = || layers.iter().filter(|l| l.kind == kind);
                total.dsp += of_kind().map(|l| l.dsp).max().unwrap_or(0);
                total.bram += of_kind().map(|l| l.bram).max().unwrap_or(0);
            }
            total
        }
    };
    Ok(CostReport {
        mode: policy.mode,
        layers,
        cycles,
        bottleneck_cycles,
        dsp: res.dsp,
        bram: res.bram,
        macs: macs.total,
        clock_hz: consts.clock_hz,
    })
}

/// Predicted cost reduction from removing channel `id`. Only dimensions
/// matter, so this works on the architecture alone.
pub fn channel_gain(
    arch: &Architecture,
    id: ChannelId,
    objective: Objective,
    policy: &PePolicy,
    consts: &HwConstants,
) -> Result<f64> {
    let before = model_cost(arch, policy, consts)?.objective(objective);
    let after = model_cost(&arch.without_channel(id)?, policy, consts)?.objective(objective);
    Ok((before - after).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dims;

    fn two_conv() -> Architecture {
        Architecture::new(
            Dims::new(1, 16, 16),
            4,
            vec![
                LayerSpec::conv(8, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::maxpool(2, 2),
                LayerSpec::conv(12, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::fc(4),
            ],
        )
        .unwrap()
    }

    #[test]
    fn totals_are_sums_in_streaming_mode() {
        let c = HwConstants::default();
        let r = model_cost(&two_conv(), &PePolicy::streaming(8), &c).unwrap();
        assert_eq!(r.layers.len(), 4);
        assert_eq!(r.cycles, r.layers.iter().map(|l| l.cycles).sum::<u64>());
        assert_eq!(r.dsp, r.layers.iter().map(|l| l.dsp).sum::<u64>());
        assert_eq!(r.bram, r.layers.iter().map(|l| l.bram).sum::<u64>());
        assert_eq!(r.macs, two_conv().count_macs().unwrap().total);
        assert_eq!(r.layers[2].folds, 2);
        assert_eq!(r.layers[3].cycles, 0);
    }

    #[test]
    fn mac_gain_conv_to_conv() {
        let arch = two_conv();
        let c = HwConstants::default();
        let g = channel_gain(&arch, ChannelId::new(0, 3), Objective::Macs, &PePolicy::streaming(8), &c)
            .unwrap();
        // own: C_in·K²·14·14, consumer: K²·C_out·5·5
        assert_eq!(g, (9 * 14 * 14 + 9 * 12 * 5 * 5) as f64);
    }

    #[test]
    fn latency_gain_tracks_consumer_inner_loop() {
        let arch = two_conv();
        let c = HwConstants::default();
        let p = PePolicy::streaming(8);
        // layer 0 has 8 channels = N_pe, so its own folds do not change after
        // removing one; the consumer (12 channels, 2 folds) saves one cycle
        // per output pixel per fold.
        let g = channel_gain(&arch, ChannelId::new(0, 0), Objective::Latency, &p, &c).unwrap();
        assert_eq!(g, (2 * 5 * 5) as f64);
    }

    #[test]
    fn temporal_dsp_gain_is_zero_for_non_widest() {
        let arch = two_conv();
        let c = HwConstants::default();
        let p = PePolicy::temporal(8);
        let g = channel_gain(&arch, ChannelId::new(0, 0), Objective::Dsp, &p, &c).unwrap();
        assert_eq!(g, 0.0);
        let r = model_cost(&arch, &p, &c).unwrap();
        let conv_dsp = r.layers.iter().filter(|l| l.kind == EngineKind::Cce).map(|l| l.dsp).max().unwrap();
        let pool_dsp = r.layers.iter().filter(|l| l.kind == EngineKind::Mce).map(|l| l.dsp).max().unwrap();
        assert_eq!(r.dsp, conv_dsp + pool_dsp);
    }

    #[test]
    fn csv_has_total_row() {
        let r = model_cost(&two_conv(), &PePolicy::streaming(8), &HwConstants::default()).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,cycles,dsp,bram,macs\n0:conv,"));
        assert!(csv.trim_end().lines().last().unwrap().starts_with("total,"));
    }

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("area".parse::<Objective>().is_err());
    }
}
