//! Functional, cycle-counting simulator of the streaming accelerator.
//!
//! Each engine computes real INT8/INT32 values in the order the hardware
//! would and counts cycles by walking its loop nest, so the counts are an
//! independent check on the closed-form estimates in [`crate::perf`].

mod cce;
mod gce;
pub mod layout;
mod mce;

pub use cce::{simulate_cce, CceOutput};
pub use gce::{simulate_gce, GceArray, GceOutput};
pub use mce::{simulate_mce, MceOutput};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerSpec, PoolSpec};
use crate::perf::{folds, model_cost, DataflowMode, EngineKind, HwConstants, PePolicy};
use crate::quant::{quant_forward, requantize, QUnit, QuantModel, UnitKind};
use crate::tensor::Tensor;

/// Static parameters of one engine instance; the same record drives the
/// template generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub ih: usize,
    pub iw: usize,
    pub oh: usize,
    pub ow: usize,
    pub ic: usize,
    pub oc: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub pe: usize,
    /// First network layer: its line buffer is width-partitioned.
    #[serde(default)]
    pub first_layer: bool,
}

impl EngineConfig {
    pub fn folds(&self) -> usize {
        folds(self.oc, self.pe)
    }

    fn out_dim(i: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        (i + 2 * p).checked_sub(k).map(|v| v / s + 1)
    }

    fn check_common(&self, what: &str) -> Result<()> {
        if self.k == 0 || self.s == 0 || self.pe == 0 || self.ic == 0 || self.oc == 0 || self.ih == 0 || self.iw == 0 {
            return Err(Error::Invalid(format!("{what} configuration has a zero extent: {self:?}")));
        }
        if Self::out_dim(self.ih, self.k, self.s, self.p) != Some(self.oh)
            || Self::out_dim(self.iw, self.k, self.s, self.p) != Some(self.ow)
        {
            return Err(Error::Invalid(format!("{what} output extents do not follow from the input: {self:?}")));
        }
        Ok(())
    }

    pub fn validate_conv(&self) -> Result<()> {
        self.check_common("conv")
    }

    pub fn validate_pool(&self) -> Result<()> {
        self.check_common("pool")?;
        if self.ic != self.oc || self.p >= self.k {
            return Err(Error::Invalid(format!("pool configuration is inconsistent: {self:?}")));
        }
        Ok(())
    }
}

/// Loop-counted cycles of one engine invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageCycles {
    pub input_load: u64,
    pub compute: u64,
    pub buffer_update: u64,
    /// Pipeline drain after the last fold.
    pub drain: u64,
    /// Compute plus buffer cycles of each fold (each tile for the GCE).
    pub per_fold: Vec<u64>,
}

impl StageCycles {
    pub fn total(&self) -> u64 {
        self.input_load + self.compute + self.buffer_update + self.drain
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// Index in the fused architecture.
    pub layer: usize,
    pub engine: EngineKind,
    pub config: EngineConfig,
    pub cycles: StageCycles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub mode: DataflowMode,
    pub stages: Vec<StageReport>,
    /// Sum over conv and pool stages: comparable to the analytical estimate.
    pub engine_cycles: u64,
    /// Slowest conv/pool stage (streaming initiation bound).
    pub bottleneck_cycles: u64,
    /// Modelled fully connected cycles, excluded from the two figures above.
    pub gce_cycles: u64,
}

impl SimReport {
    pub fn total_cycles(&self) -> u64 {
        self.engine_cycles + self.gce_cycles
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,engine,pe,folds,input_load,compute,buffer_update,drain,cycles\n");
        for st in &self.stages {
            let c = &st.cycles;
            let _ = writeln!(
                s,
                "{}:{},{},{},{},{},{},{},{}",
                st.layer,
                st.engine.name(),
                st.config.pe,
                c.per_fold.len(),
                c.input_load,
                c.compute,
                c.buffer_update,
                c.drain,
                c.total()
            );
        }
        let _ = writeln!(s, "total,,,,,,,,{}", self.total_cycles());
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>4} {:>6} {:>12}\n", "stage", "pe", "folds", "cycles");
        for st in &self.stages {
            let name = format!("{}:{}", st.layer, st.engine.name());
            let _ = writeln!(s, "{name:<12} {:>4} {:>6} {:>12}", st.config.pe, st.cycles.per_fold.len(), st.cycles.total());
        }
        let _ = writeln!(s, "mode {}: conv+pool {} cycles, bottleneck {}, fc (modelled) {}", self.mode, self.engine_cycles, self.bottleneck_cycles, self.gce_cycles);
        s
    }

    /// One line per fold of every stage.
    pub fn trace(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            let name = format!("{}:{}", st.layer, st.engine.name());
            if st.cycles.input_load > 0 {
                let _ = writeln!(s, "{name} load {}", st.cycles.input_load);
            }
            for (f, c) in st.cycles.per_fold.iter().enumerate() {
                let _ = writeln!(s, "{name} fold {f} {c}");
            }
            if st.cycles.drain > 0 {
                let _ = writeln!(s, "{name} drain {}", st.cycles.drain);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub policy: PePolicy,
    pub consts: HwConstants,
    pub gce: GceArray,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            policy: PePolicy::streaming(8),
            consts: HwConstants::default(),
            gce: GceArray::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub logits: Vec<f32>,
    /// Requantized output of every non-classifier unit.
    pub outputs: Vec<Vec<i8>>,
    pub report: SimReport,
}

/// Fused-architecture indices of the pooling layers owned by a unit.
fn pool_layers(q: &QuantModel, u: &QUnit) -> Vec<usize> {
    q.arch.layers[u.layer + 1..]
        .iter()
        .enumerate()
        .take_while(|(_, l)| !l.is_parametric())
        .filter(|(_, l)| matches!(l, LayerSpec::MaxPool(_)))
        .map(|(i, _)| u.layer + 1 + i)
        .collect()
}

/// Engine configurations of every conv and pool layer, in execution order.
pub fn engine_configs(q: &QuantModel, policy: &PePolicy) -> Vec<(usize, EngineKind, EngineConfig)> {
    let mut out = Vec::new();
    for u in &q.units {
        let UnitKind::Conv { k, stride, pad } = u.kind else { continue };
        let oc = u.acc.c;
        out.push((
            u.layer,
            EngineKind::Cce,
            EngineConfig {
                ih: u.input.h,
                iw: u.input.w,
                oh: u.acc.h,
                ow: u.acc.w,
                ic: u.input.c,
                oc,
                k,
                s: stride,
                p: pad,
                pe: policy.n_pe(oc),
                first_layer: u.layer == 0,
            },
        ));
        let (mut h, mut w) = (u.acc.h, u.acc.w);
        for (p, layer) in u.pools.iter().zip(pool_layers(q, u)) {
            let cfg = pool_config(oc, h, w, p, policy);
            (h, w) = (cfg.oh, cfg.ow);
            out.push((layer, EngineKind::Mce, cfg));
        }
    }
    out
}

fn pool_config(c: usize, h: usize, w: usize, p: &PoolSpec, policy: &PePolicy) -> EngineConfig {
    EngineConfig {
        ih: h,
        iw: w,
        oh: EngineConfig::out_dim(h, p.k, p.stride, p.pad).unwrap_or(0),
        ow: EngineConfig::out_dim(w, p.k, p.stride, p.pad).unwrap_or(0),
        ic: c,
        oc: c,
        k: p.k,
        s: p.stride,
        p: p.pad,
        pe: policy.n_pe(c),
        first_layer: false,
    }
}

/// Runs one image through the engines. Streaming gives every layer its own
/// engine sized `min(C, PE_max)`; temporal reuses one `PE_max` engine per
/// kind, so layers run back to back either way and the latency is the sum.
pub fn simulate_model(q: &QuantModel, image: &Tensor, opts: &SimOptions) -> Result<SimRun> {
    opts.consts.validate()?;
    let want = q.arch.input.as_shape();
    if image.shape() != want {
        return Err(Error::shape("simulate_model", format!("image {:?}, expected {want:?}", image.shape())));
    }
    let configs = engine_configs(q, &opts.policy);
    let mut next_cfg = configs.iter();
    let mut stages = Vec::new();
    let mut gce_cycles = 0;
    let mut outputs = Vec::new();
    let mut x: Vec<i8> = image.data().iter().map(|v| q.input_q.quantize(*v)).collect();
    for u in &q.units {
        let mut acc = match u.kind {
            UnitKind::Conv { .. } => {
                let &(layer, engine, cfg) = next_cfg.next().ok_or_else(|| Error::Simulation("missing conv stage".into()))?;
                let fw = layout::fold_weights(&u.weight, &u.bias, cfg.oc, cfg.pe)?;
                let out = simulate_cce(&cfg, &fw, &x, u.in_q.zero_point, &opts.consts)?;
                stages.push(StageReport { layer, engine, config: cfg, cycles: out.cycles });
                let mut acc = out.acc;
                for _ in &u.pools {
                    let &(layer, engine, cfg) = next_cfg.next().ok_or_else(|| Error::Simulation("missing pool stage".into()))?;
                    let out = simulate_mce(&cfg, &acc, &opts.consts)?;
                    stages.push(StageReport { layer, engine, config: cfg, cycles: out.cycles });
                    acc = out.pooled;
                }
                acc
            }
            UnitKind::Fc => {
                if !u.pools.is_empty() {
                    return Err(Error::Model("pooling after a fully connected layer".into()));
                }
                let out = simulate_gce(opts.gce, &u.weight, &u.bias, &x, u.in_q.zero_point)?;
                gce_cycles += out.cycles.total();
                stages.push(StageReport {
                    layer: u.layer,
                    engine: EngineKind::Gce,
                    config: EngineConfig {
                        ih: 1,
                        iw: 1,
                        oh: 1,
                        ow: 1,
                        ic: u.input.numel(),
                        oc: u.acc.c,
                        k: 1,
                        s: 1,
                        p: 0,
                        pe: opts.gce.rows * opts.gce.cols,
                        first_layer: false,
                    },
                    cycles: out.cycles,
                });
                out.acc
            }
        };
        // inline requantization at the end of the unit
        match (u.out_q, u.multiplier()) {
            (Some(o), Some(m)) => {
                let floor = if u.relu { o.zero_point.clamp(-128, 127) as i8 } else { i8::MIN };
                x = acc.iter().map(|a| requantize(*a, m, o.zero_point).max(floor)).collect();
                outputs.push(x.clone());
            }
            _ => {
                if u.relu {
                    acc.iter_mut().for_each(|a| *a = (*a).max(0));
                }
                let s = u.acc_scale();
                let logits = acc.iter().map(|a| (*a as f64 * s) as f32).collect();
                let engine: Vec<u64> = stages
                    .iter()
                    .filter(|s| s.engine != EngineKind::Gce)
                    .map(|s| s.cycles.total())
                    .collect();
                let report = SimReport {
                    mode: opts.policy.mode,
                    engine_cycles: engine.iter().sum(),
                    bottleneck_cycles: engine.iter().copied().max().unwrap_or(0),
                    gce_cycles,
                    stages,
                };
                return Ok(SimRun { logits, outputs, report });
            }
        }
    }
    Err(Error::Model("quantized model has no classifier".into()))
}

/// Compares a simulation against the integer reference and the analytical
/// estimate: logits and intermediates must be bit-identical and every conv
/// and pool stage must take exactly the estimated cycles.
pub fn check_run(q: &QuantModel, image: &Tensor, run: &SimRun, opts: &SimOptions) -> Result<()> {
    let reference = quant_forward(q, image)?;
    if reference.outputs != run.outputs {
        return Err(Error::Simulation("intermediate activations differ from the integer reference".into()));
    }
    let same = reference.logits.len() == run.logits.len()
        && reference.logits.iter().zip(&run.logits).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same {
        return Err(Error::Simulation(format!("logits {:?} differ from reference {:?}", run.logits, reference.logits)));
    }
    let est = model_cost(&q.arch, &opts.policy, &opts.consts)?;
    let est: Vec<_> = est.layers.iter().filter(|l| l.kind != EngineKind::Gce).collect();
    let sim: Vec<_> = run.report.stages.iter().filter(|s| s.engine != EngineKind::Gce).collect();
    if est.len() != sim.len() {
        return Err(Error::Simulation(format!("{} simulated stages, {} estimated", sim.len(), est.len())));
    }
    for (e, s) in est.iter().zip(&sim) {
        if e.layer != s.layer || e.cycles != s.cycles.total() {
            return Err(Error::Simulation(format!(
                "layer {}: simulated {} cycles, estimated {} (layer {})",
                s.layer,
                s.cycles.total(),
                e.cycles,
                e.layer
            )));
        }
    }
    Ok(())
}
