//! Design generation: per-layer template parameters, the weight blob in
//! engine memory layout, instantiation text and candidate manifests.

use std::fmt::Write as _;

use crate::blob::{self, BlobData, BlobRecord};
use crate::error::{Error, Result};
use crate::perf::{CostReport, EngineKind, PePolicy};
use crate::pruning::{CandidateSet, PruneStep};
use crate::quant::{ActQuant, QuantModel, UnitKind};
use crate::sim::layout::{fold_weights, unfold_weights, FoldedWeights};
use crate::sim::{engine_configs, EngineConfig};

/// Template parameters of one conv or pool engine instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRecord {
    /// Index in the fused architecture.
    pub layer: usize,
    pub engine: EngineKind,
    pub params: EngineConfig,
}

impl LayerRecord {
    pub fn folds(&self) -> usize {
        self.params.folds()
    }

    /// PEs left idle in the final fold.
    pub fn idle_in_last_fold(&self) -> usize {
        self.folds() * self.params.pe - self.params.oc
    }
}

pub fn derive_layer_params(q: &QuantModel, policy: &PePolicy) -> Vec<LayerRecord> {
    engine_configs(q, policy)
        .into_iter()
        .map(|(layer, engine, params)| LayerRecord { layer, engine, params })
        .collect()
}

pub fn layer_params_csv(records: &[LayerRecord]) -> String {
    let mut s = String::from("layer,engine,IH,IW,OH,OW,IC,OC,K,S,P,PE,FOLD\n");
    for r in records {
        let p = &r.params;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.layer,
            r.engine.name(),
            p.ih,
            p.iw,
            p.oh,
            p.ow,
            p.ic,
            p.oc,
            p.k,
            p.s,
            p.p,
            p.pe,
            r.folds()
        );
    }
    s
}

fn conv_record(records: &[LayerRecord], layer: usize) -> Result<&LayerRecord> {
    records
        .iter()
        .find(|r| r.layer == layer && r.engine == EngineKind::Cce)
        .ok_or_else(|| Error::Invalid(format!("no conv template parameters for layer {layer}")))
}

fn quant_records(prefix: &str, q: ActQuant) -> [BlobRecord; 2] {
    [
        BlobRecord::new(format!("{prefix}_scale"), &[1], BlobData::F32(vec![q.scale])),
        BlobRecord::new(format!("{prefix}_zero_point"), &[1], BlobData::I32(vec![q.zero_point])),
    ]
}

/// Blob records: conv weights `[FOLD][PE][IC][K][K]` with biases
/// `[FOLD][PE]`, fc weights `[OUT][IN]`, plus every scale and zero point.
pub fn weight_blob_records(q: &QuantModel, records: &[LayerRecord]) -> Result<Vec<BlobRecord>> {
    let mut out = quant_records("input", q.input_q).to_vec();
    for u in &q.units {
        let i = u.layer;
        match u.kind {
            UnitKind::Conv { k, .. } => {
                let r = conv_record(records, i)?;
                if r.params.oc != u.acc.c || r.params.ic != u.input.c || r.params.k != k {
                    return Err(Error::Invalid(format!("template parameters of layer {i} do not match the model")));
                }
                let f = fold_weights(&u.weight, &u.bias, u.acc.c, r.params.pe)?;
                out.push(BlobRecord::new(format!("layer{i}.weight"), &[f.folds, f.pe, u.input.c, k, k], BlobData::I8(f.weights)));
                out.push(BlobRecord::new(format!("layer{i}.bias"), &[f.folds, f.pe], BlobData::I32(f.bias)));
            }
            UnitKind::Fc => {
                out.push(BlobRecord::new(format!("layer{i}.weight"), &u.weight_dims, BlobData::I8(u.weight.clone())));
                out.push(BlobRecord::new(format!("layer{i}.bias"), &[u.bias.len()], BlobData::I32(u.bias.clone())));
            }
        }
        out.push(BlobRecord::new(format!("layer{i}.weight_scale"), &[1], BlobData::F32(vec![u.weight_scale])));
        out.extend(quant_records(&format!("layer{i}.in"), u.in_q));
        if let Some(o) = u.out_q {
            out.extend(quant_records(&format!("layer{i}.out"), o));
        }
    }
    Ok(out)
}

pub fn export_weight_blob(q: &QuantModel, records: &[LayerRecord]) -> Result<Vec<u8>> {
    Ok(blob::encode(&weight_blob_records(q, records)?))
}

struct Lookup(Vec<BlobRecord>);

impl Lookup {
    fn get(&self, name: &str) -> Result<&BlobRecord> {
        self.0
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::format("weight blob", format!("missing record {name}")))
    }

    fn scalar_f32(&self, name: &str) -> Result<f32> {
        match self.get(name)?.as_f32()? {
            [v] => Ok(*v),
            _ => Err(Error::format("weight blob", format!("{name} must hold one value"))),
        }
    }

    fn scalar_i32(&self, name: &str) -> Result<i32> {
        match self.get(name)?.as_i32()? {
            [v] => Ok(*v),
            _ => Err(Error::format("weight blob", format!("{name} must hold one value"))),
        }
    }

    fn quant(&self, prefix: &str) -> Result<ActQuant> {
        let q = ActQuant {
            scale: self.scalar_f32(&format!("{prefix}_scale"))?,
            zero_point: self.scalar_i32(&format!("{prefix}_zero_point"))?,
        };
        q.validate()?;
        Ok(q)
    }
}

/// Loads a blob written by [`export_weight_blob`] into a model of the same
/// architecture, undoing the fold-major layout.
pub fn import_weight_blob(template: &QuantModel, records: &[LayerRecord], bytes: &[u8]) -> Result<QuantModel> {
    let recs = Lookup(blob::decode(bytes)?);
    let mut q = template.clone();
    q.input_q = recs.quant("input")?;
    for u in &mut q.units {
        let i = u.layer;
        let w = recs.get(&format!("layer{i}.weight"))?;
        let b = recs.get(&format!("layer{i}.bias"))?;
        match u.kind {
            UnitKind::Conv { k, .. } => {
                let r = conv_record(records, i)?;
                let (folds, pe) = (r.folds(), r.params.pe);
                if w.dims_usize() != [folds, pe, u.input.c, k, k] || b.dims_usize() != [folds, pe] {
                    return Err(Error::format("weight blob", format!("layer {i} has dims {:?}/{:?}", w.dims, b.dims)));
                }
                let f = FoldedWeights {
                    folds,
                    pe,
                    per_channel: u.input.c * k * k,
                    weights: w.as_i8()?.to_vec(),
                    bias: b.as_i32()?.to_vec(),
                };
                (u.weight, u.bias) = unfold_weights(&f, u.acc.c)?;
            }
            UnitKind::Fc => {
                if w.dims_usize() != u.weight_dims || b.dims_usize() != [u.acc.c] {
                    return Err(Error::format("weight blob", format!("layer {i} has dims {:?}/{:?}", w.dims, b.dims)));
                }
                u.weight = w.as_i8()?.to_vec();
                u.bias = b.as_i32()?.to_vec();
            }
        }
        u.weight_scale = recs.scalar_f32(&format!("layer{i}.weight_scale"))?;
        u.in_q = recs.quant(&format!("layer{i}.in"))?;
        if u.out_q.is_some() {
            u.out_q = Some(recs.quant(&format!("layer{i}.out"))?);
        }
    }
    Ok(q)
}

/// One instantiation line per engine with the ten template arguments
/// `IH, IW, OH, OW, IC, OC, K, S, P, PE`.
pub fn emit_template_text(name: &str, records: &[LayerRecord]) -> String {
    let mut s = format!("// {name}: {} engine instances\n", records.len());
    for r in records {
        let p = &r.params;
        let template = match r.engine {
            EngineKind::Cce => "conv_engine",
            EngineKind::Mce => "maxpool_engine",
            EngineKind::Gce => "fc_engine",
        };
        let _ = writeln!(
            s,
            "{template}<{}, {}, {}, {}, {}, {}, {}, {}, {}, {}> layer{}; // {} fold(s), {} idle PE(s) in last fold",
            p.ih,
            p.iw,
            p.oh,
            p.ow,
            p.ic,
            p.oc,
            p.k,
            p.s,
            p.p,
            p.pe,
            r.layer,
            r.folds(),
            r.idle_in_last_fold()
        );
    }
    s
}

/// `candidate_id,step,clean_acc,robustness,macs,cycles,dsp,bram,pareto`, one
/// row per candidate; `reports[i]` is the cost of candidate `i`.
pub fn emit_candidate_manifest(set: &CandidateSet, reports: &[CostReport]) -> Result<String> {
    if reports.len() != set.len() {
        return Err(Error::Invalid(format!("{} cost reports for {} candidates", reports.len(), set.len())));
    }
    let mut s = String::from("candidate_id,step,clean_acc,robustness,macs,cycles,dsp,bram,pareto\n");
    for (i, ((c, r), p)) in set.candidates.iter().zip(reports).zip(set.pareto_flags()).enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{:.6},{:.6},{},{},{},{},{}",
            c.step, c.clean_acc, c.robustness, r.macs, r.cycles, r.dsp, r.bram, p
        );
    }
    Ok(s)
}

/// Per-step pruning trace.
pub fn emit_trace_csv(trace: &[PruneStep]) -> String {
    let mut s = String::from(
        "step,layer,channel,gain,saliency,priority,robustness,clean_acc,cost,macs,cycles,dsp,bram,within_tolerance,saved\n",
    );
    for t in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{},{}",
            t.step,
            t.channel.layer,
            t.channel.channel,
            t.gain,
            t.saliency,
            t.priority,
            t.robustness,
            t.clean_acc,
            t.cost,
            t.macs,
            t.cycles,
            t.dsp,
            t.bram,
            t.within_tolerance,
            t.saved
        );
    }
    s
}
