use super::{calibrate_activations, quantize_weights, round_half_even, ActQuant};
use crate::blob::{self, BlobData, BlobRecord, Reader};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, Dims, LayerParams, LayerSpec, ModelDesc, ModelGraph, PoolSpec};
use crate::tensor::{fuse_batchnorm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Conv { k: usize, stride: usize, pad: usize },
    Fc,
}

/// One conv/fc layer together with the ReLU and pooling layers that follow
/// it up to the next conv/fc. Pooling runs on the accumulators, then the
/// result is requantized; ReLU is a clamp at the output zero point.
#[derive(Debug, Clone, PartialEq)]
pub struct QUnit {
    /// Index in the fused architecture.
    pub layer: usize,
    pub kind: UnitKind,
    pub input: Dims,
    /// Extents of the accumulator map, before pooling.
    pub acc: Dims,
    pub output: Dims,
    pub weight: Vec<i8>,
    pub weight_dims: Vec<usize>,
    pub bias: Vec<i32>,
    pub weight_scale: f32,
    pub in_q: ActQuant,
    /// `None` for the classifier, whose accumulators are dequantized.
    pub out_q: Option<ActQuant>,
    pub relu: bool,
    pub pools: Vec<PoolSpec>,
}

impl QUnit {
    /// `M = s_in·s_w/s_out`.
    pub fn multiplier(&self) -> Option<f64> {
        self.out_q
            .map(|o| self.in_q.scale as f64 * self.weight_scale as f64 / o.scale as f64)
    }

    /// Scale of one accumulator unit, `s_in·s_w`.
    pub fn acc_scale(&self) -> f64 {
        self.in_q.scale as f64 * self.weight_scale as f64
    }

    pub fn out_channels(&self) -> usize {
        self.acc.c
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            UnitKind::Conv { .. } => self.input.c,
            UnitKind::Fc => self.input.numel(),
        }
    }
}

/// A BN-free network with INT8 weights, INT32 biases and per-layer
/// activation quantizers.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    pub name: String,
    pub arch: Architecture,
    pub input_q: ActQuant,
    pub units: Vec<QUnit>,
}

struct UnitShape {
    layer: usize,
    kind: UnitKind,
    input: Dims,
    acc: Dims,
    output: Dims,
    relu: bool,
    pools: Vec<PoolSpec>,
}

fn unit_shapes(arch: &Architecture) -> Result<Vec<UnitShape>> {
    let shapes = arch.shapes()?;
    let mut units: Vec<UnitShape> = Vec::new();
    for (i, (layer, s)) in arch.layers.iter().zip(&shapes).enumerate() {
        match layer {
            LayerSpec::Conv(c) => units.push(UnitShape {
                layer: i,
                kind: UnitKind::Conv { k: c.k, stride: c.stride, pad: c.pad },
                input: s.input,
                acc: s.output,
                output: s.output,
                relu: false,
                pools: Vec::new(),
            }),
            LayerSpec::Fc(_) => units.push(UnitShape {
                layer: i,
                kind: UnitKind::Fc,
                input: s.input,
                acc: s.output,
                output: s.output,
                relu: false,
                pools: Vec::new(),
            }),
            LayerSpec::Relu => units.last_mut().expect("first layer is conv").relu = true,
            LayerSpec::MaxPool(p) => {
                let u = units.last_mut().expect("first layer is conv");
                u.pools.push(*p);
                u.output = s.output;
            }
            LayerSpec::Flatten => {}
            LayerSpec::BatchNorm => {
                return Err(Error::Model(format!("layer {i}: quantized models are BN-free")))
            }
        }
    }
    Ok(units)
}

/// Folds every batch norm into the conv/fc directly before it. Returns the
/// fused architecture, per-layer float weights/biases, and for each fused
/// layer the index it had in the original graph.
fn fuse(graph: &ModelGraph) -> Result<(Architecture, Vec<Option<(Tensor, Tensor)>>, Vec<usize>)> {
    let layers = graph.layers();
    let params = graph.params();
    let mut fused_layers = Vec::new();
    let mut fused_params = Vec::new();
    let mut origin = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        match (layer, &params[i]) {
            (LayerSpec::BatchNorm, _) => {
                if !layers.get(i.wrapping_sub(1)).is_some_and(|l| l.is_parametric()) {
                    return Err(Error::Model(format!(
                        "layer {i}: batch norm must directly follow a conv or fc layer to be fused"
                    )));
                }
            }
            (LayerSpec::Conv(_), LayerParams::Conv { weight, bias })
            | (LayerSpec::Fc(_), LayerParams::Fc { weight, bias }) => {
                let (w, b) = match &params.get(i + 1) {
                    Some(LayerParams::BatchNorm(bn)) => fuse_batchnorm(weight, bias.as_ref(), bn)?,
                    _ => {
                        let out = weight.shape()[0];
                        let b = bias.clone().unwrap_or_else(|| Tensor::zeros(&[out]));
                        (weight.clone(), b)
                    }
                };
                let spec = match *layer {
                    LayerSpec::Conv(mut c) => {
                        c.bias = true;
                        LayerSpec::Conv(c)
                    }
                    LayerSpec::Fc(mut f) => {
                        f.bias = true;
                        LayerSpec::Fc(f)
                    }
                    _ => unreachable!(),
                };
                fused_layers.push(spec);
                fused_params.push(Some((w, b)));
                origin.push(i);
            }
            _ => {
                fused_layers.push(*layer);
                fused_params.push(None);
                origin.push(i);
            }
        }
    }
    let arch = Architecture::new(graph.input_dims(), graph.classes(), fused_layers)?;
    Ok((arch, fused_params, origin))
}

/// Largest `C_in·K²` for which `i32` accumulation cannot overflow with
/// `|w| ≤ 127` and `|x - zp| ≤ 255`.
pub const MAX_REDUCTION: usize = 1 << 15;

/// BN fusion, activation calibration, then weight/bias quantization.
pub fn quantize_model(graph: &ModelGraph, calib: &Dataset) -> Result<QuantModel> {
    if !graph.all_finite() {
        return Err(Error::NonFinite("model parameters"));
    }
    let cal = calibrate_activations(graph, calib)?;
    let (arch, params, origin) = fuse(graph)?;
    let input_q = cal.input_quant()?;
    let shapes = unit_shapes(&arch)?;
    let mut units = Vec::with_capacity(shapes.len());
    let mut in_q = input_q;
    for (n, s) in shapes.iter().enumerate() {
        let (w, b) = params[s.layer].as_ref().expect("units are conv/fc");
        let reduction = w.len() / w.shape()[0];
        if reduction > MAX_REDUCTION {
            return Err(Error::Model(format!(
                "layer {}: reduction length {reduction} exceeds {MAX_REDUCTION}; i32 accumulators could overflow",
                s.layer
            )));
        }
        let (weight, weight_scale) = quantize_weights(w.data())?;
        let acc_scale = in_q.scale as f64 * weight_scale as f64;
        let bias = b
            .data()
            .iter()
            .map(|v| round_half_even(*v as f64 / acc_scale).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
            .collect();
        let out_q = match shapes.get(n + 1) {
            Some(next) => Some(cal.quant_at(origin[next.layer])?),
            None => None,
        };
        units.push(QUnit {
            layer: s.layer,
            kind: s.kind,
            input: s.input,
            acc: s.acc,
            output: s.output,
            weight,
            weight_dims: w.shape().to_vec(),
            bias,
            weight_scale,
            in_q,
            out_q,
            relu: s.relu,
            pools: s.pools.clone(),
        });
        if let Some(o) = out_q {
            in_q = o;
        }
    }
    Ok(QuantModel {
        name: graph.name.clone(),
        arch,
        input_q,
        units,
    })
}

pub const QMODEL_MAGIC: &[u8; 4] = b"ARMQ";
pub const QMODEL_VERSION: u32 = 1;

fn scalar_f32(name: String, v: f32) -> BlobRecord {
    BlobRecord::new(name, &[1], BlobData::F32(vec![v]))
}

fn scalar_i32(name: String, v: i32) -> BlobRecord {
    BlobRecord::new(name, &[1], BlobData::I32(vec![v]))
}

fn one<T: Copy>(v: &[T], name: &str) -> Result<T> {
    match v {
        [x] => Ok(*x),
        _ => Err(Error::format("quantized model", format!("{name} must hold one value"))),
    }
}

impl QuantModel {
    /// Parameter records in natural layout (`O×I×K×K` weights).
    pub fn records(&self) -> Vec<BlobRecord> {
        let mut recs = vec![
            scalar_f32("input.scale".into(), self.input_q.scale),
            scalar_i32("input.zero_point".into(), self.input_q.zero_point),
        ];
        for u in &self.units {
            let i = u.layer;
            recs.push(BlobRecord::new(format!("layer{i}.weight"), &u.weight_dims, BlobData::I8(u.weight.clone())));
            recs.push(BlobRecord::new(format!("layer{i}.bias"), &[u.bias.len()], BlobData::I32(u.bias.clone())));
            recs.push(scalar_f32(format!("layer{i}.weight_scale"), u.weight_scale));
            if let Some(o) = u.out_q {
                recs.push(scalar_f32(format!("layer{i}.out_scale"), o.scale));
                recs.push(scalar_i32(format!("layer{i}.out_zero_point"), o.zero_point));
            }
        }
        recs
    }

    /// Magic `ARMQ`, `u32` version, `u32` length + YAML of the fused
    /// architecture, then the parameter blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = ModelDesc {
            name: self.name.clone(),
            input: self.arch.input.as_shape(),
            classes: self.arch.classes,
            seed: None,
            layers: self.arch.layers.clone(),
        }
        .to_yaml();
        let mut out = Vec::new();
        out.extend_from_slice(QMODEL_MAGIC);
        out.extend_from_slice(&QMODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend(blob::encode(&self.records()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "quantized model");
        r.expect_magic(QMODEL_MAGIC)?;
        let version = r.u32()?;
        if version != QMODEL_VERSION {
            return Err(Error::format("quantized model", format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::format("quantized model", e.to_string()))?;
        let desc = ModelDesc::parse(text)?;
        let arch = desc.architecture()?;
        let recs = blob::decode(r.rest())?;
        let input_q = ActQuant {
            scale: one(blob::find(&recs, "input.scale")?.as_f32()?, "input.scale")?,
            zero_point: one(blob::find(&recs, "input.zero_point")?.as_i32()?, "input.zero_point")?,
        };
        input_q.validate()?;
        let shapes = unit_shapes(&arch)?;
        let mut units = Vec::with_capacity(shapes.len());
        let mut in_q = input_q;
        let last = shapes.len() - 1;
        for (n, s) in shapes.into_iter().enumerate() {
            let i = s.layer;
            let w = blob::find(&recs, &format!("layer{i}.weight"))?;
            let expect_w = match s.kind {
                UnitKind::Conv { k, .. } => vec![s.acc.c, s.input.c, k, k],
                UnitKind::Fc => vec![s.acc.c, s.input.numel()],
            };
            if w.dims_usize() != expect_w {
                return Err(Error::format(
                    "quantized model",
                    format!("layer{i}.weight dims {:?}, expected {expect_w:?}", w.dims_usize()),
                ));
            }
            let bias = blob::find(&recs, &format!("layer{i}.bias"))?.as_i32()?.to_vec();
            if bias.len() != s.acc.c {
                return Err(Error::format("quantized model", format!("layer{i}.bias length {}", bias.len())));
            }
            let weight_scale = one(blob::find(&recs, &format!("layer{i}.weight_scale"))?.as_f32()?, "weight_scale")?;
            let out_q = if n < last {
                let q = ActQuant {
                    scale: one(blob::find(&recs, &format!("layer{i}.out_scale"))?.as_f32()?, "out_scale")?,
                    zero_point: one(
                        blob::find(&recs, &format!("layer{i}.out_zero_point"))?.as_i32()?,
                        "out_zero_point",
                    )?,
                };
                q.validate()?;
                Some(q)
            } else {
                None
            };
            units.push(QUnit {
                layer: i,
                kind: s.kind,
                input: s.input,
                acc: s.acc,
                output: s.output,
                weight: w.as_i8()?.to_vec(),
                weight_dims: expect_w,
                bias,
                weight_scale,
                in_q,
                out_q,
                relu: s.relu,
                pools: s.pools,
            });
            if let Some(o) = out_q {
                in_q = o;
            }
        }
        Ok(QuantModel {
            name: desc.name,
            arch,
            input_q,
            units,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
