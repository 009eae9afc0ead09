use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Dims, LayerSpec};
use super::graph::{LayerParams, ModelGraph};
use crate::blob::{self, BlobData, BlobRecord, Reader};
use crate::error::{Error, Result};
use crate::tensor::{BnParams, Tensor};

/// Textual model description:
///
/// ```yaml
/// name: desk
/// input: [1, 16, 16]
/// classes: 4
/// layers:
///   - conv: {out: 8, k: 3, stride: 1, pad: 0}
///   - relu
///   - maxpool: {k: 2, stride: 2}
///   - flatten
///   - fc: {out: 4}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDesc {
    pub name: String,
    pub input: [usize; 3],
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(with = "serde_yaml::with::singleton_map_recursive")]
    pub layers: Vec<LayerSpec>,
}

const BRANCHING: &[&str] = &[
    "branch", "branches", "concat", "add", "residual", "skip", "parallel", "merge", "split",
    "attention", "streams",
];

impl ModelDesc {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_yaml::Value = serde_yaml::from_str(text)?;
        if let Some(layers) = value.get("layers").and_then(|l| l.as_sequence()) {
            for (i, entry) in layers.iter().enumerate() {
                let key = match entry {
                    serde_yaml::Value::Mapping(m) => m.keys().next().and_then(|k| k.as_str()),
                    serde_yaml::Value::String(s) => Some(s.as_str()),
                    _ => None,
                };
                if let Some(k) = key.filter(|k| BRANCHING.contains(k)) {
                    return Err(Error::Model(format!(
                        "layer {i}: `{k}` implies a branching topology; only sequential chains are supported"
                    )));
                }
            }
        }
        Ok(serde_yaml::from_value(value)?)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("model description serializes")
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let [c, h, w] = self.input;
        Architecture::new(Dims::new(c, h, w), self.classes, self.layers.clone())
    }

    pub fn of(graph: &ModelGraph) -> Self {
        ModelDesc {
            name: graph.name.clone(),
            input: graph.input_dims().as_shape(),
            classes: graph.classes(),
            seed: Some(graph.seed),
            layers: graph.layers().to_vec(),
        }
    }
}

impl ModelGraph {
    /// Parses a description and initializes parameters from `seed`, or from
    /// the description's own seed when present.
    pub fn from_description(text: &str, seed: u64) -> Result<Self> {
        let desc = ModelDesc::parse(text)?;
        let arch = desc.architecture()?;
        ModelGraph::init(&desc.name, arch, desc.seed.unwrap_or(seed))
    }

    pub fn description(&self) -> ModelDesc {
        ModelDesc::of(self)
    }
}

pub const GRAPH_MAGIC: &[u8; 4] = b"ARMG";
pub const GRAPH_VERSION: u32 = 1;

fn tensor_record(name: String, t: &Tensor) -> BlobRecord {
    BlobRecord::new(name, t.shape(), BlobData::F32(t.data().to_vec()))
}

fn vec_record(name: String, v: &[f32]) -> BlobRecord {
    BlobRecord::new(name, &[v.len()], BlobData::F32(v.to_vec()))
}

pub(crate) fn param_records(graph: &ModelGraph) -> Vec<BlobRecord> {
    let mut recs = Vec::new();
    for (i, p) in graph.params().iter().enumerate() {
        match p {
            LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                recs.push(tensor_record(format!("layer{i}.weight"), weight));
                if let Some(b) = bias {
                    recs.push(tensor_record(format!("layer{i}.bias"), b));
                }
            }
            LayerParams::BatchNorm(bn) => {
                recs.push(vec_record(format!("layer{i}.gamma"), &bn.gamma));
                recs.push(vec_record(format!("layer{i}.beta"), &bn.beta));
                recs.push(vec_record(format!("layer{i}.running_mean"), &bn.running_mean));
                recs.push(vec_record(format!("layer{i}.running_var"), &bn.running_var));
                recs.push(vec_record(format!("layer{i}.eps_momentum"), &[bn.eps, bn.momentum]));
            }
            LayerParams::None => {}
        }
    }
    recs
}

fn read_tensor(recs: &[BlobRecord], name: &str) -> Result<Tensor> {
    let r = blob::find(recs, name)?;
    Tensor::new(r.dims_usize(), r.as_f32()?.to_vec())
}

fn read_vec(recs: &[BlobRecord], name: &str) -> Result<Vec<f32>> {
    Ok(blob::find(recs, name)?.as_f32()?.to_vec())
}

/// Writes a description header followed by the parameter blob:
/// magic `ARMG`, `u32` version, `u32` description length, UTF-8 YAML, blob.
pub fn serialize(graph: &ModelGraph) -> Vec<u8> {
    let desc = graph.description().to_yaml();
    let mut out = Vec::new();
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend(blob::encode(&param_records(graph)));
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = Reader::new(bytes, "model file");
    r.expect_magic(GRAPH_MAGIC)?;
    let version = r.u32()?;
    if version != GRAPH_VERSION {
        return Err(Error::format("model file", format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::format("model file", e.to_string()))?;
    let desc = ModelDesc::parse(text)?;
    let arch = desc.architecture()?;
    let recs = blob::decode(r.rest())?;
    let mut params = Vec::with_capacity(arch.layers.len());
    for (i, layer) in arch.layers.iter().enumerate() {
        let p = match layer {
            LayerSpec::Conv(c) => LayerParams::Conv {
                weight: read_tensor(&recs, &format!("layer{i}.weight"))?,
                bias: c.bias.then(|| read_tensor(&recs, &format!("layer{i}.bias"))).transpose()?,
            },
            LayerSpec::Fc(f) => LayerParams::Fc {
                weight: read_tensor(&recs, &format!("layer{i}.weight"))?,
                bias: f.bias.then(|| read_tensor(&recs, &format!("layer{i}.bias"))).transpose()?,
            },
            LayerSpec::BatchNorm => {
                let em = read_vec(&recs, &format!("layer{i}.eps_momentum"))?;
                if em.len() != 2 {
                    return Err(Error::format("model file", "eps_momentum must hold two values"));
                }
                LayerParams::BatchNorm(BnParams {
                    gamma: read_vec(&recs, &format!("layer{i}.gamma"))?,
                    beta: read_vec(&recs, &format!("layer{i}.beta"))?,
                    running_mean: read_vec(&recs, &format!("layer{i}.running_mean"))?,
                    running_var: read_vec(&recs, &format!("layer{i}.running_var"))?,
                    eps: em[0],
                    momentum: em[1],
                })
            }
            _ => LayerParams::None,
        };
        params.push(p);
    }
    ModelGraph::from_parts(&desc.name, desc.seed.unwrap_or(0), arch, params)
}

impl ModelGraph {
    pub fn to_bytes(&self) -> Vec<u8> {
        serialize(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        deserialize(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
