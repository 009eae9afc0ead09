use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ChannelId, LayerParams, Mode, ModelGraph};
use crate::tensor::{softmax_xent, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SaliencyKind {
    L1,
    L2,
    ActMean,
    Taylor,
    Random,
}

impl SaliencyKind {
    pub const ALL: [SaliencyKind; 5] = [
        SaliencyKind::L1,
        SaliencyKind::L2,
        SaliencyKind::ActMean,
        SaliencyKind::Taylor,
        SaliencyKind::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SaliencyKind::L1 => "l1",
            SaliencyKind::L2 => "l2",
            SaliencyKind::ActMean => "actmean",
            SaliencyKind::Taylor => "taylor",
            SaliencyKind::Random => "random",
        }
    }

    pub fn needs_data(&self) -> bool {
        matches!(self, SaliencyKind::ActMean | SaliencyKind::Taylor)
    }
}

impl std::str::FromStr for SaliencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SaliencyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!("unknown saliency `{s}` (l1|l2|actmean|taylor|random)"))
            })
    }
}

impl std::fmt::Display for SaliencyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn weight_rows(graph: &ModelGraph, layer: usize) -> Option<(&Tensor, usize)> {
    match &graph.params()[layer] {
        LayerParams::Conv { weight, .. } | LayerParams::Fc { weight, .. } => {
            Some((weight, weight.shape()[0]))
        }
        _ => None,
    }
}

/// Index of the next layer with parameters after `layer`: the consumer whose
/// input holds channel `c` of `layer` as a contiguous block.
fn consumer_of(graph: &ModelGraph, layer: usize) -> Result<usize> {
    graph
        .layers()
        .iter()
        .enumerate()
        .skip(layer + 1)
        .find(|(_, l)| l.is_parametric())
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Model(format!("layer {layer} has no downstream consumer")))
}

/// Per-channel importance of every channel in the prunable layers.
///
/// Activation-based kinds look at `z_{l,c}`: the channel's feature map as it
/// enters the next conv/fc layer, i.e. after any BN, ReLU and pooling. Taylor
/// sums `∂L/∂z·z` over positions per sample, averages over the batch and
/// takes the magnitude.
pub fn saliency_scores(
    graph: &ModelGraph,
    batch: &Dataset,
    kind: SaliencyKind,
    seed: u64,
) -> Result<BTreeMap<ChannelId, f64>> {
    let arch = graph.arch();
    let layers: Vec<usize> = (0..arch.layers.len()).filter(|l| arch.is_prunable_layer(*l)).collect();
    let mut out = BTreeMap::new();
    match kind {
        SaliencyKind::L1 | SaliencyKind::L2 => {
            for &l in &layers {
                let (w, rows) = weight_rows(graph, l).expect("prunable layers own weights");
                let per = w.len() / rows;
                for (c, row) in w.data().chunks(per).enumerate() {
                    let s = match kind {
                        SaliencyKind::L1 => row.iter().map(|v| v.abs() as f64).sum::<f64>(),
                        _ => row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt(),
                    };
                    out.insert(ChannelId::new(l, c), s);
                }
            }
        }
        SaliencyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &l in &layers {
                for c in 0..arch.layers[l].out_channels().unwrap() {
                    out.insert(ChannelId::new(l, c), rng.gen::<f64>());
                }
            }
        }
        SaliencyKind::ActMean | SaliencyKind::Taylor => {
            if batch.is_empty() {
                return Err(Error::Invalid(format!("{kind} saliency needs a non-empty batch")));
            }
            let (logits, cache) = graph.forward_batch(&batch.images, Mode::Eval)?;
            let grads = if kind == SaliencyKind::Taylor {
                let gl = logits
                    .iter()
                    .zip(&batch.labels)
                    .map(|(z, y)| Ok(softmax_xent(z, *y)?.1))
                    .collect::<Result<Vec<_>>>()?;
                Some(graph.backward(&cache, &gl)?)
            } else {
                None
            };
            let n = batch.len() as f64;
            for &l in &layers {
                let channels = arch.layers[l].out_channels().unwrap();
                let j = consumer_of(graph, l)?;
                let mut acc = vec![0.0f64; channels];
                for (s, z) in cache.inputs[j].iter().enumerate() {
                    let block = z.len() / channels;
                    for (c, a) in acc.iter_mut().enumerate() {
                        let zs = &z.data()[c * block..(c + 1) * block];
                        *a += match &grads {
                            None => zs.iter().map(|v| v.abs() as f64).sum::<f64>() / block as f64,
                            Some(b) => {
                                let gs = &b.layer_inputs[j][s].data()[c * block..(c + 1) * block];
                                zs.iter().zip(gs).map(|(z, g)| *z as f64 * *g as f64).sum::<f64>()
                            }
                        };
                    }
                }
                for (c, a) in acc.into_iter().enumerate() {
                    out.insert(ChannelId::new(l, c), (a / n).abs());
                }
            }
        }
    }
    Ok(out)
}
