use super::arch::{ChannelId, LayerSpec};
use super::graph::{LayerParams, ModelGraph};
use crate::error::Result;
use crate::tensor::Tensor;

/// Drops index `c` along the leading axis.
fn drop_leading(t: &Tensor, c: usize) -> Tensor {
    let shape = t.shape();
    let per: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(t.len() - per);
    data.extend_from_slice(&t.data()[..c * per]);
    data.extend_from_slice(&t.data()[(c + 1) * per..]);
    let mut s = shape.to_vec();
    s[0] -= 1;
    Tensor::new(s, data).unwrap()
}

/// Drops the contiguous block `[start, start+len)` along the second axis.
fn drop_second(t: &Tensor, start: usize, len: usize) -> Tensor {
    let shape = t.shape();
    let inner: usize = shape[2..].iter().product();
    let row = shape[1] * inner;
    let mut data = Vec::with_capacity(t.len() - shape[0] * len * inner);
    for chunk in t.data().chunks(row) {
        data.extend_from_slice(&chunk[..start * inner]);
        data.extend_from_slice(&chunk[(start + len) * inner..]);
    }
    let mut s = shape.to_vec();
    s[1] -= len;
    Tensor::new(s, data).unwrap()
}

fn drop_vec(v: &mut Vec<f32>, c: usize) {
    v.remove(c);
}

impl ModelGraph {
    /// Removes output channel `id.channel` of a Conv/FC layer together with
    /// its batch-norm parameters and the matching input slice of the next
    /// Conv/FC consumer. ReLU and max-pool layers in between are transparent;
    /// across a flatten the consumer loses the channel's `H·W` contiguous
    /// columns.
    pub fn prune_channel(&self, id: ChannelId) -> Result<ModelGraph> {
        let arch = self.arch().without_channel(id)?;
        let c = id.channel;
        let shapes = self.shapes();
        let mut params = self.params().to_vec();
        match &mut params[id.layer] {
            LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                *weight = drop_leading(weight, c);
                if let Some(b) = bias {
                    *b = drop_leading(b, c);
                }
            }
            _ => unreachable!("checked by without_channel"),
        }
        let mut block = 1;
        for j in id.layer + 1..params.len() {
            match (&self.layers()[j], &mut params[j]) {
                (LayerSpec::BatchNorm, LayerParams::BatchNorm(bn)) => {
                    drop_vec(&mut bn.gamma, c);
                    drop_vec(&mut bn.beta, c);
                    drop_vec(&mut bn.running_mean, c);
                    drop_vec(&mut bn.running_var, c);
                }
                (LayerSpec::Flatten, _) => {
                    let d = shapes[j].input;
                    block = d.h * d.w;
                }
                (LayerSpec::Conv(_), LayerParams::Conv { weight, .. })
                | (LayerSpec::Fc(_), LayerParams::Fc { weight, .. }) => {
                    *weight = drop_second(weight, c * block, block);
                    break;
                }
                _ => {}
            }
        }
        ModelGraph::from_parts(&self.name, self.seed, arch, params)
    }
}
