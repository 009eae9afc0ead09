use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_out_dim, pool_out_dim};

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "yes")]
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub k: usize,
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcSpec {
    pub out: usize,
    #[serde(default = "yes")]
    pub bias: bool,
}

/// One stage of a sequential network. Input channel counts are inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSpec {
    Conv(ConvSpec),
    #[serde(rename = "bn")]
    BatchNorm,
    Relu,
    MaxPool(PoolSpec),
    Flatten,
    Fc(FcSpec),
}

impl LayerSpec {
    pub fn conv(out: usize, k: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv(ConvSpec {
            out,
            k,
            stride,
            pad,
            bias: true,
        })
    }

    pub fn maxpool(k: usize, stride: usize) -> Self {
        LayerSpec::MaxPool(PoolSpec { k, stride, pad: 0 })
    }

    pub fn fc(out: usize) -> Self {
        LayerSpec::Fc(FcSpec { out, bias: true })
    }

    /// Conv and FC layers own output channels.
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Conv(_) | LayerSpec::Fc(_))
    }

    pub fn out_channels(&self) -> Option<usize> {
        match self {
            LayerSpec::Conv(c) => Some(c.out),
            LayerSpec::Fc(f) => Some(f.out),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Fc(_) => "fc",
        }
    }
}

/// `C×H×W` extents; vectors are `N×1×1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Dims { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn as_shape(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Dims,
    pub output: Dims,
}

/// A structural reference to one output channel of a Conv or FC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId {
    pub layer: usize,
    pub channel: usize,
}

impl ChannelId {
    pub fn new(layer: usize, channel: usize) -> Self {
        ChannelId { layer, channel }
    }
}

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.layer, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

/// Layer list plus input extents: everything about a network except its
/// parameter values. Cost models and structural pruning work on this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: Dims,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input: Dims, classes: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Architecture {
            input,
            classes,
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.input.numel() == 0 {
            return bad(format!("input dims {:?} must be positive", self.input.as_shape()));
        }
        match self.layers.first() {
            Some(LayerSpec::Conv(_)) => {}
            Some(other) => return bad(format!("first layer must be conv, found {}", other.kind())),
            None => return bad("model has no layers".into()),
        }
        match self.layers.last() {
            Some(LayerSpec::Fc(f)) if f.out == self.classes => {}
            Some(LayerSpec::Fc(f)) => {
                return bad(format!(
                    "final fc has {} outputs but the model has {} classes",
                    f.out, self.classes
                ))
            }
            _ => return bad("last layer must be fc".into()),
        }
        let flattens: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Flatten))
            .map(|(i, _)| i)
            .collect();
        let first_fc = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Fc(_)))
            .unwrap();
        if flattens.len() != 1 || flattens[0] > first_fc {
            return bad("exactly one flatten must precede the first fc".into());
        }
        let flat = flattens[0];
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                LayerSpec::Conv(c) if c.out == 0 || c.k == 0 || c.stride == 0 => {
                    return bad(format!("layer {i}: conv needs positive out, k, stride"))
                }
                LayerSpec::Fc(f) if f.out == 0 => return bad(format!("layer {i}: fc needs out > 0")),
                LayerSpec::MaxPool(p) if p.k == 0 || p.stride == 0 => {
                    return bad(format!("layer {i}: maxpool needs positive k and stride"))
                }
                LayerSpec::Conv(_) | LayerSpec::MaxPool(_) if i > flat => {
                    return bad(format!("layer {i}: {} after flatten", l.kind()))
                }
                LayerSpec::Fc(_) if i < flat => return bad(format!("layer {i}: fc before flatten")),
                _ => {}
            }
        }
        self.shapes().map(|_| ())
    }

    /// Per-layer input/output extents.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = match layer {
                LayerSpec::Conv(c) => {
                    let h = conv_out_dim(cur.h, c.k, c.stride, c.pad);
                    let w = conv_out_dim(cur.w, c.k, c.stride, c.pad);
                    match h.zip(w) {
                        Some((h, w)) => Dims::new(c.out, h, w),
                        None => {
                            return Err(Error::Model(format!(
                                "layer {i}: conv k={} does not fit {}×{} input (pad {})",
                                c.k, cur.h, cur.w, c.pad
                            )))
                        }
                    }
                }
                LayerSpec::MaxPool(p) => {
                    let h = pool_out_dim(cur.h, p.k, p.stride, p.pad);
                    let w = pool_out_dim(cur.w, p.k, p.stride, p.pad);
                    match h.zip(w) {
                        Some((h, w)) => Dims::new(cur.c, h, w),
                        None => {
                            return Err(Error::Model(format!(
                                "layer {i}: maxpool k={} does not fit {}×{} input (pad {})",
                                p.k, cur.h, cur.w, p.pad
                            )))
                        }
                    }
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => cur,
                LayerSpec::Flatten => Dims::new(cur.numel(), 1, 1),
                LayerSpec::Fc(f) => Dims::new(f.out, 1, 1),
            };
            out.push(LayerShape {
                input: cur,
                output: next,
            });
            cur = next;
        }
        Ok(out)
    }

    /// Multiply-accumulate count per layer: `C_in·C_out·K²·H_out·W_out` for
    /// convolutions, `in·out` for fully connected layers, zero otherwise.
    pub fn count_macs(&self) -> Result<MacReport> {
        let shapes = self.shapes()?;
        let per_layer: Vec<u64> = self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| match l {
                LayerSpec::Conv(c) => {
                    (s.input.c * c.out * c.k * c.k * s.output.h * s.output.w) as u64
                }
                LayerSpec::Fc(f) => (s.input.numel() * f.out) as u64,
                _ => 0,
            })
            .collect();
        let total = per_layer.iter().sum();
        Ok(MacReport { per_layer, total })
    }

    /// Index of the final classifier, which is never prunable.
    pub fn classifier_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn is_prunable_layer(&self, layer: usize) -> bool {
        layer < self.classifier_index()
            && self.layers.get(layer).is_some_and(|l| l.is_parametric())
    }

    pub fn check_prunable(&self, id: ChannelId) -> Result<()> {
        let reject = |reason: &str| {
            Err(Error::Prune {
                layer: id.layer,
                channel: id.channel,
                reason: reason.to_string(),
            })
        };
        let Some(layer) = self.layers.get(id.layer) else {
            return reject("no such layer");
        };
        let Some(count) = layer.out_channels() else {
            return reject("only conv and fc layers own channels");
        };
        if id.layer == self.classifier_index() {
            return reject("the final classifier is not prunable");
        }
        if id.channel >= count {
            return reject("channel index out of range");
        }
        if count < 2 {
            return reject("a layer must keep at least one channel");
        }
        Ok(())
    }

    /// All channels that may currently be removed, in `(layer, channel)` order.
    pub fn prunable_channels(&self) -> Vec<ChannelId> {
        (0..self.layers.len())
            .filter(|l| self.is_prunable_layer(*l))
            .flat_map(|l| {
                let n = self.layers[l].out_channels().unwrap();
                let ids = if n >= 2 { 0..n } else { 0..0 };
                ids.map(move |c| ChannelId::new(l, c))
            })
            .collect()
    }

    /// Structural effect of removing one channel of `layer`: the layer loses
    /// an output and its consumer's inferred input shrinks with it. Which
    /// channel is removed does not matter for dimensions.
    pub fn without_channel(&self, id: ChannelId) -> Result<Architecture> {
        self.check_prunable(id)?;
        let mut next = self.clone();
        match &mut next.layers[id.layer] {
            LayerSpec::Conv(c) => c.out -= 1,
            LayerSpec::Fc(f) => f.out -= 1,
            _ => unreachable!(),
        }
        Ok(next)
    }

    /// Channel counts of the prunable layers, keyed by layer index.
    pub fn channel_counts(&self) -> Vec<(usize, usize)> {
        (0..self.layers.len())
            .filter(|l| self.is_prunable_layer(*l))
            .map(|l| (l, self.layers[l].out_channels().unwrap()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple() -> Architecture {
        Architecture::new(
            Dims::new(1, 16, 16),
            10,
            vec![
                LayerSpec::conv(4, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::maxpool(2, 2),
                LayerSpec::Flatten,
                LayerSpec::fc(10),
            ],
        )
        .unwrap()
    }

    #[test]
    fn shape_inference_examples() {
        let s = simple().shapes().unwrap();
        assert_eq!(s[0].output, Dims::new(4, 14, 14));
        assert_eq!(s[2].output, Dims::new(4, 7, 7));
        assert_eq!(s[3].output, Dims::new(196, 1, 1));
        assert_eq!(s[4].input.numel(), 196);
    }

    #[test]
    fn mac_formula_examples() {
        let arch = Architecture::new(
            Dims::new(2, 8, 8),
            3,
            vec![LayerSpec::conv(4, 3, 1, 0), LayerSpec::Flatten, LayerSpec::fc(3)],
        )
        .unwrap();
        let m = arch.count_macs().unwrap();
        assert_eq!(m.per_layer[0], 2 * 4 * 9 * 36);
        assert_eq!(m.per_layer[0], 2592);
        assert_eq!(simple().count_macs().unwrap().per_layer[4], 1960);
    }

    #[test]
    fn structural_invariants_are_enforced() {
        let d = Dims::new(1, 8, 8);
        let cases = [
            vec![LayerSpec::Relu, LayerSpec::conv(2, 3, 1, 0), LayerSpec::Flatten, LayerSpec::fc(2)],
            vec![LayerSpec::conv(2, 3, 1, 0), LayerSpec::fc(2)],
            vec![LayerSpec::conv(2, 3, 1, 0), LayerSpec::Flatten, LayerSpec::fc(3)],
            vec![LayerSpec::conv(2, 3, 1, 0), LayerSpec::Flatten, LayerSpec::Flatten, LayerSpec::fc(2)],
            vec![LayerSpec::conv(2, 9, 1, 0), LayerSpec::Flatten, LayerSpec::fc(2)],
            vec![LayerSpec::conv(2, 3, 1, 0), LayerSpec::Flatten, LayerSpec::fc(2), LayerSpec::Relu],
        ];
        for layers in cases {
            assert!(Architecture::new(d, 2, layers.clone()).is_err(), "{layers:?}");
        }
    }

    #[test]
    fn classifier_and_last_channel_are_protected() {
        let arch = Architecture::new(
            Dims::new(1, 6, 6),
            2,
            vec![LayerSpec::conv(1, 3, 1, 0), LayerSpec::Flatten, LayerSpec::fc(2)],
        )
        .unwrap();
        assert!(arch.check_prunable(ChannelId::new(2, 0)).is_err());
        assert!(arch.check_prunable(ChannelId::new(0, 0)).is_err());
        assert!(arch.prunable_channels().is_empty());
    }
}
