use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::{Architecture, Dims, LayerShape, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm_bwd, batchnorm_fwd, conv2d_bwd, conv2d_fwd, fc_bwd, fc_fwd, maxpool_bwd,
    maxpool_fwd, BnCache, BnMode, BnParams, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    Conv { weight: Tensor, bias: Option<Tensor> },
    BatchNorm(BnParams),
    Fc { weight: Tensor, bias: Option<Tensor> },
}

/// A sequential CNN: architecture, parameters and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub seed: u64,
    arch: Architecture,
    shapes: Vec<LayerShape>,
    params: Vec<LayerParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub enum CacheExtra {
    None,
    Argmax(Vec<Vec<usize>>),
    BatchNorm(BnCache),
}

/// Per-layer stored forward intermediates: the inputs each layer saw (one
/// tensor per batch member) and layer-specific state.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub inputs: Vec<Vec<Tensor>>,
    pub extras: Vec<CacheExtra>,
    pub mode: Mode,
}

impl LayerCache {
    pub fn batch_len(&self) -> usize {
        self.inputs.first().map_or(0, |v| v.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    None,
    Conv { weight: Tensor, bias: Option<Tensor> },
    BatchNorm { gamma: Vec<f32>, beta: Vec<f32> },
    Fc { weight: Tensor, bias: Option<Tensor> },
}

#[derive(Debug, Clone)]
pub struct Backward {
    /// Parameter gradients summed over the batch.
    pub params: Vec<LayerGrad>,
    /// Gradient of the loss with respect to every layer's input, per sample.
    /// Entry 0 is the gradient with respect to the images.
    pub layer_inputs: Vec<Vec<Tensor>>,
}

impl Backward {
    pub fn input_grads(&self) -> &[Tensor] {
        &self.layer_inputs[0]
    }
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl ModelGraph {
    /// Freshly initialized parameters (He-uniform weights, zero biases,
    /// identity batch norm) drawn from `seed`.
    pub fn init(name: &str, arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| match l {
                LayerSpec::Conv(c) => {
                    let fan_in = s.input.c * c.k * c.k;
                    LayerParams::Conv {
                        weight: he_uniform(&[c.out, s.input.c, c.k, c.k], fan_in, &mut rng),
                        bias: c.bias.then(|| Tensor::zeros(&[c.out])),
                    }
                }
                LayerSpec::Fc(f) => {
                    let fan_in = s.input.numel();
                    LayerParams::Fc {
                        weight: he_uniform(&[f.out, fan_in], fan_in, &mut rng),
                        bias: f.bias.then(|| Tensor::zeros(&[f.out])),
                    }
                }
                LayerSpec::BatchNorm => LayerParams::BatchNorm(BnParams::identity(s.input.c)),
                _ => LayerParams::None,
            })
            .collect();
        Ok(ModelGraph {
            name: name.to_string(),
            seed,
            arch,
            shapes,
            params,
        })
    }

    /// Assembles a graph from explicit parameters, checking every shape.
    pub fn from_parts(
        name: &str,
        seed: u64,
        arch: Architecture,
        params: Vec<LayerParams>,
    ) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.shapes()?;
        let graph = ModelGraph {
            name: name.to_string(),
            seed,
            arch,
            shapes,
            params,
        };
        graph.check_params()?;
        Ok(graph)
    }

    fn check_params(&self) -> Result<()> {
        if self.params.len() != self.arch.layers.len() {
            return Err(Error::Model(format!(
                "{} parameter entries for {} layers",
                self.params.len(),
                self.arch.layers.len()
            )));
        }
        for (i, ((l, s), p)) in self.arch.layers.iter().zip(&self.shapes).zip(&self.params).enumerate() {
            let bad = |what: String| Err(Error::Model(format!("layer {i}: {what}")));
            match (l, p) {
                (LayerSpec::Conv(c), LayerParams::Conv { weight, bias }) => {
                    if weight.shape() != [c.out, s.input.c, c.k, c.k] {
                        return bad(format!("conv weight shape {:?}", weight.shape()));
                    }
                    if bias.is_some() != c.bias || bias.as_ref().is_some_and(|b| b.len() != c.out) {
                        return bad("conv bias does not match spec".into());
                    }
                }
                (LayerSpec::Fc(f), LayerParams::Fc { weight, bias }) => {
                    if weight.shape() != [f.out, s.input.numel()] {
                        return bad(format!("fc weight shape {:?}", weight.shape()));
                    }
                    if bias.is_some() != f.bias || bias.as_ref().is_some_and(|b| b.len() != f.out) {
                        return bad("fc bias does not match spec".into());
                    }
                }
                (LayerSpec::BatchNorm, LayerParams::BatchNorm(bn)) => {
                    let c = s.input.c;
                    if [bn.gamma.len(), bn.beta.len(), bn.running_mean.len(), bn.running_var.len()]
                        .iter()
                        .any(|n| *n != c)
                    {
                        return bad(format!("batch norm params do not have {c} channels"));
                    }
                }
                (LayerSpec::Relu | LayerSpec::MaxPool(_) | LayerSpec::Flatten, LayerParams::None) => {}
                _ => return bad(format!("parameters do not fit a {} layer", l.kind())),
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.arch.layers
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn input_dims(&self) -> Dims {
        self.arch.input
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| match p {
            LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                weight.all_finite() && bias.as_ref().map_or(true, |b| b.all_finite())
            }
            LayerParams::BatchNorm(bn) => [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite())),
            LayerParams::None => true,
        })
    }

    /// Total number of trainable parameter values.
    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                    weight.len() + bias.as_ref().map_or(0, |b| b.len())
                }
                LayerParams::BatchNorm(bn) => 2 * bn.channels(),
                LayerParams::None => 0,
            })
            .sum()
    }

    fn check_inputs(&self, xs: &[Tensor]) -> Result<()> {
        let want = self.arch.input.as_shape();
        for x in xs {
            if x.shape() != want {
                return Err(Error::shape(
                    "forward",
                    format!("image shape {:?}, model expects {:?}", x.shape(), want),
                ));
            }
        }
        Ok(())
    }

    /// Batched forward pass. Samples are independent except through train-mode
    /// batch normalization.
    pub fn forward_batch(&self, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, LayerCache)> {
        self.check_inputs(xs)?;
        let mut cur: Vec<Tensor> = xs.to_vec();
        let mut inputs = Vec::with_capacity(self.params.len());
        let mut extras = Vec::with_capacity(self.params.len());
        for (i, (layer, params)) in self.arch.layers.iter().zip(&self.params).enumerate() {
            let (next, extra) = match (layer, params) {
                (LayerSpec::Conv(c), LayerParams::Conv { weight, bias }) => (
                    par_map(&cur, |x| conv2d_fwd(x, weight, bias.as_ref(), c.stride, c.pad))?,
                    CacheExtra::None,
                ),
                (LayerSpec::Fc(_), LayerParams::Fc { weight, bias }) => (
                    par_map(&cur, |x| fc_fwd(x, weight, bias.as_ref()))?,
                    CacheExtra::None,
                ),
                (LayerSpec::BatchNorm, LayerParams::BatchNorm(bn)) => {
                    let bn_mode = match mode {
                        Mode::Train => BnMode::Train,
                        Mode::Eval => BnMode::Eval,
                    };
                    let (ys, cache) = batchnorm_fwd(&cur, bn, bn_mode)?;
                    (ys, CacheExtra::BatchNorm(cache))
                }
                (LayerSpec::Relu, _) => (
                    par_map(&cur, |x| {
                        let mut y = x.clone();
                        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                        Ok(y)
                    })?,
                    CacheExtra::None,
                ),
                (LayerSpec::MaxPool(p), _) => {
                    let pairs = par_map(&cur, |x| maxpool_fwd(x, p.k, p.stride, p.pad))?;
                    let (ys, args) = pairs.into_iter().unzip();
                    (ys, CacheExtra::Argmax(args))
                }
                (LayerSpec::Flatten, _) => (
                    par_map(&cur, |x| {
                        let n = x.len();
                        x.clone().reshape(&[n])
                    })?,
                    CacheExtra::None,
                ),
                _ => {
                    return Err(Error::Model(format!(
                        "layer {i}: parameters do not fit a {} layer",
                        layer.kind()
                    )))
                }
            };
            inputs.push(std::mem::replace(&mut cur, next));
            extras.push(extra);
        }
        Ok((cur, LayerCache { inputs, extras, mode }))
    }

    /// Eval-mode forward pass on a single image.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, LayerCache)> {
        let (mut logits, cache) = self.forward_batch(std::slice::from_ref(image), Mode::Eval)?;
        Ok((logits.pop().unwrap(), cache))
    }

    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(image)?.0)
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        Ok(self.logits(image)?.argmax())
    }

    /// Backward pass from per-sample logit gradients.
    pub fn backward(&self, cache: &LayerCache, grad_logits: &[Tensor]) -> Result<Backward> {
        let n_layers = self.arch.layers.len();
        if cache.inputs.len() != n_layers || cache.extras.len() != n_layers {
            return Err(Error::MissingCache(format!(
                "cache holds {} layers, model has {n_layers}",
                cache.inputs.len()
            )));
        }
        if grad_logits.len() != cache.batch_len() {
            return Err(Error::shape(
                "backward",
                format!("{} logit gradients for a batch of {}", grad_logits.len(), cache.batch_len()),
            ));
        }
        let mut grads = vec![LayerGrad::None; n_layers];
        let mut layer_inputs: Vec<Vec<Tensor>> = vec![Vec::new(); n_layers];
        let mut upstream: Vec<Tensor> = grad_logits.to_vec();
        for i in (0..n_layers).rev() {
            let layer = &self.arch.layers[i];
            let xs = &cache.inputs[i];
            if xs.len() != upstream.len() {
                return Err(Error::MissingCache(format!("layer {i}: batch size changed")));
            }
            let down = match (layer, &self.params[i]) {
                (LayerSpec::Conv(c), LayerParams::Conv { weight, bias }) => {
                    let per = par_zip(xs, &upstream, |x, g| conv2d_bwd(x, weight, c.stride, c.pad, g))?;
                    let mut gw = Tensor::zeros(weight.shape());
                    let mut gb = Tensor::zeros(&[c.out]);
                    let mut down = Vec::with_capacity(per.len());
                    for g in per {
                        gw.add_assign(&g.weight)?;
                        gb.add_assign(&g.bias)?;
                        down.push(g.input);
                    }
                    grads[i] = LayerGrad::Conv {
                        weight: gw,
                        bias: bias.as_ref().map(|_| gb),
                    };
                    down
                }
                (LayerSpec::Fc(f), LayerParams::Fc { weight, bias }) => {
                    let per = par_zip(xs, &upstream, |x, g| fc_bwd(x, weight, g))?;
                    let mut gw = Tensor::zeros(weight.shape());
                    let mut gb = Tensor::zeros(&[f.out]);
                    let mut down = Vec::with_capacity(per.len());
                    for g in per {
                        gw.add_assign(&g.weight)?;
                        gb.add_assign(&g.bias)?;
                        down.push(g.input);
                    }
                    grads[i] = LayerGrad::Fc {
                        weight: gw,
                        bias: bias.as_ref().map(|_| gb),
                    };
                    down
                }
                (LayerSpec::BatchNorm, LayerParams::BatchNorm(bn)) => {
                    let CacheExtra::BatchNorm(bc) = &cache.extras[i] else {
                        return Err(Error::MissingCache(format!("layer {i}: batch norm state")));
                    };
                    let g = batchnorm_bwd(bc, bn, &upstream)?;
                    grads[i] = LayerGrad::BatchNorm {
                        gamma: g.gamma,
                        beta: g.beta,
                    };
                    g.inputs
                }
                (LayerSpec::Relu, _) => par_zip(xs, &upstream, |x, g| {
                    let mut out = g.clone();
                    for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
                        if *v <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    Ok(out)
                })?,
                (LayerSpec::MaxPool(_), _) => {
                    let CacheExtra::Argmax(args) = &cache.extras[i] else {
                        return Err(Error::MissingCache(format!("layer {i}: max-pool indices")));
                    };
                    let idx: Vec<usize> = (0..xs.len()).collect();
                    par_map(&idx, |s| maxpool_bwd(xs[*s].shape(), &args[*s], &upstream[*s]))?
                }
                (LayerSpec::Flatten, _) => {
                    par_zip(xs, &upstream, |x, g| g.clone().reshape(x.shape()))?
                }
                _ => return Err(Error::Model(format!("layer {i}: parameter mismatch"))),
            };
            layer_inputs[i] = down.clone();
            upstream = down;
        }
        Ok(Backward {
            params: grads,
            layer_inputs,
        })
    }
}

fn par_map<T: Sync, U: Send>(xs: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    xs.par_iter().map(f).collect()
}

fn par_zip<U: Send>(
    xs: &[Tensor],
    gs: &[Tensor],
    f: impl Fn(&Tensor, &Tensor) -> Result<U> + Sync + Send,
) -> Result<Vec<U>> {
    xs.par_iter().zip(gs.par_iter()).map(|(x, g)| f(x, g)).collect()
}
