use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::attack::{pgd_attack, AttackConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{CacheExtra, LayerGrad, LayerParams, Mode, ModelGraph};
use crate::seed;
use crate::tensor::{softmax_xent, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Attack used for on-the-fly adversarial examples; `None` trains on
    /// clean images.
    pub attack: Option<AttackConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            attack: Some(AttackConfig::training()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid("momentum must lie in [0, 1)".into()));
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss on the (adversarial) examples actually fitted.
    pub loss: f64,
    pub accuracy: f64,
}

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
struct Sgd {
    lr: f32,
    momentum: f32,
    velocity: Vec<Vec<Vec<f32>>>,
}

impl Sgd {
    fn new(lr: f32, momentum: f32, graph: &ModelGraph) -> Self {
        let velocity = graph
            .params()
            .iter()
            .map(|p| match p {
                LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                    let mut v = vec![vec![0.0; weight.len()]];
                    if let Some(b) = bias {
                        v.push(vec![0.0; b.len()]);
                    }
                    v
                }
                LayerParams::BatchNorm(bn) => vec![vec![0.0; bn.channels()]; 2],
                LayerParams::None => Vec::new(),
            })
            .collect();
        Sgd { lr, momentum, velocity }
    }

    fn apply(&mut self, param: &mut [f32], grad: &[f32], slot: &mut [f32]) {
        for ((p, g), v) in param.iter_mut().zip(grad).zip(slot.iter_mut()) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }

    fn step(&mut self, graph: &mut ModelGraph, grads: &[LayerGrad]) {
        for (i, (p, g)) in graph.params_mut().iter_mut().zip(grads).enumerate() {
            let mut slots = std::mem::take(&mut self.velocity[i]);
            match (p, g) {
                (
                    LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias },
                    LayerGrad::Conv { weight: gw, bias: gb } | LayerGrad::Fc { weight: gw, bias: gb },
                ) => {
                    self.apply(weight.data_mut(), gw.data(), &mut slots[0]);
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        self.apply(b.data_mut(), gb.data(), &mut slots[1]);
                    }
                }
                (LayerParams::BatchNorm(bn), LayerGrad::BatchNorm { gamma, beta }) => {
                    self.apply(&mut bn.gamma, gamma, &mut slots[0]);
                    self.apply(&mut bn.beta, beta, &mut slots[1]);
                }
                _ => {}
            }
            self.velocity[i] = slots;
        }
    }
}

/// Per-sample PGD examples for a batch, generated in parallel and returned in
/// batch order. Each sample gets its own derived seed.
pub fn attack_batch(
    graph: &ModelGraph,
    images: &[Tensor],
    labels: &[usize],
    cfg: &AttackConfig,
    seeds: &[u64],
) -> Result<Vec<Tensor>> {
    images
        .par_iter()
        .zip(labels.par_iter())
        .zip(seeds.par_iter())
        .map(|((x, y), s)| pgd_attack(graph, x, *y, &AttackConfig { seed: *s, ..*cfg }))
        .collect()
}

/// Mini-batch training on `(1/n)Σ ℓ_ce(f(x̃_i), y_i)` where `x̃_i` are PGD
/// examples generated against the current parameters.
pub fn adv_train(
    graph: &ModelGraph,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if data.classes != graph.classes() {
        return Err(Error::Invalid(format!(
            "dataset has {} classes, model has {}",
            data.classes,
            graph.classes()
        )));
    }
    let mut model = graph.clone();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, &model);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_seed = seed::derive_indexed(cfg.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|i| data.labels[*i]).collect();
            let clean: Vec<Tensor> = batch.iter().map(|i| data.images[*i].clone()).collect();
            let inputs = match &cfg.attack {
                Some(a) => {
                    let seeds: Vec<u64> = batch
                        .iter()
                        .map(|i| seed::derive_indexed(epoch_seed, *i as u64))
                        .collect();
                    attack_batch(&model, &clean, &labels, a, &seeds)?
                }
                None => clean,
            };
            let (logits, cache) = model.forward_batch(&inputs, Mode::Train)?;
            let scale = 1.0 / batch.len() as f32;
            let mut grad_logits = Vec::with_capacity(batch.len());
            for (z, y) in logits.iter().zip(&labels) {
                if !z.all_finite() {
                    return Err(Error::NonFinite("training forward pass"));
                }
                let (l, mut g) = softmax_xent(z, *y)?;
                loss_sum += l as f64;
                correct += usize::from(z.argmax() == *y);
                g.scale(scale);
                grad_logits.push(g);
            }
            let back = model.backward(&cache, &grad_logits)?;
            opt.step(&mut model, &back.params);
            for (p, extra) in model.params_mut().iter_mut().zip(&cache.extras) {
                if let (LayerParams::BatchNorm(bn), CacheExtra::BatchNorm(bc)) = (p, extra) {
                    bn.update_running(bc);
                }
            }
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        info!("epoch {epoch}: loss {:.4} acc {:.3}", m.loss, m.accuracy);
        if !m.loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        metrics.push(m);
    }
    Ok((model, metrics))
}
