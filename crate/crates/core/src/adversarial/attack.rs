use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::{softmax_xent, Tensor};

/// ℓ∞ PGD settings. Budgets are in pixel units of `[0, 1]` images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f32,
    pub step: f32,
    pub iters: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// ε = 8/255, η = 2/255, 10 steps.
    pub fn training() -> Self {
        AttackConfig {
            epsilon: 8.0 / 255.0,
            step: 2.0 / 255.0,
            iters: 10,
            random_start: false,
            seed: 0,
        }
    }

    /// Same budget as training with 20 steps.
    pub fn evaluation() -> Self {
        AttackConfig {
            iters: 20,
            ..AttackConfig::training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon.is_finite()
            && self.step.is_finite()
            && 0.0 <= self.step
            && self.step <= self.epsilon
            && self.epsilon <= 1.0;
        if !ok {
            return Err(Error::Invalid(format!(
                "attack needs 0 ≤ step ≤ epsilon ≤ 1 (step {}, epsilon {})",
                self.step, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Bounds of the ε-ball around `x`, tightened by an ulp where rounding
/// would otherwise let `|v - x| > ε` in `f32`.
fn ball(x: f32, eps: f32) -> (f32, f32) {
    let mut lo = x - eps;
    let mut hi = x + eps;
    while hi - x > eps {
        hi = hi.next_down();
    }
    while x - lo > eps {
        lo = lo.next_up();
    }
    (lo.max(0.0), hi.min(1.0))
}

/// Projection onto the ε-ball around `x` intersected with `[0, 1]`. Both
/// sets are boxes, so clamping coordinate-wise is the exact projection.
pub fn project(candidate: &mut Tensor, x: &Tensor, eps: f32) {
    for (v, &x0) in candidate.data_mut().iter_mut().zip(x.data()) {
        let (lo, hi) = ball(x0, eps);
        *v = v.clamp(lo, hi);
    }
}

/// Generic PGD ascent on an objective given by its input gradient.
pub fn pgd_with<F>(mut input_grad: F, x: &Tensor, cfg: &AttackConfig) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    cfg.validate()?;
    let mut adv = x.clone();
    if cfg.epsilon == 0.0 {
        return Ok(adv);
    }
    if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in adv.data_mut() {
            *v += rng.gen_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(&mut adv, x, cfg.epsilon);
    }
    for _ in 0..cfg.iters {
        let g = input_grad(&adv)?;
        if g.shape() != adv.shape() {
            return Err(Error::shape("pgd", "gradient shape differs from input"));
        }
        for (v, gv) in adv.data_mut().iter_mut().zip(g.data()) {
            if *gv > 0.0 {
                *v += cfg.step;
            } else if *gv < 0.0 {
                *v -= cfg.step;
            }
        }
        project(&mut adv, x, cfg.epsilon);
    }
    Ok(adv)
}

/// Gradient of the cross-entropy loss with respect to the image.
pub fn loss_input_grad(graph: &ModelGraph, x: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let (logits, cache) = graph.forward(x)?;
    let (loss, gl) = softmax_xent(&logits, label)?;
    let back = graph.backward(&cache, &[gl])?;
    Ok((loss, back.layer_inputs[0][0].clone()))
}

/// PGD on the cross-entropy loss of `graph` (eval-mode forward passes).
pub fn pgd_attack(graph: &ModelGraph, x: &Tensor, label: usize, cfg: &AttackConfig) -> Result<Tensor> {
    pgd_with(|adv| Ok(loss_input_grad(graph, adv, label)?.1), x, cfg)
}
