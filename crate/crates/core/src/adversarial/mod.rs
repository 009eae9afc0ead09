//! PGD attacks, adversarial training and robustness evaluation.

mod attack;
mod train;

pub use attack::{loss_input_grad, pgd_attack, pgd_with, project, AttackConfig};
pub use train::{adv_train, attack_batch, EpochMetrics, TrainConfig};

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::seed;
use crate::tensor::softmax_xent;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Accuracy and mean cross-entropy on clean inputs, or on PGD examples when
/// an attack is given. Per-sample work runs in parallel and is reduced in
/// dataset order.
pub fn evaluate(graph: &ModelGraph, data: &Dataset, attack: Option<&AttackConfig>) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    if let Some(a) = attack {
        a.validate()?;
    }
    let per: Vec<(bool, f32)> = data
        .images
        .par_iter()
        .zip(data.labels.par_iter())
        .enumerate()
        .map(|(i, (x, y))| {
            let input = match attack {
                Some(a) => {
                    let cfg = AttackConfig {
                        seed: seed::derive_indexed(a.seed, i as u64),
                        ..*a
                    };
                    pgd_attack(graph, x, *y, &cfg)?
                }
                None => x.clone(),
            };
            let logits = graph.logits(&input)?;
            let (loss, _) = softmax_xent(&logits, *y)?;
            Ok((logits.argmax() == *y, loss))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let correct = per.iter().filter(|(c, _)| *c).count() as f64;
    let loss = per.iter().map(|(_, l)| *l as f64).sum::<f64>();
    Ok(EvalReport {
        accuracy: correct / n,
        mean_loss: loss / n,
    })
}

pub fn eval_clean(graph: &ModelGraph, data: &Dataset) -> Result<f64> {
    Ok(evaluate(graph, data, None)?.accuracy)
}

/// Accuracy under PGD: the robustness metric.
pub fn eval_robust(graph: &ModelGraph, data: &Dataset, cfg: &AttackConfig) -> Result<f64> {
    Ok(evaluate(graph, data, Some(cfg))?.accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::model::{Architecture, Dims, LayerParams, LayerSpec};
    use crate::tensor::Tensor;

    fn small_model(seed: u64) -> ModelGraph {
        let arch = Architecture::new(
            Dims::new(1, 8, 8),
            3,
            vec![
                LayerSpec::conv(3, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::maxpool(2, 2),
                LayerSpec::Flatten,
                LayerSpec::fc(3),
            ],
        )
        .unwrap();
        ModelGraph::init("s", arch, seed).unwrap()
    }

    #[test]
    fn zero_budget_robustness_equals_clean() {
        let g = small_model(2);
        let d = generate_synthetic(3, 6, 8, 1).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.0,
            step: 0.0,
            ..AttackConfig::evaluation()
        };
        assert_eq!(eval_robust(&g, &d, &cfg).unwrap(), eval_clean(&g, &d).unwrap());
    }

    #[test]
    fn constant_model_scores_majority_frequency() {
        let mut g = small_model(3);
        if let LayerParams::Fc { weight, bias } = &mut g.params_mut()[4] {
            *weight = Tensor::zeros(weight.shape());
            *bias = Some(Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap());
        }
        let mut d = generate_synthetic(3, 4, 8, 1).unwrap();
        d.labels = vec![1, 1, 1, 0, 2, 1, 0, 1, 2, 2, 1, 0];
        let expect = 6.0 / 12.0;
        assert_eq!(d.majority_fraction(), expect);
        assert_eq!(eval_clean(&g, &d).unwrap(), expect);
        assert_eq!(eval_robust(&g, &d, &AttackConfig::evaluation()).unwrap(), expect);
    }

    #[test]
    fn empty_set_is_an_error() {
        let g = small_model(1);
        let d = generate_synthetic(3, 0, 8, 1).unwrap();
        assert!(eval_clean(&g, &d).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let g = small_model(5);
        let d = generate_synthetic(3, 4, 8, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ma) = adv_train(&g, &d, &cfg).unwrap();
        let (b, mb) = adv_train(&g, &d, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_ne!(a, g);
    }
}
