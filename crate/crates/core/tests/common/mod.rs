#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use hwprune::adversarial::{adv_train, TrainConfig};
use hwprune::dataset::{generate_synthetic, Dataset};
use hwprune::model::{Architecture, Dims, LayerSpec, ModelGraph};

/// conv16 / bn / relu / pool / conv12 / bn / relu / fc4 on 1x16x16.
pub fn desk_arch() -> Architecture {
    Architecture::new(
        Dims::new(1, 16, 16),
        4,
        vec![
            LayerSpec::conv(16, 3, 1, 0),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::maxpool(2, 2),
            LayerSpec::conv(12, 3, 1, 0),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::fc(4),
        ],
    )
    .unwrap()
}

pub fn desk_data() -> (Dataset, Dataset) {
    (
        generate_synthetic(4, 64, 16, 11).unwrap(),
        generate_synthetic(4, 32, 16, 12).unwrap(),
    )
}

pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 16,
        learning_rate: 0.02,
        seed: 3,
        ..TrainConfig::default()
    }
}

/// Adversarially trained desk model (about a minute on one core).
pub fn train_desk(train: &Dataset) -> ModelGraph {
    let g = ModelGraph::init("desk", desk_arch(), 1).unwrap();
    adv_train(&g, train, &desk_train_config()).unwrap().0
}

/// Pairwise-dominance Pareto membership: O(n^2), no sorting.
pub fn pareto_oracle(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(r, o)| {
            !points
                .iter()
                .any(|&(r2, o2)| r2 >= r && o2 <= o && (r2 > r || o2 < o))
        })
        .collect()
}

/// Fold-major layout computed by walking (fold, lane) slots and asking which
/// channel, if any, lands there.
pub fn layout_oracle(weight: &[i8], bias: &[i32], oc: usize, pe: usize) -> (Vec<i8>, Vec<i32>) {
    let per = weight.len() / oc;
    let mut folds = 0;
    while folds * pe < oc {
        folds += 1;
    }
    let mut w = Vec::new();
    let mut b = Vec::new();
    for fold in 0..folds {
        for lane in 0..pe {
            let ch = fold * pe + lane;
            if ch < oc {
                w.extend_from_slice(&weight[ch * per..(ch + 1) * per]);
                b.push(bias[ch]);
            } else {
                w.extend(std::iter::repeat(0).take(per));
                b.push(0);
            }
        }
    }
    (w, b)
}
