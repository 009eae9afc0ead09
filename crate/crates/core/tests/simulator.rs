use hwprune::dataset::generate_synthetic;
use hwprune::model::{Architecture, Dims, LayerSpec, ModelGraph, PoolSpec};
use hwprune::perf::{model_cost, EngineKind, HwConstants, PePolicy};
use hwprune::quant::{quant_infer, quantize_model};
use hwprune::sim::{check_run, simulate_model, SimOptions};

/// Padded conv, overlapping padded pool and a strided conv.
fn model(c0: usize, c1: usize, pad: usize, seed: u64) -> ModelGraph {
    let arch = Architecture::new(
        Dims::new(1, 10, 10),
        3,
        vec![
            LayerSpec::conv(c0, 3, 1, pad),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool(PoolSpec { k: 3, stride: 2, pad: 1 }),
            LayerSpec::conv(c1, 2, 2, 0),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::fc(3),
        ],
    )
    .unwrap();
    ModelGraph::init("s", arch, seed).unwrap()
}

#[test]
fn partial_folds_stay_bit_exact() {
    let data = generate_synthetic(3, 4, 10, 7).unwrap();
    for (c0, c1, pad) in [(6, 11, 1), (4, 5, 0), (9, 3, 1)] {
        let q = quantize_model(&model(c0, c1, pad, c0 as u64), &data).unwrap();
        for policy in [PePolicy::streaming(4), PePolicy::temporal(4), PePolicy::streaming(8), PePolicy::temporal(8)] {
            let opts = SimOptions { policy, ..SimOptions::default() };
            for img in data.images.iter().take(4) {
                let run = simulate_model(&q, img, &opts).unwrap();
                assert_eq!(run.logits, quant_infer(&q, img).unwrap());
                check_run(&q, img, &run, &opts).unwrap();
            }
        }
    }
}

#[test]
fn report_totals_agree_with_the_estimate() {
    let data = generate_synthetic(3, 2, 10, 1).unwrap();
    let g = model(6, 11, 1, 2);
    let q = quantize_model(&g, &data).unwrap();
    let opts = SimOptions { policy: PePolicy::temporal(8), ..SimOptions::default() };
    let run = simulate_model(&q, &data.images[0], &opts).unwrap();
    let est = model_cost(g.arch(), &opts.policy, &HwConstants::default()).unwrap();
    let sim: u64 = run.report.stages.iter().filter(|s| s.engine != EngineKind::Gce).map(|s| s.cycles.total()).sum();
    assert_eq!(sim, est.cycles);
    assert!(run.report.to_csv().lines().count() > run.report.stages.len());
}
