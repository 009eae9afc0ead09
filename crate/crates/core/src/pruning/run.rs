use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    priority_scores, saliency_scores, select_channel, Candidate, CandidateSet, Guidance,
    PruneConfig,
};
use crate::adversarial::{adv_train, eval_clean, eval_robust, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ChannelId, ModelGraph};
use crate::perf::{channel_gain, model_cost, CostReport};
use crate::seed;

/// One iteration of the pruning loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    pub step: usize,
    pub channel: ChannelId,
    pub gain: f64,
    pub saliency: f64,
    pub priority: f64,
    pub robustness: f64,
    pub clean_acc: f64,
    /// Cost under the configured objective.
    pub cost: f64,
    pub macs: u64,
    pub cycles: u64,
    pub dsp: u64,
    pub bram: u64,
    pub saved: bool,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRun {
    pub candidates: CandidateSet,
    pub trace: Vec<PruneStep>,
    pub base_robustness: f64,
    pub base_cost: f64,
    pub base_report: CostReport,
}

/// The saliency batch for iteration `step`: a fixed-seed sample of the data,
/// drawn afresh each step.
pub fn saliency_batch(data: &Dataset, cfg: &PruneConfig, step: usize) -> Dataset {
    let n = cfg.saliency_batch.min(data.len());
    let s = seed::derive_indexed(seed::derive(cfg.seed, "saliency-batch"), step as u64);
    let idx = sample(&mut ChaCha8Rng::seed_from_u64(s), data.len(), n).into_vec();
    data.subset(&idx)
}

/// Seed handed to random saliency at iteration `step`.
pub fn random_saliency_seed(cfg: &PruneConfig, step: usize) -> u64 {
    seed::derive_indexed(seed::derive(cfg.seed, "random-saliency"), step as u64)
}

/// Gains of every currently prunable channel. A gain depends only on the
/// layer, so it is evaluated once per layer.
fn gains(graph: &ModelGraph, cfg: &PruneConfig) -> Result<BTreeMap<ChannelId, f64>> {
    let arch = graph.arch();
    let mut out = BTreeMap::new();
    for (layer, count) in arch.channel_counts() {
        if count < 2 {
            continue;
        }
        let g = match cfg.guidance {
            Guidance::Hardware => {
                channel_gain(arch, ChannelId::new(layer, 0), cfg.objective, &cfg.policy, &cfg.consts)?
            }
            Guidance::SaliencyOnly => 1.0,
        };
        for c in 0..count {
            out.insert(ChannelId::new(layer, c), g);
        }
    }
    Ok(out)
}

/// Greedy channel removal: every step prunes the channel with the highest
/// priority, re-evaluates PGD robustness on a fixed held-out prefix, and
/// saves a candidate each time the cost falls to the next checkpoint
/// `O_next = ρ·O_last`. Stops when robustness leaves the tolerance band or
/// nothing prunable remains.
pub fn run_pruning(graph: &ModelGraph, data: &Dataset, cfg: &PruneConfig) -> Result<PruneRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("pruning needs a non-empty evaluation set".into()));
    }
    if !graph.all_finite() {
        return Err(Error::NonFinite("initial model parameters"));
    }
    let eval = data.head(cfg.eval_samples);
    let base_report = model_cost(graph.arch(), &cfg.policy, &cfg.consts)?;
    let r_base = eval_robust(graph, &eval, &cfg.attack)?;
    let clean_base = eval_clean(graph, &eval)?;
    let o_base = base_report.objective(cfg.objective);
    info!("baseline robustness {r_base:.4}, clean {clean_base:.4}, {} {o_base}", cfg.objective);
    let mut candidates = vec![Candidate {
        model: graph.clone(),
        robustness: r_base,
        clean_acc: clean_base,
        cost: o_base,
        step: 0,
        removed: Vec::new(),
    }];
    let mut o_next = cfg.rho * o_base;
    let mut current = graph.clone();
    let mut removed = Vec::new();
    let mut trace = Vec::new();
    for step in 1.. {
        if cfg.max_steps.is_some_and(|m| step > m) {
            break;
        }
        let g = gains(&current, cfg)?;
        if g.is_empty() {
            break;
        }
        let batch = if cfg.saliency.needs_data() {
            saliency_batch(data, cfg, step)
        } else {
            data.head(0)
        };
        let s = saliency_scores(&current, &batch, cfg.saliency, random_saliency_seed(cfg, step))?;
        let p = priority_scores(&g, &s, cfg.eps_s);
        let pick = select_channel(&p).expect("gains are non-empty");
        current = current.prune_channel(pick)?;
        removed.push(pick);

        let report = model_cost(current.arch(), &cfg.policy, &cfg.consts)?;
        let o_cur = report.objective(cfg.objective);
        let r_cur = eval_robust(&current, &eval, &cfg.attack)?;
        let clean = eval_clean(&current, &eval)?;
        let within = r_base - r_cur <= cfg.tau * r_base;
        let last_cost = candidates.last().map_or(f64::INFINITY, |c| c.cost);
        let saved = within && o_cur <= o_next && o_cur < last_cost;
        debug!("step {step}: prune {pick} P={:.4e} R={r_cur:.4} O={o_cur}", p[&pick]);
        trace.push(PruneStep {
            step,
            channel: pick,
            gain: g[&pick],
            saliency: s[&pick],
            priority: p[&pick],
            robustness: r_cur,
            clean_acc: clean,
            cost: o_cur,
            macs: report.macs,
            cycles: report.cycles,
            dsp: report.dsp,
            bram: report.bram,
            saved,
            within_tolerance: within,
        });
        if !within && cfg.stop_on_tolerance {
            info!("step {step}: robustness {r_cur:.4} outside tolerance, stopping");
            break;
        }
        if saved {
            info!("step {step}: saved candidate at {} {o_cur}", cfg.objective);
            candidates.push(Candidate {
                model: current.clone(),
                robustness: r_cur,
                clean_acc: clean,
                cost: o_cur,
                step,
                removed: removed.clone(),
            });
            o_next = cfg.rho * o_cur;
        }
    }
    Ok(PruneRun {
        candidates: CandidateSet {
            objective: cfg.objective,
            candidates,
        },
        trace,
        base_robustness: r_base,
        base_cost: o_base,
        base_report,
    })
}

/// Recovery training for a pruned candidate: the same adversarial procedure
/// at a tenth of the base learning rate.
pub fn fine_tune(candidate: &Candidate, data: &Dataset, base: &TrainConfig, epochs: usize) -> Result<Candidate> {
    let cfg = TrainConfig {
        epochs,
        learning_rate: base.learning_rate / 10.0,
        ..*base
    };
    let (model, _) = adv_train(&candidate.model, data, &cfg)?;
    Ok(Candidate {
        model,
        ..candidate.clone()
    })
}
