//! Robustness-aware, hardware-guided structured pruning.

mod ablation;
mod run;
mod saliency;

pub use ablation::{matched_checkpoints, CheckpointPair, LATENCY_FRACTIONS};
pub use run::{fine_tune, random_saliency_seed, run_pruning, saliency_batch, PruneRun, PruneStep};
pub use saliency::{saliency_scores, SaliencyKind};

use std::collections::BTreeMap;

use crate::adversarial::AttackConfig;
use crate::error::{Error, Result};
use crate::model::{ChannelId, ModelGraph};
use crate::perf::{HwConstants, Objective, PePolicy};

/// How the priority combines hardware gain with saliency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Guidance {
    /// `P = g/(S+ε)`.
    Hardware,
    /// `P = 1/(S+ε)`: least salient channel first, cost-blind.
    SaliencyOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub objective: Objective,
    pub saliency: SaliencyKind,
    /// Robustness tolerance τ, relative to the baseline.
    pub tau: f64,
    /// Checkpoint decay ρ.
    pub rho: f64,
    pub eps_s: f64,
    pub attack: AttackConfig,
    pub saliency_batch: usize,
    /// Size of the held-out prefix used for per-step robustness.
    pub eval_samples: usize,
    pub seed: u64,
    pub policy: PePolicy,
    pub consts: HwConstants,
    pub guidance: Guidance,
    /// Stop once robustness falls outside the tolerance. Disabled only to
    /// trace full trajectories for ablations.
    pub stop_on_tolerance: bool,
    pub max_steps: Option<usize>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            objective: Objective::Latency,
            saliency: SaliencyKind::Taylor,
            tau: 0.05,
            rho: 0.8,
            eps_s: 1e-8,
            attack: AttackConfig::evaluation(),
            saliency_batch: 32,
            eval_samples: 128,
            seed: 0,
            policy: PePolicy::streaming(8),
            consts: HwConstants::default(),
            guidance: Guidance::Hardware,
            stop_on_tolerance: true,
            max_steps: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        // τ = 0 is allowed: it stops at the first robustness loss
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Invalid(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !open_unit(self.rho) {
            return Err(Error::Invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.eps_s > 0.0 && self.eps_s.is_finite()) {
            return Err(Error::Invalid("eps_s must be positive".into()));
        }
        if self.saliency_batch == 0 || self.eval_samples == 0 {
            return Err(Error::Invalid("saliency batch and eval samples must be positive".into()));
        }
        self.attack.validate()?;
        self.consts.validate()
    }
}

/// A pruned snapshot with its robustness and cost under the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub model: ModelGraph,
    pub robustness: f64,
    pub clean_acc: f64,
    pub cost: f64,
    pub step: usize,
    pub removed: Vec<ChannelId>,
}

/// Saved candidates in order of discovery; the first is the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub objective: Objective,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn baseline(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Flags of the Pareto-optimal members (maximize robustness, minimize cost).
    pub fn pareto_flags(&self) -> Vec<bool> {
        let pts: Vec<(f64, f64)> = self.candidates.iter().map(|c| (c.robustness, c.cost)).collect();
        pareto_mask(&pts)
    }
}

/// `a` dominates `b` when it is at least as robust and at most as costly,
/// strictly better in one of the two.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1)
}

/// Non-dominated flags for `(robustness, cost)` points.
pub fn pareto_mask(points: &[(f64, f64)]) -> Vec<bool> {
    // sort by cost ascending, robustness descending; a point survives when
    // it beats the best robustness seen at strictly lower cost
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .1
            .total_cmp(&points[j].1)
            .then(points[j].0.total_cmp(&points[i].0))
    });
    let mut keep = vec![false; points.len()];
    let mut best = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let cost = points[order[k]].1;
        let group_best = points[order[k]].0;
        let mut end = k;
        while end < order.len() && points[order[end]].1 == cost {
            let i = order[end];
            keep[i] = points[i].0 == group_best && group_best > best;
            end += 1;
        }
        best = best.max(group_best);
        k = end;
    }
    keep
}

pub fn pareto_filter(set: &CandidateSet) -> Vec<Candidate> {
    set.candidates
        .iter()
        .zip(set.pareto_flags())
        .filter(|(_, keep)| *keep)
        .map(|(c, _)| c.clone())
        .collect()
}

/// `P = g/(S+ε)` per channel; channels missing a gain are skipped.
pub fn priority_scores(
    gains: &BTreeMap<ChannelId, f64>,
    saliencies: &BTreeMap<ChannelId, f64>,
    eps_s: f64,
) -> BTreeMap<ChannelId, f64> {
    saliencies
        .iter()
        .filter_map(|(id, s)| gains.get(id).map(|g| (*id, g / (s + eps_s))))
        .collect()
}

/// Highest priority; ties go to the lower `(layer, channel)`.
pub fn select_channel(priorities: &BTreeMap<ChannelId, f64>) -> Option<ChannelId> {
    let mut best: Option<(ChannelId, f64)> = None;
    for (id, p) in priorities {
        if best.map_or(true, |(_, bp)| *p > bp) {
            best = Some((*id, *p));
        }
    }
    best.map(|(id, _)| id)
}
