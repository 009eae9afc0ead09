use super::PruneStep;

/// Checkpoints for trajectory comparisons, as fractions of the baseline cost.
pub const LATENCY_FRACTIONS: [f64; 9] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointPair {
    pub fraction: f64,
    pub step_a: usize,
    pub robustness_a: f64,
    pub step_b: usize,
    pub robustness_b: f64,
}

/// First step at which a trajectory's cost reaches `limit`.
fn first_at_or_below<'a, F>(trace: &'a [PruneStep], cost: &F, limit: f64) -> Option<&'a PruneStep>
where
    F: Fn(&PruneStep) -> f64,
{
    trace.iter().find(|s| cost(s) <= limit)
}

/// Robustness of two trajectories at the first step each reaches
/// `fraction·base`, for every fraction both reach.
pub fn matched_checkpoints<F>(
    a: &[PruneStep],
    b: &[PruneStep],
    base: f64,
    fractions: &[f64],
    cost: F,
) -> Vec<CheckpointPair>
where
    F: Fn(&PruneStep) -> f64,
{
    fractions
        .iter()
        .filter_map(|&f| {
            let sa = first_at_or_below(a, &cost, f * base)?;
            let sb = first_at_or_below(b, &cost, f * base)?;
            Some(CheckpointPair {
                fraction: f,
                step_a: sa.step,
                robustness_a: sa.robustness,
                step_b: sb.step,
                robustness_b: sb.robustness,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelId;

    fn step(i: usize, cycles: u64, r: f64) -> PruneStep {
        PruneStep {
            step: i,
            channel: ChannelId::new(0, 0),
            gain: 0.0,
            saliency: 0.0,
            priority: 0.0,
            robustness: r,
            clean_acc: r,
            cost: cycles as f64,
            macs: 0,
            cycles,
            dsp: 0,
            bram: 0,
            saved: false,
            within_tolerance: true,
        }
    }

    #[test]
    fn only_common_checkpoints_are_paired() {
        let a = vec![step(1, 85, 0.9), step(2, 60, 0.8)];
        let b = vec![step(1, 95, 0.9), step(2, 75, 0.7)];
        let pairs = matched_checkpoints(&a, &b, 100.0, &LATENCY_FRACTIONS, |s| s.cycles as f64);
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].step_a, pairs[0].step_b), (1, 2));
        assert_eq!(pairs[1].fraction, 0.8);
    }
}
