use super::layout::{fold_stream_order, repack};
use super::{EngineConfig, StageCycles};
use crate::error::{Error, Result};
use crate::perf::HwConstants;

#[derive(Debug, Clone, PartialEq)]
pub struct MceOutput {
    /// Pooled accumulators in emission order (fold, row, column, lane).
    pub stream: Vec<i32>,
    /// Repacked to `[C][OH][OW]`.
    pub pooled: Vec<i32>,
    pub cycles: StageCycles,
}

/// Max pooling on the MCE. Input rows stream through once per fold; each row
/// is swept over `W_out + 2P` column slots, and every slot with a real output
/// column feeds the comparator trees of the output rows whose window covers
/// the current input row. Padded cells never enter a comparison.
pub fn simulate_mce(cfg: &EngineConfig, input: &[i32], consts: &HwConstants) -> Result<MceOutput> {
    cfg.validate_pool()?;
    let (c, k, s, p) = (cfg.ic, cfg.k, cfg.s, cfg.p);
    if input.len() != c * cfg.ih * cfg.iw {
        return Err(Error::shape("simulate_mce", format!("input has {} values, expected {}", input.len(), c * cfg.ih * cfg.iw)));
    }
    let pe = cfg.pe;
    let mut cyc = StageCycles::default();
    let mut stream = Vec::with_capacity(c * cfg.oh * cfg.ow);
    for f in 0..cfg.folds() {
        let before = cyc.compute;
        let active = pe.min(c - f * pe);
        // running maxima per output row in flight: [OH][OW][lane]
        let mut best = vec![i32::MIN; cfg.oh * cfg.ow * active];
        let mut emitted = 0;
        for r in 0..cfg.ih + 2 * p {
            let iy = r.checked_sub(p).filter(|iy| *iy < cfg.ih);
            for col in 0..cfg.ow + 2 * p {
                cyc.compute += consts.ii_maxpool;
                let (Some(iy), true) = (iy, col < cfg.ow) else { continue };
                let first_y = (r + 1).saturating_sub(k).div_ceil(s);
                let last_y = (r / s).min(cfg.oh - 1);
                for y in first_y..=last_y {
                    for lane in 0..active {
                        let ch = f * pe + lane;
                        let row = &input[(ch * cfg.ih + iy) * cfg.iw..(ch * cfg.ih + iy + 1) * cfg.iw];
                        let b = &mut best[(y * cfg.ow + col) * active + lane];
                        for kw in 0..k {
                            let ix = (col * s + kw).checked_sub(p).filter(|ix| *ix < cfg.iw);
                            if let Some(ix) = ix {
                                *b = (*b).max(row[ix]);
                            }
                        }
                    }
                }
            }
            // emit every output row whose window ends on this input row
            while emitted < cfg.oh && emitted * s + k - 1 == r {
                stream.extend_from_slice(&best[emitted * cfg.ow * active..(emitted + 1) * cfg.ow * active]);
                emitted += 1;
            }
        }
        if emitted != cfg.oh {
            return Err(Error::Simulation(format!("pool emitted {emitted} of {} rows", cfg.oh)));
        }
        cyc.per_fold.push(cyc.compute - before);
    }
    cyc.drain = consts.d_maxpool;
    let order = fold_stream_order(c, pe, cfg.oh, cfg.ow);
    let pooled = repack(&stream, &order);
    Ok(MceOutput { stream, pooled, cycles: cyc })
}
