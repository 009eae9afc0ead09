use super::layout::{fold_stream_order, repack, FoldedWeights};
use super::{EngineConfig, StageCycles};
use crate::error::{Error, Result};
use crate::perf::HwConstants;

/// Output of one convolution-engine run.
#[derive(Debug, Clone, PartialEq)]
pub struct CceOutput {
    /// Accumulators in emission order: fold, output row, output column, lane.
    pub stream: Vec<i32>,
    /// The same values repacked to `[OC][OH][OW]`.
    pub acc: Vec<i32>,
    pub cycles: StageCycles,
}

/// K-row circular line buffer over the zero-point-padded input.
struct LineBuffer<'a> {
    input: &'a [i8],
    cfg: &'a EngineConfig,
    pad_value: i8,
    /// `rows[slot]` holds `IC` padded rows side by side.
    rows: Vec<Vec<i8>>,
    head: usize,
    next_row: usize,
}

impl<'a> LineBuffer<'a> {
    fn new(input: &'a [i8], cfg: &'a EngineConfig, pad_value: i8) -> Self {
        let wp = cfg.iw + 2 * cfg.p;
        LineBuffer {
            input,
            cfg,
            pad_value,
            rows: vec![vec![pad_value; cfg.ic * wp]; cfg.k],
            head: 0,
            next_row: 0,
        }
    }

    fn padded_width(&self) -> usize {
        self.cfg.iw + 2 * self.cfg.p
    }

    /// Shifts the next padded input row into the slot at the head pointer.
    fn load_row(&mut self) {
        let c = self.cfg;
        let wp = self.padded_width();
        let r = self.next_row;
        let slot = &mut self.rows[self.head];
        slot.fill(self.pad_value);
        if r >= c.p && r < c.ih + c.p {
            let iy = r - c.p;
            for i in 0..c.ic {
                let src = &self.input[(i * c.ih + iy) * c.iw..(i * c.ih + iy + 1) * c.iw];
                slot[i * wp + c.p..i * wp + c.p + c.iw].copy_from_slice(src);
            }
        }
        self.head = (self.head + 1) % c.k;
        self.next_row += 1;
    }

    fn restart(&mut self) {
        self.head = 0;
        self.next_row = 0;
        for _ in 0..self.cfg.k {
            self.load_row();
        }
    }

    /// Window row `kh` of channel `i`: after a full set of loads the head
    /// points at the oldest row.
    fn row(&self, kh: usize, i: usize) -> &[i8] {
        let wp = self.padded_width();
        &self.rows[(self.head + kh) % self.cfg.k][i * wp..(i + 1) * wp]
    }
}

/// Runs a convolution on the CCE: fills the line buffer, then for each fold
/// of `PE` output channels sweeps all output pixels, every PE reducing its
/// `K×K` window over the input channels one channel per cycle, and shifts `S`
/// new rows in after each output row. Cycles are counted per loop trip.
pub fn simulate_cce(
    cfg: &EngineConfig,
    weights: &FoldedWeights,
    input: &[i8],
    zero_point: i32,
    consts: &HwConstants,
) -> Result<CceOutput> {
    cfg.validate_conv()?;
    let (k, s, pe) = (cfg.k, cfg.s, cfg.pe);
    if input.len() != cfg.ic * cfg.ih * cfg.iw {
        return Err(Error::shape("simulate_cce", format!("input has {} values, expected {}", input.len(), cfg.ic * cfg.ih * cfg.iw)));
    }
    let folds = cfg.folds();
    if weights.pe != pe || weights.folds != folds || weights.per_channel != cfg.ic * k * k {
        return Err(Error::shape("simulate_cce", "weights are not laid out for this engine configuration"));
    }
    let zp = i8::try_from(zero_point).map_err(|_| Error::Invalid(format!("zero point {zero_point}")))?;

    let mut cyc = StageCycles::default();
    let mut lb = LineBuffer::new(input, cfg, zp);
    for _ in 0..k {
        lb.load_row();
        cyc.input_load += if cfg.first_layer { consts.ii_input } else { cfg.iw as u64 * consts.ii_input };
    }
    cyc.input_load += consts.d_input;

    let mut stream = Vec::with_capacity(cfg.oc * cfg.oh * cfg.ow);
    let mut lanes = vec![0i32; pe];
    for f in 0..folds {
        let before = cyc.compute + cyc.buffer_update;
        if f > 0 {
            // later folds re-read the top rows while the previous fold drains
            lb.restart();
        }
        let active = pe.min(cfg.oc - f * pe);
        for y in 0..cfg.oh {
            for x in 0..cfg.ow {
                for (lane, a) in lanes.iter_mut().enumerate() {
                    *a = weights.bias_of(f, lane);
                }
                for i in 0..cfg.ic {
                    cyc.compute += consts.ii_conv;
                    for (lane, a) in lanes.iter_mut().enumerate() {
                        let w = &weights.weight_row(f, lane)[i * k * k..(i + 1) * k * k];
                        for kh in 0..k {
                            let row = &lb.row(kh, i)[x * s..x * s + k];
                            for (wv, xv) in w[kh * k..(kh + 1) * k].iter().zip(row) {
                                *a += *wv as i32 * (*xv as i32 - zero_point);
                            }
                        }
                    }
                }
                cyc.compute += consts.d_conv + consts.t_ov;
                stream.extend_from_slice(&lanes[..active]);
            }
            if y + 1 < cfg.oh {
                for _ in 0..s {
                    lb.load_row();
                    cyc.buffer_update += cfg.iw as u64 * consts.ii_b;
                }
                cyc.buffer_update += consts.d_b;
            }
        }
        cyc.per_fold.push(cyc.compute + cyc.buffer_update - before);
    }
    let order = fold_stream_order(cfg.oc, pe, cfg.oh, cfg.ow);
    let acc = repack(&stream, &order);
    Ok(CceOutput { stream, acc, cycles: cyc })
}
