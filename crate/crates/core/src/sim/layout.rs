//! Fold-major parameter layout: `[FOLD][PE][IC][K][K]` weights and
//! `[FOLD][PE]` biases. Rows for inactive PEs in a partial final fold are
//! zero.

use crate::error::{Error, Result};

/// Weights and biases of one conv layer as the engine stores them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldedWeights {
    pub folds: usize,
    pub pe: usize,
    /// Values per output channel, `IC·K·K`.
    pub per_channel: usize,
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
}

impl FoldedWeights {
    pub fn weight_row(&self, fold: usize, pe: usize) -> &[i8] {
        let start = (fold * self.pe + pe) * self.per_channel;
        &self.weights[start..start + self.per_channel]
    }

    pub fn bias_of(&self, fold: usize, pe: usize) -> i32 {
        self.bias[fold * self.pe + pe]
    }
}

/// Reorders natural `[OC][IC][K][K]` weights into fold-major order.
pub fn fold_weights(weight: &[i8], bias: &[i32], oc: usize, pe: usize) -> Result<FoldedWeights> {
    if pe == 0 || oc == 0 || bias.len() != oc || weight.len() % oc != 0 {
        return Err(Error::shape(
            "fold_weights",
            format!("{} weights, {} biases for {oc} channels on {pe} PEs", weight.len(), bias.len()),
        ));
    }
    let per = weight.len() / oc;
    let folds = oc.div_ceil(pe);
    let mut w = vec![0i8; folds * pe * per];
    let mut b = vec![0i32; folds * pe];
    for o in 0..oc {
        // channel o lands on fold o / pe, lane o % pe
        let slot = (o / pe) * pe + o % pe;
        w[slot * per..(slot + 1) * per].copy_from_slice(&weight[o * per..(o + 1) * per]);
        b[slot] = bias[o];
    }
    Ok(FoldedWeights {
        folds,
        pe,
        per_channel: per,
        weights: w,
        bias: b,
    })
}

/// Inverse of [`fold_weights`]: drops the padding lanes.
pub fn unfold_weights(f: &FoldedWeights, oc: usize) -> Result<(Vec<i8>, Vec<i32>)> {
    if oc > f.folds * f.pe || oc + f.pe <= f.folds * f.pe {
        return Err(Error::shape("unfold_weights", format!("{oc} channels do not fit {} folds of {}", f.folds, f.pe)));
    }
    let per = f.per_channel;
    let w = f.weights[..oc * per].to_vec();
    let b = f.bias[..oc].to_vec();
    Ok((w, b))
}

/// Position in the reference `[C][H][W]` layout of each element of a
/// fold-ordered stream (fold, row, column, lane), skipping inactive lanes.
pub fn fold_stream_order(channels: usize, pe: usize, h: usize, w: usize) -> Vec<usize> {
    let folds = channels.div_ceil(pe);
    let mut order = Vec::with_capacity(channels * h * w);
    for f in 0..folds {
        let active = pe.min(channels - f * pe);
        for y in 0..h {
            for x in 0..w {
                for lane in 0..active {
                    order.push(((f * pe + lane) * h + y) * w + x);
                }
            }
        }
    }
    order
}

/// Input repacking: scatters a fold-ordered stream back to channel-contiguous
/// layout.
pub fn repack<T: Copy + Default>(stream: &[T], order: &[usize]) -> Vec<T> {
    let mut out = vec![T::default(); stream.len()];
    for (v, &pos) in stream.iter().zip(order) {
        out[pos] = *v;
    }
    out
}

/// Gathers a channel-contiguous map into fold order.
pub fn unpack<T: Copy>(packed: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&pos| packed[pos]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_fold_is_zero_padded() {
        // 6 channels, 2 values each, 4 PEs
        let w: Vec<i8> = (1..=12).collect();
        let b: Vec<i32> = (10..16).collect();
        let f = fold_weights(&w, &b, 6, 4).unwrap();
        assert_eq!(f.folds, 2);
        assert_eq!(f.weights.len(), 16);
        assert_eq!(&f.weights[..8], &w[..8]);
        assert_eq!(&f.weights[8..12], &w[8..12]);
        assert_eq!(&f.weights[12..], &[0, 0, 0, 0]);
        assert_eq!(f.bias, vec![10, 11, 12, 13, 14, 15, 0, 0]);
        assert_eq!(unfold_weights(&f, 6).unwrap(), (w, b));
    }

    #[test]
    fn two_fold_stream_repacks_to_contiguous() {
        let order = fold_stream_order(8, 4, 1, 2);
        // fold 0 emits channels 0..3 per pixel, fold 1 channels 4..7
        assert_eq!(order, vec![0, 2, 4, 6, 1, 3, 5, 7, 8, 10, 12, 14, 9, 11, 13, 15]);
        let packed: Vec<u16> = (0..16).collect();
        assert_eq!(repack(&unpack(&packed, &order), &order), packed);
    }
}
