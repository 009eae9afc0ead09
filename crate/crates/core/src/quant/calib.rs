use super::ActQuant;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, ModelGraph};

/// Observed float ranges: the network input and the input of every conv/fc
/// layer after the first (i.e. each producing layer's requantized output).
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub input: (f32, f32),
    /// `(consumer layer index, min, max)` in layer order.
    pub outputs: Vec<(usize, f32, f32)>,
}

impl Calibration {
    pub fn input_quant(&self) -> Result<ActQuant> {
        ActQuant::from_range(self.input.0, self.input.1)
    }

    pub fn quant_at(&self, consumer: usize) -> Result<ActQuant> {
        let (_, lo, hi) = self
            .outputs
            .iter()
            .find(|(l, _, _)| *l == consumer)
            .ok_or_else(|| Error::Model(format!("no calibration range for layer {consumer}")))?;
        ActQuant::from_range(*lo, *hi)
    }
}

const CHUNK: usize = 64;

/// Min/max over the calibration set, visited in order with eval-mode
/// forwards.
pub fn calibrate_activations(graph: &ModelGraph, calib: &Dataset) -> Result<Calibration> {
    if calib.is_empty() {
        return Err(Error::Invalid("calibration set is empty".into()));
    }
    let consumers: Vec<usize> = graph
        .layers()
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| l.is_parametric())
        .map(|(i, _)| i)
        .collect();
    let mut input = (f32::INFINITY, f32::NEG_INFINITY);
    let mut ranges = vec![(f32::INFINITY, f32::NEG_INFINITY); consumers.len()];
    let widen = |r: &mut (f32, f32), data: &[f32]| {
        for v in data {
            r.0 = r.0.min(*v);
            r.1 = r.1.max(*v);
        }
    };
    for chunk in calib.images.chunks(CHUNK) {
        let (_, cache) = graph.forward_batch(chunk, Mode::Eval)?;
        for x in chunk {
            widen(&mut input, x.data());
        }
        for (r, &j) in ranges.iter_mut().zip(&consumers) {
            for z in &cache.inputs[j] {
                widen(r, z.data());
            }
        }
    }
    if !(input.0.is_finite() && input.1.is_finite())
        || ranges.iter().any(|r| !(r.0.is_finite() && r.1.is_finite()))
    {
        return Err(Error::NonFinite("calibration activations"));
    }
    Ok(Calibration {
        input,
        outputs: consumers.into_iter().zip(ranges).map(|(l, (lo, hi))| (l, lo, hi)).collect(),
    })
}
