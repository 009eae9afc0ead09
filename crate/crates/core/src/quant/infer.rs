use rayon::prelude::*;

use super::{round_half_even, QUnit, QuantModel, UnitKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Dims, ModelGraph, PoolSpec};
use crate::tensor::{pool_out_dim, Tensor};

/// `clamp(round_half_even(acc·M) + zp, -128, 127)`.
pub fn requantize(acc: i32, multiplier: f64, zero_point: i32) -> i8 {
    (round_half_even(acc as f64 * multiplier) + zero_point as f64).clamp(-128.0, 127.0) as i8
}

/// `acc[o,y,x] = Σ_{i,kh,kw} w·(x - zp_in) + b`, padding contributing zero.
pub fn conv_acc(u: &QUnit, x: &[i8]) -> Result<Vec<i32>> {
    let UnitKind::Conv { k, stride, pad } = u.kind else {
        return Err(Error::Simulation("conv_acc on a fc unit".into()));
    };
    let Dims { c: ic, h, w } = u.input;
    if x.len() != ic * h * w {
        return Err(Error::shape("conv_acc", format!("input has {} values, expected {}", x.len(), ic * h * w)));
    }
    let Dims { c: oc, h: oh, w: ow } = u.acc;
    let zp = u.in_q.zero_point;
    let mut out = vec![0i32; oc * oh * ow];
    for o in 0..oc {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = 0i32;
                for i in 0..ic {
                    for kh in 0..k {
                        let iy = (y * stride + kh) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let ix = (xo * stride + kw) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xv = x[(i * h + iy as usize) * w + ix as usize] as i32 - zp;
                            acc += u.weight[((o * ic + i) * k + kh) * k + kw] as i32 * xv;
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = acc + u.bias[o];
            }
        }
    }
    Ok(out)
}

pub fn fc_acc(u: &QUnit, x: &[i8]) -> Result<Vec<i32>> {
    let n_in = u.input.numel();
    if x.len() != n_in {
        return Err(Error::shape("fc_acc", format!("input has {} values, expected {n_in}", x.len())));
    }
    let zp = u.in_q.zero_point;
    Ok((0..u.acc.c)
        .map(|o| {
            let row = &u.weight[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).map(|(w, v)| *w as i32 * (*v as i32 - zp)).sum::<i32>() + u.bias[o]
        })
        .collect())
}

/// Max-pooling over accumulators; padded cells never win.
pub fn pool_acc(acc: &[i32], dims: Dims, p: &PoolSpec) -> Result<(Vec<i32>, Dims)> {
    let oh = pool_out_dim(dims.h, p.k, p.stride, p.pad);
    let ow = pool_out_dim(dims.w, p.k, p.stride, p.pad);
    let Some((oh, ow)) = oh.zip(ow) else {
        return Err(Error::shape("pool_acc", "window does not fit"));
    };
    let mut out = Vec::with_capacity(dims.c * oh * ow);
    for c in 0..dims.c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = i32::MIN;
                for kh in 0..p.k {
                    let iy = (y * p.stride + kh) as isize - p.pad as isize;
                    if iy < 0 || iy >= dims.h as isize {
                        continue;
                    }
                    for kw in 0..p.k {
                        let ix = (x * p.stride + kw) as isize - p.pad as isize;
                        if ix < 0 || ix >= dims.w as isize {
                            continue;
                        }
                        best = best.max(acc[(c * dims.h + iy as usize) * dims.w + ix as usize]);
                    }
                }
                out.push(best);
            }
        }
    }
    Ok((out, Dims::new(dims.c, oh, ow)))
}

/// Integer intermediates of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTrace {
    pub input: Vec<i8>,
    /// Requantized output of every unit but the classifier.
    pub outputs: Vec<Vec<i8>>,
    pub final_acc: Vec<i32>,
    pub logits: Vec<f32>,
}

pub fn quant_forward(q: &QuantModel, image: &Tensor) -> Result<QuantTrace> {
    let want = q.arch.input.as_shape();
    if image.shape() != want {
        return Err(Error::shape("quant_infer", format!("image {:?}, expected {want:?}", image.shape())));
    }
    let input: Vec<i8> = image.data().iter().map(|v| q.input_q.quantize(*v)).collect();
    let mut x = input.clone();
    let mut outputs = Vec::with_capacity(q.units.len());
    for u in &q.units {
        let mut acc = match u.kind {
            UnitKind::Conv { .. } => conv_acc(u, &x)?,
            UnitKind::Fc => fc_acc(u, &x)?,
        };
        let mut dims = u.acc;
        for p in &u.pools {
            (acc, dims) = pool_acc(&acc, dims, p)?;
        }
        match (u.out_q, u.multiplier()) {
            (Some(o), Some(m)) => {
                let floor = if u.relu { o.zero_point.clamp(-128, 127) as i8 } else { i8::MIN };
                x = acc.iter().map(|a| requantize(*a, m, o.zero_point).max(floor)).collect();
                outputs.push(x.clone());
            }
            _ => {
                if u.relu {
                    acc.iter_mut().for_each(|a| *a = (*a).max(0));
                }
                let s = u.acc_scale();
                let logits = acc.iter().map(|a| (*a as f64 * s) as f32).collect();
                return Ok(QuantTrace {
                    input,
                    outputs,
                    final_acc: acc,
                    logits,
                });
            }
        }
    }
    Err(Error::Model("quantized model has no classifier".into()))
}

/// Integer-path logits, dequantized at the classifier.
pub fn quant_infer(q: &QuantModel, image: &Tensor) -> Result<Vec<f32>> {
    Ok(quant_forward(q, image)?.logits)
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples where the INT8 and float models predict the same class.
pub fn agreement(graph: &ModelGraph, q: &QuantModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("agreement needs a non-empty set".into()));
    }
    let same: Vec<bool> = data
        .images
        .par_iter()
        .map(|x| Ok(graph.predict(x)? == argmax(&quant_infer(q, x)?)))
        .collect::<Result<_>>()?;
    Ok(same.iter().filter(|s| **s).count() as f64 / same.len() as f64)
}
