//! Straight-line f64 reference ops and finite-difference helpers.

pub fn out_dim(i: usize, k: usize, s: usize, p: usize) -> usize {
    (i + 2 * p - k) / s + 1
}

#[derive(Debug, Clone, Copy)]
pub struct ConvCfg {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

impl ConvCfg {
    pub fn out(&self) -> (usize, usize) {
        (out_dim(self.h, self.k, self.s, self.p), out_dim(self.w, self.k, self.s, self.p))
    }
}

fn at(x: &[f64], c: usize, h: usize, w: usize, ch: usize, y: isize, xx: isize) -> Option<f64> {
    (y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w).then(|| x[(ch * h + y as usize) * w + xx as usize])
        .filter(|_| ch < c)
}

pub fn conv(x: &[f64], wt: &[f64], b: &[f64], c: &ConvCfg) -> Vec<f64> {
    let (oh, ow) = c.out();
    let mut out = Vec::new();
    for o in 0..c.c_out {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = b[o];
                for i in 0..c.c_in {
                    for kh in 0..c.k {
                        for kw in 0..c.k {
                            let iy = (y * c.s + kh) as isize - c.p as isize;
                            let ix = (xo * c.s + kw) as isize - c.p as isize;
                            if let Some(v) = at(x, c.c_in, c.h, c.w, i, iy, ix) {
                                acc += wt[((o * c.c_in + i) * c.k + kh) * c.k + kw] * v;
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn fc(x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + x.iter().enumerate().map(|(i, v)| wt[o * x.len() + i] * v).sum::<f64>())
        .collect()
}

/// Batch statistics per channel over every sample and position.
pub fn bn_train(xs: &[Vec<f64>], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let c = gamma.len();
    let plane = xs[0].len() / c;
    let n = (xs.len() * plane) as f64;
    let mut out = xs.to_vec();
    for ch in 0..c {
        let vals: Vec<f64> = xs.iter().flat_map(|x| x[ch * plane..(ch + 1) * plane].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for (x, o) in xs.iter().zip(out.iter_mut()) {
            for j in ch * plane..(ch + 1) * plane {
                o[j] = gamma[ch] * (x[j] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    out
}

pub fn bn_eval(x: &[f64], gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Vec<f64> {
    let plane = x.len() / gamma.len();
    x.iter()
        .enumerate()
        .map(|(j, v)| {
            let ch = j / plane;
            gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]
        })
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Max pooling that ignores padded cells; returns the winning flat indices.
pub fn maxpool(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (out_dim(h, k, s, p), out_dim(w, k, s, p));
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best: Option<(f64, usize)> = None;
                for kh in 0..k {
                    for kw in 0..k {
                        let iy = (y * s + kh) as isize - p as isize;
                        let ix = (xo * s + kw) as isize - p as isize;
                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                            continue;
                        }
                        let idx = (ch * h + iy as usize) * w + ix as usize;
                        if best.map_or(true, |(b, _)| x[idx] > b) {
                            best = Some((x[idx], idx));
                        }
                    }
                }
                let (v, i) = best.unwrap();
                out.push(v);
                arg.push(i);
            }
        }
    }
    (out, arg)
}

pub fn xent(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    lse - logits[label]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

/// Central differences of `f` at `x` with step `h`.
pub fn fd_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n|_2 / (|a|_2 + |n|_2)`, zero when both vanish.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (*a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt()
        + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
