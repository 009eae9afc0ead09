use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with statistics of the current batch.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
}

impl BnParams {
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving update of the running statistics from a
    /// train-mode forward pass. The running variance uses the unbiased
    /// estimate.
    pub fn update_running(&mut self, cache: &BnCache) {
        if cache.mode != BnMode::Train {
            return;
        }
        let n = cache.count as f32;
        let correction = if cache.count > 1 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] =
                (1.0 - m) * self.running_var[c] + m * cache.batch_var[c] * correction;
        }
    }

    /// Per-channel affine map `y = a·x + b` equivalent to eval-mode
    /// normalization.
    pub fn eval_affine(&self) -> (Vec<f32>, Vec<f32>) {
        (0..self.channels())
            .map(|c| {
                let a = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
                (a, self.beta[c] - self.running_mean[c] * a)
            })
            .unzip()
    }
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub mode: BnMode,
    pub x_hat: Vec<Tensor>,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
    /// Number of values per channel the statistics were taken over.
    pub count: usize,
}

fn check_batch(inputs: &[Tensor], channels: usize) -> Result<(usize, usize)> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("batchnorm", "empty batch"))?;
    let (c, h, w) = first.dims3()?;
    if c != channels {
        return Err(Error::shape(
            "batchnorm",
            format!("channels: input has {c}, parameters have {channels}"),
        ));
    }
    if inputs.iter().any(|t| t.shape() != first.shape()) {
        return Err(Error::shape("batchnorm", "batch members differ in shape"));
    }
    Ok((c, h * w))
}

pub fn batchnorm_fwd(
    inputs: &[Tensor],
    params: &BnParams,
    mode: BnMode,
) -> Result<(Vec<Tensor>, BnCache)> {
    let (channels, plane) = check_batch(inputs, params.channels())?;
    let count = inputs.len() * plane;
    let (mean, var) = match mode {
        BnMode::Eval => (params.running_mean.clone(), params.running_var.clone()),
        BnMode::Train => {
            let mut mean = vec![0.0f32; channels];
            let mut var = vec![0.0f32; channels];
            for c in 0..channels {
                let vals = || inputs.iter().flat_map(|t| &t.data()[c * plane..(c + 1) * plane]);
                let m = vals().map(|v| *v as f64).sum::<f64>() / count as f64;
                let v = vals().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / count as f64;
                mean[c] = m as f32;
                var[c] = v as f32;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + params.eps).sqrt()).collect();
    let mut outs = Vec::with_capacity(inputs.len());
    let mut x_hats = Vec::with_capacity(inputs.len());
    for t in inputs {
        let mut xh = t.clone();
        let mut y = t.clone();
        for c in 0..channels {
            let range = c * plane..(c + 1) * plane;
            for (h, o) in xh.data_mut()[range.clone()].iter_mut().zip(&mut y.data_mut()[range]) {
                *h = (*h - mean[c]) * inv_std[c];
                *o = params.gamma[c] * *h + params.beta[c];
            }
        }
        x_hats.push(xh);
        outs.push(y);
    }
    let cache = BnCache {
        mode,
        x_hat: x_hats,
        inv_std,
        batch_mean: mean,
        batch_var: var,
        count,
    };
    Ok((outs, cache))
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub inputs: Vec<Tensor>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Backward pass. In train mode the gradient flows through the batch
/// statistics; running statistics are treated as constants.
pub fn batchnorm_bwd(cache: &BnCache, params: &BnParams, grad_outs: &[Tensor]) -> Result<BnGrads> {
    if grad_outs.len() != cache.x_hat.len() {
        return Err(Error::shape(
            "batchnorm_bwd",
            format!("{} upstream tensors for a batch of {}", grad_outs.len(), cache.x_hat.len()),
        ));
    }
    let (channels, plane) = check_batch(grad_outs, params.channels())?;
    let mut g_gamma = vec![0.0f32; channels];
    let mut g_beta = vec![0.0f32; channels];
    for (g, xh) in grad_outs.iter().zip(&cache.x_hat) {
        if g.shape() != xh.shape() {
            return Err(Error::shape("batchnorm_bwd", "upstream shape differs from forward"));
        }
        for c in 0..channels {
            let range = c * plane..(c + 1) * plane;
            for (gv, hv) in g.data()[range.clone()].iter().zip(&xh.data()[range]) {
                g_beta[c] += gv;
                g_gamma[c] += gv * hv;
            }
        }
    }
    let n = cache.count as f32;
    let mut inputs = Vec::with_capacity(grad_outs.len());
    for (g, xh) in grad_outs.iter().zip(&cache.x_hat) {
        let mut gi = g.clone();
        for c in 0..channels {
            let k = params.gamma[c] * cache.inv_std[c];
            let range = c * plane..(c + 1) * plane;
            for (o, hv) in gi.data_mut()[range.clone()].iter_mut().zip(&xh.data()[range]) {
                *o = match cache.mode {
                    BnMode::Eval => k * *o,
                    BnMode::Train => k * (*o - g_beta[c] / n - hv * g_gamma[c] / n),
                };
            }
        }
        inputs.push(gi);
    }
    Ok(BnGrads {
        inputs,
        gamma: g_gamma,
        beta: g_beta,
    })
}

/// Folds eval-mode batch normalization into the preceding convolution or
/// fully connected layer. Works on any weight whose leading axis is the
/// output channel.
pub fn fuse_batchnorm(
    weight: &Tensor,
    bias: Option<&Tensor>,
    bn: &BnParams,
) -> Result<(Tensor, Tensor)> {
    let out = *weight
        .shape()
        .first()
        .ok_or_else(|| Error::shape("fuse_batchnorm", "scalar weight"))?;
    if out != bn.channels() {
        return Err(Error::shape(
            "fuse_batchnorm",
            format!("weight has {out} output channels, batch norm has {}", bn.channels()),
        ));
    }
    let per = weight.len() / out.max(1);
    let (a, b) = bn.eval_affine();
    let mut w = weight.clone();
    for (o, chunk) in w.data_mut().chunks_mut(per.max(1)).enumerate().take(out) {
        for v in chunk {
            *v *= a[o];
        }
    }
    let fused_bias = (0..out)
        .map(|o| bias.map_or(0.0, |t| t.data()[o]) * a[o] + b[o])
        .collect();
    Ok((w, Tensor::new(vec![out], fused_bias)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_fwd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_stats_fuse_to_near_identity() {
        let w = Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.1 - 0.5);
        let b = Tensor::new(vec![2], vec![0.3, -0.2]).unwrap();
        let (fw, fb) = fuse_batchnorm(&w, Some(&b), &BnParams::identity(2)).unwrap();
        let s = 1.0 / (1.0f32 + 1e-5).sqrt();
        for (x, y) in fw.data().iter().zip(w.data()) {
            assert!((x - y * s).abs() < 1e-7);
        }
        assert!((fb.data()[0] - 0.3 * s).abs() < 1e-7);
    }

    #[test]
    fn pure_scaling_doubles_weights() {
        let w = Tensor::from_fn(&[3, 2], |i| i as f32 - 2.0);
        let b = Tensor::new(vec![3], vec![1.0, 2.0, -3.0]).unwrap();
        let mut bn = BnParams::identity(3);
        bn.gamma = vec![2.0; 3];
        bn.beta = vec![0.5, 0.0, -1.0];
        bn.eps = 0.0;
        let (fw, fb) = fuse_batchnorm(&w, Some(&b), &bn).unwrap();
        for (x, y) in fw.data().iter().zip(w.data()) {
            assert_eq!(*x, 2.0 * y);
        }
        assert_eq!(fb.data(), &[2.5, 4.0, -7.0]);
    }

    #[test]
    fn fused_conv_matches_conv_then_bn() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut r = |shape: &[usize], lo: f32, hi: f32| Tensor::from_fn(shape, |_| rng.gen_range(lo..hi));
        let x = r(&[3, 7, 7], -1.0, 1.0);
        let w = r(&[4, 3, 3, 3], -0.5, 0.5);
        let b = r(&[4], -0.5, 0.5);
        let bn = BnParams {
            gamma: r(&[4], 0.5, 2.0).into_data(),
            beta: r(&[4], -1.0, 1.0).into_data(),
            running_mean: r(&[4], -0.3, 0.3).into_data(),
            running_var: r(&[4], 0.2, 2.0).into_data(),
            eps: 1e-5,
            momentum: 0.1,
        };
        let y = conv2d_fwd(&x, &w, Some(&b), 1, 1).unwrap();
        let (ybn, _) = batchnorm_fwd(&[y], &bn, BnMode::Eval).unwrap();
        let (fw, fb) = fuse_batchnorm(&w, Some(&b), &bn).unwrap();
        let yf = conv2d_fwd(&x, &fw, Some(&fb), 1, 1).unwrap();
        for (a, b) in ybn[0].data().iter().zip(yf.data()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn train_mode_normalizes_batch() {
        let xs = vec![
            Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap(),
            Tensor::new(vec![1, 1, 2], vec![5.0, 7.0]).unwrap(),
        ];
        let mut p = BnParams::identity(1);
        p.eps = 0.0;
        let (ys, cache) = batchnorm_fwd(&xs, &p, BnMode::Train).unwrap();
        assert_eq!(cache.batch_mean, vec![4.0]);
        assert_eq!(cache.batch_var, vec![5.0]);
        let total: f32 = ys.iter().flat_map(|t| t.data()).sum();
        assert!(total.abs() < 1e-6);
        p.update_running(&cache);
        assert!((p.running_mean[0] - 0.4).abs() < 1e-6);
        // unbiased: 5 * 4/3
        assert!((p.running_var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-5);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let xs = vec![Tensor::zeros(&[2, 2, 2])];
        assert!(batchnorm_fwd(&xs, &BnParams::identity(3), BnMode::Eval).is_err());
        assert!(batchnorm_fwd(&[], &BnParams::identity(3), BnMode::Eval).is_err());
    }
}
