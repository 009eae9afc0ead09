use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn check_conv(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (c_in, h, w) = input.dims3()?;
    let [c_out, w_in, k, k2] = weight.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be O×I×K×K, got {:?}", weight.shape()),
        ));
    };
    let (c_out, k) = (*c_out, *k);
    if *w_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input channels: input has {c_in}, weight expects {w_in}"),
        ));
    }
    if *k2 != k {
        return Err(Error::shape("conv2d", format!("kernel must be square, got {k}×{k2}")));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} != output channels {c_out}", b.len()),
            ));
        }
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    let h_out = conv_out_dim(h, k, stride, padding)
        .ok_or_else(|| Error::shape("conv2d", format!("height: kernel {k} exceeds padded height {}", h + 2 * padding)))?;
    let w_out = conv_out_dim(w, k, stride, padding)
        .ok_or_else(|| Error::shape("conv2d", format!("width: kernel {k} exceeds padded width {}", w + 2 * padding)))?;
    Ok((c_in, h, w, c_out, k, h_out, w_out))
}

/// Direct convolution. Each output is accumulated over input channel, then
/// kernel row, then kernel column, and the bias is added last.
pub fn conv2d_fwd(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, h, w, c_out, k, h_out, w_out) = check_conv(input, weight, bias, stride, padding)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; c_out * h_out * w_out];
    let pad = padding as isize;
    for o in 0..c_out {
        let b = bias.map_or(0.0, |b| b.data()[o]);
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut acc = 0.0f32;
                for i in 0..c_in {
                    for kh in 0..k {
                        let ih = (oh * stride + kh) as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let row = (i * h + ih as usize) * w;
                        let wrow = ((o * c_in + i) * k + kh) * k;
                        for kw in 0..k {
                            let iw = (ow * stride + kw) as isize - pad;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            acc += wt[wrow + kw] * x[row + iw as usize];
                        }
                    }
                }
                out[(o * h_out + oh) * w_out + ow] = acc + b;
            }
        }
    }
    Tensor::new(vec![c_out, h_out, w_out], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_bwd(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (c_in, h, w, c_out, k, h_out, w_out) = check_conv(input, weight, None, stride, padding)?;
    if grad_out.shape() != [c_out, h_out, w_out] {
        return Err(Error::shape(
            "conv2d_bwd",
            format!(
                "grad_out {:?} does not match forward output [{c_out}, {h_out}, {w_out}]",
                grad_out.shape()
            ),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut gx = vec![0.0f32; x.len()];
    let mut gw = vec![0.0f32; wt.len()];
    let mut gb = vec![0.0f32; c_out];
    let pad = padding as isize;
    for o in 0..c_out {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let go = g[(o * h_out + oh) * w_out + ow];
                gb[o] += go;
                if go == 0.0 {
                    continue;
                }
                for i in 0..c_in {
                    for kh in 0..k {
                        let ih = (oh * stride + kh) as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let row = (i * h + ih as usize) * w;
                        let wrow = ((o * c_in + i) * k + kh) * k;
                        for kw in 0..k {
                            let iw = (ow * stride + kw) as isize - pad;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let xi = row + iw as usize;
                            gw[wrow + kw] += go * x[xi];
                            gx[xi] += go * wt[wrow + kw];
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![c_out], gb)?,
    })
}
