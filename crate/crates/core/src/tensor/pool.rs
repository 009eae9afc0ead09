use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a max-pool window along one axis. Every window must
/// overlap at least one real cell, so padding is limited to `kernel - 1`.
pub fn pool_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if padding >= kernel {
        return None;
    }
    super::conv_out_dim(input, kernel, stride, padding)
}

/// Max-pooling with `-inf` padding. Returns the pooled map and, for every
/// output cell, the flat input index that won (first maximum in scan order).
pub fn maxpool_fwd(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    let dims = pool_out_dim(h, kernel, stride, padding).zip(pool_out_dim(w, kernel, stride, padding));
    let Some((h_out, w_out)) = dims else {
        return Err(Error::shape(
            "maxpool",
            format!(
                "window {kernel} (stride {stride}, padding {padding}) does not fit a {h}×{w} input"
            ),
        ));
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * h_out * w_out);
    let mut argmax = Vec::with_capacity(c * h_out * w_out);
    let pad = padding as isize;
    for ch in 0..c {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for kh in 0..kernel {
                    let ih = (oh * stride + kh) as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kw in 0..kernel {
                        let iw = (ow * stride + kw) as isize - pad;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let idx = (ch * h + ih as usize) * w + iw as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, h_out, w_out], out)?, argmax))
}

pub fn maxpool_bwd(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape(
            "maxpool_bwd",
            format!("{} argmax entries for {} upstream values", argmax.len(), grad_out.len()),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let n = grad.len();
    let g = grad.data_mut();
    for (&idx, &go) in argmax.iter().zip(grad_out.data()) {
        if idx >= n {
            return Err(Error::shape("maxpool_bwd", format!("argmax {idx} outside input of {n}")));
        }
        g[idx] += go;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_picks_maximum() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool_fwd(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn constant_input_routes_to_first_cell() {
        let x = Tensor::full(&[1, 4, 4], 0.7);
        let (y, arg) = maxpool_fwd(&x, 2, 2, 0).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.7));
        assert_eq!(arg, vec![0, 2, 8, 10]);
        let g = maxpool_bwd(x.shape(), &arg, &Tensor::full(&[1, 2, 2], 1.0)).unwrap();
        let expect: Vec<f32> = (0..16)
            .map(|i| if [0, 2, 8, 10].contains(&i) { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g.data(), expect.as_slice());
    }

    #[test]
    fn padding_never_wins() {
        let x = Tensor::full(&[1, 2, 2], -5.0);
        let (y, _) = maxpool_fwd(&x, 2, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|v| *v == -5.0));
    }

    #[test]
    fn overlapping_windows_accumulate() {
        let x = Tensor::new(vec![1, 2, 3], vec![0.0, 9.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let (y, arg) = maxpool_fwd(&x, 2, 1, 0).unwrap();
        assert_eq!(y.data(), &[9.0, 9.0]);
        let g = maxpool_bwd(x.shape(), &arg, &Tensor::full(&[1, 1, 2], 1.5)).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(maxpool_fwd(&x, 3, 1, 0).is_err());
        assert!(maxpool_fwd(&x, 2, 2, 2).is_err());
    }
}
