use super::Tensor;
use crate::error::{Error, Result};

/// Softmax cross-entropy for one sample. Returns the loss and its gradient
/// with respect to the logits (`softmax - onehot`).
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::shape(
            "softmax_xent",
            format!("label {label} out of range for {} classes", z.len()),
        ));
    }
    let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
    let exps: Vec<f64> = z.iter().map(|v| (*v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (z[label] as f64 - max);
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_xent"));
    }
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| (e / sum - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    Ok((loss as f32, Tensor::new(logits.shape().to_vec(), grad)?))
}
