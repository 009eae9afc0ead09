use super::Tensor;
use crate::error::{Error, Result};

fn check_fc(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize)> {
    let [out, inp] = weight.shape() else {
        return Err(Error::shape(
            "fc",
            format!("weight must be out×in, got {:?}", weight.shape()),
        ));
    };
    if input.len() != *inp {
        return Err(Error::shape(
            "fc",
            format!("in_features: input has {}, weight expects {inp}", input.len()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != *out {
            return Err(Error::shape(
                "fc",
                format!("bias length {} != out_features {out}", b.len()),
            ));
        }
    }
    Ok((*out, *inp))
}

/// `y = W·x + b` over the flattened input.
pub fn fc_fwd(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (out, inp) = check_fc(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let y = (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            let acc = row.iter().zip(x).fold(0.0f32, |acc, (a, b)| acc + a * b);
            acc + bias.map_or(0.0, |b| b.data()[o])
        })
        .collect();
    Tensor::new(vec![out], y)
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn fc_bwd(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<FcGrads> {
    let (out, inp) = check_fc(input, weight, None)?;
    if grad_out.len() != out {
        return Err(Error::shape(
            "fc_bwd",
            format!("grad_out has {} values, expected {out}", grad_out.len()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gx = vec![0.0f32; inp];
    let mut gw = vec![0.0f32; out * inp];
    for o in 0..out {
        let go = g[o];
        for i in 0..inp {
            gw[o * inp + i] = go * x[i];
            gx[i] += go * w[o * inp + i];
        }
    }
    Ok(FcGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(vec![out, inp], gw)?,
        bias: Tensor::new(vec![out], g.to_vec())?,
    })
}
