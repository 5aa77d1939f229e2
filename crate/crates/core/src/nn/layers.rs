//! Affine map, activations and the softmax/cross-entropy head.

use super::{NnError, Result, Tensor};

/// `y = W x + b` with `W: [M, D]`.
pub fn linear(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, d) = linear_dims(x, weights, bias)?;
    let w = weights.data();
    let xs = x.data();
    let y = (0..m)
        .map(|i| bias.data()[i] + w[i * d..(i + 1) * d].iter().zip(xs).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok(Tensor::vector(y))
}

fn linear_dims(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    if weights.rank() != 2 {
        return Err(NnError::Shape(format!("linear weights must be rank 2, got {:?}", weights.shape())));
    }
    let (m, d) = (weights.shape()[0], weights.shape()[1]);
    if x.len() != d {
        return Err(NnError::Shape(format!("linear input has {} values, weights expect {d}", x.len())));
    }
    bias.expect_shape(&[m], "linear bias")?;
    Ok((m, d))
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(grad_y: &Tensor, x: &Tensor, weights: &Tensor) -> Result<LinearGrads> {
    let (m, d) = (weights.shape()[0], weights.shape()[1]);
    if grad_y.len() != m || x.len() != d {
        return Err(NnError::Shape(format!(
            "linear backward: grad {} / input {} vs weights {:?}",
            grad_y.len(),
            x.len(),
            weights.shape()
        )));
    }
    let w = weights.data();
    let gy = grad_y.data();
    let xs = x.data();
    let mut gx = vec![0.0; d];
    let mut gw = vec![0.0; m * d];
    for i in 0..m {
        let g = gy[i];
        let row = &w[i * d..(i + 1) * d];
        for ((gxj, &wij), (gwij, &xj)) in gx.iter_mut().zip(row).zip(gw[i * d..(i + 1) * d].iter_mut().zip(xs)) {
            *gxj += g * wij;
            *gwij = g * xj;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_raw(x.shape(), gx),
        weights: Tensor::from_raw(weights.shape(), gw),
        bias: Tensor::vector(gy.to_vec()),
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(grad: &Tensor, x: &Tensor) -> Tensor {
    Tensor::from_raw(
        x.shape(),
        grad.data().iter().zip(x.data()).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect(),
    )
}

/// Numerically stable softmax over a flat slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape(), softmax_slice(x.data()))
}

/// Jacobian-vector product of softmax: `p ⊙ (g - <g, p>)`.
pub fn softmax_backward(grad: &[f64], probs: &[f64]) -> Vec<f64> {
    let dot: f64 = grad.iter().zip(probs).map(|(g, p)| g * p).sum();
    grad.iter().zip(probs).map(|(g, p)| p * (g - dot)).collect()
}

/// `-ln probs[label]`.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f64> {
    let p = probs
        .data()
        .get(label)
        .ok_or_else(|| NnError::Argument(format!("label {label} out of range for {} classes", probs.len())))?;
    Ok(-p.max(f64::MIN_POSITIVE).ln())
}

/// Loss and logit gradient of softmax followed by cross-entropy.
///
/// The loss is computed as `logsumexp(z) - z[label]`; the gradient is
/// `softmax(z) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(NnError::Argument(format!("label {label} out of range for {} classes", z.len())));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let probs = softmax(logits);
    let mut grad = probs.data().to_vec();
    grad[label] -= 1.0;
    Ok((lse - z[label], probs, Tensor::from_raw(logits.shape(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_zero() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = Tensor::vector(vec![0.5, 0.25]);
        assert_eq!(linear(&x, &Tensor::zeros(&[2, 3]), &b).unwrap().data(), b.data());
        assert!(linear(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
        assert!(linear(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn linear_matches_dot_products() {
        let x = Tensor::vector(vec![0.3, -0.7, 1.1, 2.0]);
        let w = Tensor::new(&[2, 4], (0..8).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let b = Tensor::vector(vec![0.1, -0.2]);
        let y = linear(&x, &w, &b).unwrap();
        for i in 0..2 {
            let mut acc = b.data()[i];
            for j in 0..4 {
                acc += w.data()[i * 4 + j] * x.data()[j];
            }
            assert!((y.data()[i] - acc).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_properties() {
        let u = softmax(&Tensor::vector(vec![2.0; 5]));
        assert!(u.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let x = Tensor::vector(vec![0.1, -3.0, 2.5, 7.0]);
        let shifted = Tensor::vector(x.data().iter().map(|v| v + 123.456).collect());
        let (a, b) = (softmax(&x), softmax(&shifted));
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.max_abs_diff(&b) < 1e-12);
        let big = softmax(&Tensor::vector(vec![1000.0, 0.0]));
        assert!(big.is_finite());
    }

    #[test]
    fn cross_entropy_values() {
        let p = Tensor::vector(vec![0.25, 0.5, 0.25]);
        assert!((cross_entropy(&p, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(cross_entropy(&p, 3), Err(NnError::Argument(_))));
        let logits = Tensor::vector(vec![1.0, 2.0, 0.5]);
        let (loss, probs, grad) = softmax_cross_entropy(&logits, 1).unwrap();
        assert!((loss - cross_entropy(&probs, 1).unwrap()).abs() < 1e-12);
        assert!((grad.data()[1] - (probs.data()[1] - 1.0)).abs() < 1e-15);
        assert!(softmax_cross_entropy(&logits, 7).is_err());
    }

    #[test]
    fn relu_masks() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&Tensor::vector(vec![1.0, 1.0, 1.0]), &x);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }
}
