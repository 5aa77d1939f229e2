//! Soft attention over frame pixels and over frames.
//!
//! Spatial: each pixel gets a score from its own affine map `w_p x_p + b_p`;
//! scores are softmax-normalised across the frame and the frame is reweighted
//! as `P · α_p · x_p`, where `P` is the pixel count. Uniform weights (zero
//! parameters) therefore reproduce the input exactly.
//!
//! Temporal: each frame's feature vector is scored by a shared affine map
//! `u·f_t / √D + b`, `D` the feature length; the output is the
//! softmax-weighted sum of frame features. The `1/√D` keeps one SGD step on
//! `u` from saturating the softmax when `D` is in the thousands.

use crate::nn::{softmax_backward, softmax_slice, NnError, Result, Tensor};

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Tensor,
    /// Softmax weights, a point on the probability simplex.
    pub weights: Vec<f64>,
}

pub struct SpatialGrads {
    pub frame: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape(format!("{what}: {:?} vs frame {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Reweight one `[rows, cols]` frame.
pub fn spatial_attention(frame: &Tensor, w: &Tensor, b: &Tensor) -> Result<AttentionOutput> {
    check_same(w, frame, "spatial attention weights")?;
    check_same(b, frame, "spatial attention bias")?;
    let x = frame.data();
    let scores: Vec<f64> = x.iter().zip(w.data()).zip(b.data()).map(|((x, w), b)| w * x + b).collect();
    let alpha = softmax_slice(&scores);
    let p = x.len() as f64;
    let out = x.iter().zip(&alpha).map(|(x, a)| p * a * x).collect();
    Ok(AttentionOutput { output: Tensor::from_raw(frame.shape(), out), weights: alpha })
}

pub fn spatial_attention_backward(
    grad_out: &Tensor,
    frame: &Tensor,
    w: &Tensor,
    weights: &[f64],
) -> Result<SpatialGrads> {
    check_same(grad_out, frame, "spatial attention grad")?;
    let x = frame.data();
    let g = grad_out.data();
    let p = x.len() as f64;
    let g_alpha: Vec<f64> = g.iter().zip(x).map(|(g, x)| g * p * x).collect();
    let g_scores = softmax_backward(&g_alpha, weights);
    let gx = g
        .iter()
        .zip(weights)
        .zip(g_scores.iter().zip(w.data()))
        .map(|((g, a), (gs, w))| g * p * a + gs * w)
        .collect();
    let gw = g_scores.iter().zip(x).map(|(gs, x)| gs * x).collect();
    Ok(SpatialGrads {
        frame: Tensor::from_raw(frame.shape(), gx),
        w: Tensor::from_raw(frame.shape(), gw),
        b: Tensor::from_raw(frame.shape(), g_scores),
    })
}

pub struct TemporalGrads {
    pub frames: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// Weighted sum over the rows of a `[T, D]` frame-feature matrix.
pub fn temporal_attention(frames: &Tensor, u: &Tensor, b: &Tensor) -> Result<AttentionOutput> {
    let (t, d) = temporal_dims(frames, u, b)?;
    let f = frames.data();
    let scale = score_scale(d);
    let scores: Vec<f64> = (0..t)
        .map(|i| b.data()[0] + scale * f[i * d..(i + 1) * d].iter().zip(u.data()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let w = softmax_slice(&scores);
    let mut out = vec![0.0; d];
    for (i, wi) in w.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(&f[i * d..(i + 1) * d]) {
            *o += wi * x;
        }
    }
    Ok(AttentionOutput { output: Tensor::vector(out), weights: w })
}

fn score_scale(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

fn temporal_dims(frames: &Tensor, u: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    if frames.rank() != 2 || frames.shape()[0] == 0 {
        return Err(NnError::Shape(format!("temporal attention needs [T>=1, D] frames, got {:?}", frames.shape())));
    }
    let (t, d) = (frames.shape()[0], frames.shape()[1]);
    u.expect_shape(&[d], "temporal attention u")?;
    b.expect_shape(&[1], "temporal attention b")?;
    Ok((t, d))
}

pub fn temporal_attention_backward(
    grad_out: &Tensor,
    frames: &Tensor,
    u: &Tensor,
    weights: &[f64],
) -> Result<TemporalGrads> {
    let (t, d) = temporal_dims(frames, u, &Tensor::zeros(&[1]))?;
    grad_out.expect_shape(&[d], "temporal attention grad")?;
    let f = frames.data();
    let g = grad_out.data();
    let g_w: Vec<f64> = (0..t).map(|i| f[i * d..(i + 1) * d].iter().zip(g).map(|(a, b)| a * b).sum()).collect();
    let g_s = softmax_backward(&g_w, weights);
    let scale = score_scale(d);
    let mut gu = vec![0.0; d];
    let mut gf = vec![0.0; t * d];
    for i in 0..t {
        let row = &f[i * d..(i + 1) * d];
        for j in 0..d {
            gu[j] += scale * g_s[i] * row[j];
            gf[i * d + j] = weights[i] * g[j] + scale * g_s[i] * u.data()[j];
        }
    }
    Ok(TemporalGrads {
        frames: Tensor::from_raw(frames.shape(), gf),
        u: Tensor::vector(gu),
        b: Tensor::vector(vec![g_s.iter().sum()]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    #[test]
    fn zero_params_spatial_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[6, 8], &mut rng, 2.0);
        let out = spatial_attention(&x, &Tensor::zeros(&[6, 8]), &Tensor::zeros(&[6, 8])).unwrap();
        assert!(out.output.max_abs_diff(&x) < 1e-12);
        assert!(out.weights.iter().all(|&a| (a - 1.0 / 48.0).abs() < 1e-15));
    }

    #[test]
    fn spatial_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random(&[5, 7], &mut rng, 3.0);
            let out = spatial_attention(&x, &random(&[5, 7], &mut rng, 2.0), &random(&[5, 7], &mut rng, 2.0)).unwrap();
            assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.weights.iter().all(|&a| a >= 0.0));
        }
        assert!(spatial_attention(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn spatial_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = [4, 5];
        let x = random(&shape, &mut rng, 1.0);
        let w = random(&shape, &mut rng, 1.0);
        let b = random(&shape, &mut rng, 1.0);
        let probe = random(&shape, &mut rng, 1.0);
        let objective = |x: &Tensor, w: &Tensor, b: &Tensor| spatial_attention(x, w, b).unwrap().output.dot(&probe);
        let fwd = spatial_attention(&x, &w, &b).unwrap();
        let g = spatial_attention_backward(&probe, &x, &w, &fwd.weights).unwrap();
        let opts = GradCheckOptions::default();
        let rx = grad_check(|v| objective(&Tensor::new(&shape, v.to_vec()).unwrap(), &w, &b), x.data(), g.frame.data(), opts);
        let rw = grad_check(|v| objective(&x, &Tensor::new(&shape, v.to_vec()).unwrap(), &b), w.data(), g.w.data(), opts);
        let rb = grad_check(|v| objective(&x, &w, &Tensor::new(&shape, v.to_vec()).unwrap()), b.data(), g.b.data(), opts);
        for r in [rx, rw, rb] {
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn temporal_single_frame_and_identical_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random(&[1, 6], &mut rng, 1.0);
        let out = temporal_attention(&f, &random(&[6], &mut rng, 1.0), &Tensor::vector(vec![0.3])).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert!(out.output.data().iter().zip(f.data()).all(|(a, b)| (a - b).abs() < 1e-15));

        let row: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let frames = Tensor::new(&[4, 6], row.iter().cycle().take(24).copied().collect()).unwrap();
        let out = temporal_attention(&frames, &random(&[6], &mut rng, 3.0), &Tensor::vector(vec![-1.0])).unwrap();
        assert!(out.output.data().iter().zip(&row).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(temporal_attention(&Tensor::zeros(&[0, 6]), &Tensor::zeros(&[6]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn temporal_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, d) = (5, 7);
        let f = random(&[t, d], &mut rng, 1.0);
        let u = random(&[d], &mut rng, 1.0);
        let b = Tensor::vector(vec![0.2]);
        let probe = random(&[d], &mut rng, 1.0);
        let objective = |f: &Tensor, u: &Tensor, b: &Tensor| temporal_attention(f, u, b).unwrap().output.dot(&probe);
        let fwd = temporal_attention(&f, &u, &b).unwrap();
        let g = temporal_attention_backward(&probe, &f, &u, &fwd.weights).unwrap();
        let opts = GradCheckOptions::default();
        let rf = grad_check(|v| objective(&Tensor::new(&[t, d], v.to_vec()).unwrap(), &u, &b), f.data(), g.frames.data(), opts);
        let ru = grad_check(|v| objective(&f, &Tensor::vector(v.to_vec()), &b), u.data(), g.u.data(), opts);
        for r in [rf, ru] {
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
        // A shared score offset cancels in the softmax, so its gradient is zero.
        let rb = grad_check(|v| objective(&f, &u, &Tensor::vector(v.to_vec())), b.data(), g.b.data(), opts);
        assert!(g.b.data()[0].abs() < 1e-12 && rb.numeric.abs() < 1e-9, "{rb:?}");
    }
}
