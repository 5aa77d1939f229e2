//! Finite-difference verification of every differentiable operator.
//!
//! Each check contracts the operator output with a fixed random probe `r`
//! and compares the hand-written adjoint applied to `r` against central
//! differences of `⟨r, f(x)⟩`. Losses are checked directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{
    spatial_attention, spatial_attention_backward, temporal_attention, temporal_attention_backward, C3DConfig, Model,
};
use crate::nn::{
    conv3d, conv3d_backward, grad_check, linear, linear_backward, maxpool3d, maxpool3d_backward, relu,
    relu_backward, softmax_cross_entropy, ConvSpec, GradCheckOptions, GradCheckReport, Tensor,
};
use crate::rng::derive_seed;

/// Every checked operator, in report order.
pub const CHECKS: [&str; 9] = [
    "conv3d",
    "maxpool3d",
    "linear",
    "relu",
    "softmax_cross_entropy",
    "spatial_attention",
    "temporal_attention",
    "c3d_network",
    "c3d_network_attention",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Small operator cases and the 4×6×8 two-block network.
    Reduced,
    /// Additionally uses the desk-default network geometry for the end-to-end
    /// checks (slow: one forward pass per probed coordinate).
    Desk,
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub tolerance: f64,
    pub grad: GradCheckOptions,
    pub seed: u64,
    pub scale: Scale,
    /// Name of a check whose adjoint is deliberately corrupted (negative control).
    pub corrupt: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { tolerance: 1e-4, grad: GradCheckOptions::default(), seed: 0, scale: Scale::Reduced, corrupt: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite")
}

/// Simulated adjoint bug: entries reversed and scaled.
fn corrupt(g: &mut [f64]) {
    g.reverse();
    g.iter_mut().for_each(|v| *v *= 1.05);
}

/// Worst of several reports; coordinates are summed.
fn worst(reports: Vec<GradCheckReport>) -> (f64, usize) {
    let coords = reports.iter().map(|r| r.coords_checked).sum();
    let err = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    (err, coords)
}

struct Ctx {
    opts: GradCheckOptions,
    faulty: bool,
}

impl Ctx {
    /// Check one argument of an operator given its analytic gradient.
    fn check<F: FnMut(&Tensor) -> f64>(&self, x: &Tensor, analytic: &Tensor, mut f: F) -> GradCheckReport {
        let mut a = analytic.data().to_vec();
        if self.faulty {
            corrupt(&mut a);
        }
        let shape = x.shape().to_vec();
        grad_check(|v| f(&Tensor::new(&shape, v.to_vec()).expect("finite probe")), x.data(), &a, self.opts)
    }
}

fn check_conv(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let spec = ConvSpec { kernel_shape: [3, 2, 2, 3, 2], stride: [1, 2, 1], padding: [1, 0, 2] };
    let v = random(&[2, 4, 7, 5], rng);
    let k = random(&spec.kernel_shape, rng);
    let b = random(&[3], rng);
    let out_shape = spec.output_shape(v.shape()).expect("valid case");
    let r = random(&out_shape, rng);
    let g = conv3d_backward(&r, &v, &k, &spec).expect("valid case");
    let obj = |v: &Tensor, k: &Tensor, b: &Tensor| conv3d(v, k, b, &spec).expect("valid").dot(&r);
    vec![
        ctx.check(&v, g.volume.as_ref().expect("requested"), |x| obj(x, &k, &b)),
        ctx.check(&k, &g.kernels, |x| obj(&v, x, &b)),
        ctx.check(&b, &g.bias, |x| obj(&v, &k, x)),
    ]
}

fn check_pool(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    // Distinct values spaced far beyond the FD step keep every argmax stable.
    let n = 2 * 4 * 6 * 5;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let v = Tensor::new(&[2, 4, 6, 5], vals).expect("finite");
    let (out, idx) = maxpool3d(&v, [2, 2, 2], [2, 2, 1]).expect("valid case");
    let r = random(out.shape(), rng);
    let g = maxpool3d_backward(&r, &idx, v.shape()).expect("valid case");
    vec![ctx.check(&v, &g, |x| maxpool3d(x, [2, 2, 2], [2, 2, 1]).expect("valid").0.dot(&r))]
}

fn check_linear(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = random(&[7], rng);
    let w = random(&[4, 7], rng);
    let b = random(&[4], rng);
    let r = random(&[4], rng);
    let g = linear_backward(&r, &x, &w).expect("valid case");
    let obj = |x: &Tensor, w: &Tensor, b: &Tensor| linear(x, w, b).expect("valid").dot(&r);
    vec![
        ctx.check(&x, &g.input, |t| obj(t, &w, &b)),
        ctx.check(&w, &g.weights, |t| obj(&x, t, &b)),
        ctx.check(&b, &g.bias, |t| obj(&x, &w, t)),
    ]
}

fn check_relu(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    // Keep inputs away from the kink at zero.
    let vals = (0..40)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let x = Tensor::new(&[5, 8], vals).expect("finite");
    let r = random(&[5, 8], rng);
    vec![ctx.check(&x, &relu_backward(&r, &x), |t| relu(t).dot(&r))]
}

fn check_softmax_ce(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let z = random(&[6], rng);
    let (_, _, g) = softmax_cross_entropy(&z, 2).expect("valid case");
    vec![ctx.check(&z, &g, |t| softmax_cross_entropy(t, 2).expect("valid").0)]
}

fn check_spatial(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = random(&[5, 6], rng);
    let w = random(&[5, 6], rng);
    let b = random(&[5, 6], rng);
    let r = random(&[5, 6], rng);
    let fwd = spatial_attention(&x, &w, &b).expect("valid case");
    let g = spatial_attention_backward(&r, &x, &w, &fwd.weights).expect("valid case");
    let obj = |x: &Tensor, w: &Tensor, b: &Tensor| spatial_attention(x, w, b).expect("valid").output.dot(&r);
    vec![
        ctx.check(&x, &g.frame, |t| obj(t, &w, &b)),
        ctx.check(&w, &g.w, |t| obj(&x, t, &b)),
        ctx.check(&b, &g.b, |t| obj(&x, &w, t)),
    ]
}

fn check_temporal(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let f = random(&[5, 8], rng);
    let u = random(&[8], rng);
    let b = Tensor::vector(vec![0.3]);
    let r = random(&[8], rng);
    let fwd = temporal_attention(&f, &u, &b).expect("valid case");
    let g = temporal_attention_backward(&r, &f, &u, &fwd.weights).expect("valid case");
    let obj = |f: &Tensor, u: &Tensor| temporal_attention(f, u, &b).expect("valid").output.dot(&r);
    // The score offset b cancels in the softmax; its zero gradient is checked
    // in the unit tests rather than as a relative error here.
    vec![ctx.check(&f, &g.frames, |t| obj(t, &u)), ctx.check(&u, &g.u, |t| obj(&f, t))]
}

fn check_network(ctx: &Ctx, rng: &mut ChaCha8Rng, attention: bool, scale: Scale) -> Vec<GradCheckReport> {
    let cfg = match scale {
        Scale::Reduced => C3DConfig::reduced(3),
        Scale::Desk => C3DConfig::default_for(6, [16, 90, 100]),
    }
    .with_attention(attention, attention);
    let mut model = Model::build(cfg, rng.random()).expect("valid config");
    // Fresh models have zero biases, attention and output weights; randomise
    // them so every path carries gradient.
    for p in model.params_mut() {
        if p.data().iter().all(|&v| v == 0.0) {
            p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    let x = random(&model.input_shape(), rng);
    let label = 1;
    let (_, _, grads) = model.loss_and_grad(&x, label).expect("valid case");
    let analytic = Tensor::vector(grads.iter().flat_map(|g| g.data().iter().copied()).collect());
    let point = Tensor::vector(model.flat_params());
    let mut probe = model.clone();
    // With spatial attention on, the w/b gradients depend on the adjoint of
    // every conv layer's input, so this also checks the input path.
    vec![ctx.check(&point, &analytic, |p| {
        probe.set_flat_params(p.data()).expect("same length");
        probe.loss(&x, label).expect("valid")
    })]
}

/// Run every check; results follow [`CHECKS`] order.
pub fn run_gradient_suite(opts: &SuiteOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let ctx = Ctx { opts: opts.grad, faulty: opts.corrupt.as_deref() == Some(name) };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[i as u64]));
            let reports = match name {
                "conv3d" => check_conv(&ctx, &mut rng),
                "maxpool3d" => check_pool(&ctx, &mut rng),
                "linear" => check_linear(&ctx, &mut rng),
                "relu" => check_relu(&ctx, &mut rng),
                "softmax_cross_entropy" => check_softmax_ce(&ctx, &mut rng),
                "spatial_attention" => check_spatial(&ctx, &mut rng),
                "temporal_attention" => check_temporal(&ctx, &mut rng),
                "c3d_network" => check_network(&ctx, &mut rng, false, opts.scale),
                "c3d_network_attention" => check_network(&ctx, &mut rng, true, opts.scale),
                _ => unreachable!("every name in CHECKS is handled"),
            };
            let (max_rel_error, coords_checked) = worst(reports);
            CheckResult {
                name,
                max_rel_error,
                coords_checked,
                tolerance: opts.tolerance,
                passed: max_rel_error <= opts.tolerance,
            }
        })
        .collect()
}
