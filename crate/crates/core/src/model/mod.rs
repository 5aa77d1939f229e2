//! C3D activity classifier.
//!
//! Layout: optional spatial attention on the raw input frames, a stack of
//! conv blocks (`convs` 3×3×3 convolutions with ReLU, then a max pool), then
//! either a flatten or temporal attention over the pooled frames, and a head
//! of two ReLU fully connected layers plus a linear output layer.

mod attention;
mod checkpoint;
mod train;

pub use attention::{
    spatial_attention, spatial_attention_backward, temporal_attention, temporal_attention_backward,
    AttentionOutput, SpatialGrads, TemporalGrads,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use train::{evaluate_split, predict, train, train_with, EpochStats, TrainConfig, TrainHistory};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{normalize, CsiClip, DatasetError, NormStats};
use crate::nn::{
    conv3d, conv3d_backward_opt, linear, linear_backward, maxpool3d, maxpool3d_backward, pool_output_shape, relu,
    relu_backward, softmax_cross_entropy, ConvSpec, NnError, Tensor,
};
use crate::rng::{rng_from, tag};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    /// Pool window and stride along (time, rows, cols).
    pub pool: [usize; 3],
    #[serde(default = "one")]
    pub convs: usize,
}

fn one() -> usize {
    1
}

impl ConvBlock {
    pub fn new(out_channels: usize, pool: [usize; 3]) -> Self {
        Self { out_channels, pool, convs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C3DConfig {
    pub conv_blocks: Vec<ConvBlock>,
    pub fc_units: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub use_spatial_attention: bool,
    #[serde(default)]
    pub use_temporal_attention: bool,
    /// `(clip_length, rows, window_width)`.
    pub input_shape: [usize; 3],
}

impl C3DConfig {
    /// Three blocks `[(8,(1,2,2)), (16,(2,2,2)), (32,(2,2,2))]` and 128 fc units.
    pub fn default_for(n_classes: usize, input_shape: [usize; 3]) -> Self {
        Self {
            conv_blocks: vec![
                ConvBlock::new(8, [1, 2, 2]),
                ConvBlock::new(16, [2, 2, 2]),
                ConvBlock::new(32, [2, 2, 2]),
            ],
            fc_units: 128,
            n_classes,
            use_spatial_attention: false,
            use_temporal_attention: false,
            input_shape,
        }
    }

    /// Small network for gradient checks: input 4×6×8, two blocks, 8 fc units.
    pub fn reduced(n_classes: usize) -> Self {
        Self {
            conv_blocks: vec![ConvBlock::new(2, [1, 2, 2]), ConvBlock::new(3, [2, 2, 2])],
            fc_units: 8,
            n_classes,
            use_spatial_attention: false,
            use_temporal_attention: false,
            input_shape: [4, 6, 8],
        }
    }

    pub fn with_attention(mut self, spatial: bool, temporal: bool) -> Self {
        self.use_spatial_attention = spatial;
        self.use_temporal_attention = temporal;
        self
    }

    /// Shape after every block, ending with the pooled feature volume.
    pub fn block_shapes(&self) -> Result<Vec<[usize; 4]>> {
        if self.conv_blocks.is_empty() {
            return Err(ModelError::Config("need at least one conv block".into()));
        }
        if self.n_classes < 2 {
            return Err(ModelError::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.fc_units == 0 {
            return Err(ModelError::Config("fc_units must be >= 1".into()));
        }
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(ModelError::Config(format!("input shape {:?} has an empty axis", self.input_shape)));
        }
        let [l, x, y] = self.input_shape;
        let mut shape = [1, l, x, y];
        let mut out = Vec::with_capacity(self.conv_blocks.len());
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.convs == 0 {
                return Err(ModelError::Config(format!("block {i}: out_channels and convs must be >= 1")));
            }
            shape[0] = b.out_channels;
            shape = pool_output_shape(&shape, b.pool, b.pool)
                .map_err(|e| ModelError::Config(format!("block {i}: {e}")))?;
            out.push(shape);
        }
        Ok(out)
    }

    fn layout(&self) -> Result<Layout> {
        let shapes = self.block_shapes()?;
        let [c, l, x, y] = *shapes.last().expect("at least one block");
        let head_in = if self.use_temporal_attention { c * x * y } else { c * l * x * y };
        let mut slots = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, role: Role| {
            slots.push(Slot { name, shape, role });
            slots.len() - 1
        };
        let [_, rows, cols] = self.input_shape;
        let spatial = self.use_spatial_attention.then(|| {
            (
                push("spatial.w".into(), vec![rows, cols], Role::Attention),
                push("spatial.b".into(), vec![rows, cols], Role::Attention),
            )
        });
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (bi, b) in self.conv_blocks.iter().enumerate() {
            for ci in 0..b.convs {
                let spec = ConvSpec::same3(b.out_channels, in_ch);
                let w = push(format!("conv{bi}_{ci}.weight"), spec.kernel_shape.to_vec(), Role::Weight { fan_in: in_ch * 27 });
                let bias = push(format!("conv{bi}_{ci}.bias"), vec![b.out_channels], Role::Bias);
                convs.push(ConvSlot { spec, weight: w, bias, block: bi });
                in_ch = b.out_channels;
            }
        }
        let temporal = self.use_temporal_attention.then(|| {
            (
                push("temporal.u".into(), vec![head_in], Role::Attention),
                push("temporal.b".into(), vec![1], Role::Attention),
            )
        });
        let fc = self.fc_units;
        let dims = [(head_in, fc, "fc1"), (fc, fc, "fc2"), (fc, self.n_classes, "out")];
        let mut head = [(0, 0); 3];
        for (i, &(d_in, d_out, name)) in dims.iter().enumerate() {
            let role = if i == 2 { Role::Output } else { Role::Weight { fan_in: d_in } };
            head[i] = (push(format!("{name}.weight"), vec![d_out, d_in], role), push(format!("{name}.bias"), vec![d_out], Role::Bias));
        }
        Ok(Layout { slots, spatial, convs, temporal, head, block_shapes: shapes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    /// Followed by a ReLU: uniform ±sqrt(6/fan_in).
    Weight { fan_in: usize },
    /// Logits layer, zero-initialised so the first predictions are uniform.
    Output,
    Bias,
    Attention,
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    role: Role,
}

#[derive(Debug, Clone)]
struct ConvSlot {
    spec: ConvSpec,
    weight: usize,
    bias: usize,
    block: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    slots: Vec<Slot>,
    spatial: Option<(usize, usize)>,
    convs: Vec<ConvSlot>,
    temporal: Option<(usize, usize)>,
    head: [(usize, usize); 3],
    block_shapes: Vec<[usize; 4]>,
}

/// Per-parameter gradients, aligned with [`Model::params`].
pub type Gradients = Vec<Tensor>;

#[derive(Debug, Clone)]
pub struct Model {
    config: C3DConfig,
    layout: Layout,
    params: Vec<Tensor>,
}

struct Cache {
    input: Tensor,
    spatial_weights: Vec<Vec<f64>>,
    conv_in: Vec<Tensor>,
    conv_pre: Vec<Tensor>,
    pools: Vec<(Vec<usize>, Vec<usize>)>,
    temporal: Option<(Tensor, Vec<f64>)>,
    head_in: Vec<Tensor>,
    head_pre: Vec<Tensor>,
    logits: Tensor,
}

/// Rows of a `[T, C·X·Y]` matrix, row `t` holding time slice `t` of a `[C, T, X, Y]` volume.
fn volume_to_frames(vol: &Tensor) -> Tensor {
    let [c, t, x, y] = [vol.shape()[0], vol.shape()[1], vol.shape()[2], vol.shape()[3]];
    let xy = x * y;
    let src = vol.data();
    let mut out = vec![0.0; src.len()];
    for ti in 0..t {
        for ci in 0..c {
            let s = (ci * t + ti) * xy;
            let d = ti * c * xy + ci * xy;
            out[d..d + xy].copy_from_slice(&src[s..s + xy]);
        }
    }
    Tensor::from_raw(&[t, c * xy], out)
}

fn frames_to_volume(frames: &Tensor, shape: [usize; 4]) -> Tensor {
    let [c, t, x, y] = shape;
    let xy = x * y;
    let src = frames.data();
    let mut out = vec![0.0; src.len()];
    for ti in 0..t {
        for ci in 0..c {
            let d = (ci * t + ti) * xy;
            let s = ti * c * xy + ci * xy;
            out[d..d + xy].copy_from_slice(&src[s..s + xy]);
        }
    }
    Tensor::from_raw(&shape, out)
}

impl Model {
    /// Fresh model with deterministic initialisation from `seed`.
    pub fn build(config: C3DConfig, seed: u64) -> Result<Self> {
        let layout = config.layout()?;
        let mut rng = rng_from(seed, &[tag::INIT]);
        let params = layout
            .slots
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let bound = match s.role {
                    Role::Weight { fan_in } => (6.0 / fan_in as f64).sqrt(),
                    Role::Output | Role::Bias | Role::Attention => return Tensor::zeros(&s.shape),
                };
                Tensor::from_raw(&s.shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
            })
            .collect();
        Ok(Self { config, layout, params })
    }

    /// Rebuild from stored parameters; shapes must match the config's layout.
    pub fn from_parts(config: C3DConfig, params: Vec<Tensor>) -> Result<Self> {
        let layout = config.layout()?;
        if params.len() != layout.slots.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.slots.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&layout.slots) {
            p.expect_shape(&s.shape, &s.name)?;
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &C3DConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.layout.slots.iter().map(|s| s.name.as_str()).collect()
    }

    /// Whether weight decay applies to parameter `i` (weights only).
    pub fn is_decayed(&self, i: usize) -> bool {
        matches!(self.layout.slots[i].role, Role::Weight { .. } | Role::Output)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(ModelError::Config(format!("expected {} values, got {}", self.param_count(), flat.len())));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Shape `[1, L, X, Y]` expected by [`Model::forward`].
    pub fn input_shape(&self) -> [usize; 4] {
        let [l, x, y] = self.config.input_shape;
        [1, l, x, y]
    }

    /// Normalised network input for a stored clip.
    pub fn clip_input(&self, clip: &CsiClip, norm: &NormStats) -> Result<Tensor> {
        if clip.shape != self.config.input_shape {
            return Err(ModelError::Nn(NnError::Shape(format!(
                "clip shape {:?} does not match model input {:?}",
                clip.shape, self.config.input_shape
            ))));
        }
        Ok(Tensor::new(&self.input_shape(), normalize(&clip.volume, norm))?)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input)?.logits)
    }

    fn forward_cached(&self, input: &Tensor) -> Result<Cache> {
        input.expect_shape(&self.input_shape(), "model input")?;
        let p = &self.params;
        let mut x = input.clone();
        let mut spatial_weights = Vec::new();
        if let Some((w, b)) = self.layout.spatial {
            let [_, l, rows, cols] = self.input_shape();
            let n = rows * cols;
            let mut out = Vec::with_capacity(x.len());
            for f in 0..l {
                let frame = Tensor::from_raw(&[rows, cols], x.data()[f * n..(f + 1) * n].to_vec());
                let a = spatial_attention(&frame, &p[w], &p[b])?;
                out.extend_from_slice(a.output.data());
                spatial_weights.push(a.weights);
            }
            x = Tensor::from_raw(x.shape(), out);
        }

        let mut conv_in = Vec::new();
        let mut conv_pre = Vec::new();
        let mut pools = Vec::new();
        for (i, c) in self.layout.convs.iter().enumerate() {
            let z = conv3d(&x, &p[c.weight], &p[c.bias], &c.spec)?;
            let a = relu(&z);
            conv_in.push(x);
            conv_pre.push(z);
            x = a;
            let last_in_block = self.layout.convs.get(i + 1).is_none_or(|n| n.block != c.block);
            if last_in_block {
                let pool = self.config.conv_blocks[c.block].pool;
                let shape = x.shape().to_vec();
                let (y, idx) = maxpool3d(&x, pool, pool)?;
                pools.push((idx, shape));
                x = y;
            }
        }

        let (feat, temporal) = match self.layout.temporal {
            Some((u, b)) => {
                let frames = volume_to_frames(&x);
                let a = temporal_attention(&frames, &p[u], &p[b])?;
                (a.output, Some((frames, a.weights)))
            }
            None => {
                let n = x.len();
                (x.reshape(&[n])?, None)
            }
        };

        let mut head_in = Vec::with_capacity(3);
        let mut head_pre = Vec::with_capacity(2);
        let mut h = feat;
        for (i, &(w, b)) in self.layout.head.iter().enumerate() {
            let z = linear(&h, &p[w], &p[b])?;
            head_in.push(h);
            if i < 2 {
                h = relu(&z);
                head_pre.push(z);
            } else {
                h = z;
            }
        }
        if !h.is_finite() {
            return Err(ModelError::Nn(NnError::NonFinite("logits".into())));
        }
        Ok(Cache {
            input: input.clone(),
            spatial_weights,
            conv_in,
            conv_pre,
            pools,
            temporal,
            head_in,
            head_pre,
            logits: h,
        })
    }

    /// Cross-entropy loss, class probabilities and parameter gradients for one sample.
    pub fn loss_and_grad(&self, input: &Tensor, label: usize) -> Result<(f64, Tensor, Gradients)> {
        let cache = self.forward_cached(input)?;
        let (loss, probs, g_logits) = softmax_cross_entropy(&cache.logits, label)?;
        let grads = self.backward(&cache, g_logits)?;
        Ok((loss, probs, grads))
    }

    /// Loss only; the objective used by finite-difference checks.
    pub fn loss(&self, input: &Tensor, label: usize) -> Result<f64> {
        let logits = self.forward(input)?;
        Ok(softmax_cross_entropy(&logits, label)?.0)
    }

    fn backward(&self, cache: &Cache, g_logits: Tensor) -> Result<Gradients> {
        let p = &self.params;
        let mut grads: Vec<Option<Tensor>> = vec![None; p.len()];

        let mut g = g_logits;
        for i in (0..3).rev() {
            let (w, b) = self.layout.head[i];
            if i < 2 {
                g = relu_backward(&g, &cache.head_pre[i]);
            }
            let lg = linear_backward(&g, &cache.head_in[i], &p[w])?;
            grads[w] = Some(lg.weights);
            grads[b] = Some(lg.bias);
            g = lg.input;
        }

        let final_shape = *self.layout.block_shapes.last().expect("at least one block");
        let mut g = match (&self.layout.temporal, &cache.temporal) {
            (Some((u, b)), Some((frames, weights))) => {
                let tg = temporal_attention_backward(&g, frames, &p[*u], weights)?;
                grads[*u] = Some(tg.u);
                grads[*b] = Some(tg.b);
                frames_to_volume(&tg.frames, final_shape)
            }
            _ => g.reshape(&final_shape)?,
        };

        let need_input_grad = self.layout.spatial.is_some();
        let mut pool_iter = cache.pools.iter().rev();
        for (i, c) in self.layout.convs.iter().enumerate().rev() {
            let last_in_block = self.layout.convs.get(i + 1).is_none_or(|n| n.block != c.block);
            if last_in_block {
                let (idx, shape) = pool_iter.next().expect("one pool per block");
                g = maxpool3d_backward(&g, idx, shape)?;
            }
            g = relu_backward(&g, &cache.conv_pre[i]);
            let need = i > 0 || need_input_grad;
            let cg = conv3d_backward_opt(&g, &cache.conv_in[i], &p[c.weight], &c.spec, need)?;
            grads[c.weight] = Some(cg.kernels);
            grads[c.bias] = Some(cg.bias);
            if let Some(v) = cg.volume {
                g = v;
            }
        }

        if let Some((w, b)) = self.layout.spatial {
            let [_, l, rows, cols] = self.input_shape();
            let n = rows * cols;
            let mut gw = Tensor::zeros(&[rows, cols]);
            let mut gb = Tensor::zeros(&[rows, cols]);
            for f in 0..l {
                let frame = Tensor::from_raw(&[rows, cols], cache.input.data()[f * n..(f + 1) * n].to_vec());
                let go = Tensor::from_raw(&[rows, cols], g.data()[f * n..(f + 1) * n].to_vec());
                let sg = spatial_attention_backward(&go, &frame, &p[w], &cache.spatial_weights[f])?;
                gw.axpy(1.0, &sg.w)?;
                gb.axpy(1.0, &sg.b)?;
            }
            grads[w] = Some(gw);
            grads[b] = Some(gb);
        }

        Ok(grads
            .into_iter()
            .zip(&self.layout.slots)
            .map(|(g, s)| g.unwrap_or_else(|| Tensor::zeros(&s.shape)))
            .collect())
    }
}

/// Closed-form parameter count of a config.
pub fn parameter_count(config: &C3DConfig) -> Result<usize> {
    let shapes = config.block_shapes()?;
    let [c, l, x, y] = *shapes.last().expect("at least one block");
    let mut n = 0;
    let mut in_ch = 1;
    for b in &config.conv_blocks {
        for _ in 0..b.convs {
            n += b.out_channels * in_ch * 27 + b.out_channels;
            in_ch = b.out_channels;
        }
    }
    let head_in = if config.use_temporal_attention { c * x * y } else { c * l * x * y };
    if config.use_spatial_attention {
        n += 2 * config.input_shape[1] * config.input_shape[2];
    }
    if config.use_temporal_attention {
        n += head_in + 1;
    }
    let f = config.fc_units;
    n += head_in * f + f + f * f + f + f * config.n_classes + config.n_classes;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, softmax, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_layout_shapes() {
        let cfg = C3DConfig::default_for(6, [16, 90, 100]);
        let shapes = cfg.block_shapes().unwrap();
        assert_eq!(shapes, vec![[8, 16, 45, 50], [16, 8, 22, 25], [32, 4, 11, 12]]);
        let m = Model::build(cfg.clone(), 0).unwrap();
        assert_eq!(m.param_count(), parameter_count(&cfg).unwrap());
        // 1·8·27+8 + 8·16·27+16 + 16·32·27+32 + 16896·128+128 + 128·128+128 + 128·6+6
        assert_eq!(m.param_count(), 224 + 3472 + 13856 + 2_162_816 + 16_512 + 774);
    }

    #[test]
    fn parameter_count_matches_every_variant() {
        for (s, t) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut cfg = C3DConfig::reduced(3).with_attention(s, t);
            cfg.conv_blocks[1].convs = 2;
            let m = Model::build(cfg.clone(), 1).unwrap();
            assert_eq!(m.param_count(), parameter_count(&cfg).unwrap());
            assert_eq!(m.forward(&random_input(&m.input_shape(), 2)).unwrap().shape(), &[3]);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = C3DConfig::reduced(3);
        cfg.conv_blocks.clear();
        assert!(matches!(Model::build(cfg, 0), Err(ModelError::Config(_))));
        let mut cfg = C3DConfig::reduced(3);
        cfg.conv_blocks.push(ConvBlock::new(4, [4, 4, 4]));
        assert!(matches!(Model::build(cfg, 0), Err(ModelError::Config(_))));
        assert!(Model::build(C3DConfig::reduced(1), 0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Model::build(C3DConfig::reduced(4), 7).unwrap();
        let b = Model::build(C3DConfig::reduced(4), 7).unwrap();
        let c = Model::build(C3DConfig::reduced(4), 8).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(a.params()[0].data().iter().all(|v| v.abs() < bound));
        assert!(a.params()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_spatial_attention_matches_plain_model() {
        let plain = Model::build(C3DConfig::reduced(3), 3).unwrap();
        let att = Model::build(C3DConfig::reduced(3).with_attention(true, false), 3).unwrap();
        let x = random_input(&plain.input_shape(), 4);
        // Attention parameters come first and are zero; the remaining draws line up.
        assert_eq!(att.params()[2..].iter().map(|t| t.data().to_vec()).collect::<Vec<_>>(),
            plain.params().iter().map(|t| t.data().to_vec()).collect::<Vec<_>>());
        let d = att.forward(&x).unwrap().max_abs_diff(&plain.forward(&x).unwrap());
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn frame_layout_round_trips() {
        let v = random_input(&[3, 4, 2, 5], 9);
        let f = volume_to_frames(&v);
        assert_eq!(f.shape(), &[4, 30]);
        assert_eq!(f.data()[30 + 10], v.data()[(1 * 4 + 1) * 10]);
        assert_eq!(frames_to_volume(&f, [3, 4, 2, 5]), v);
    }

    #[test]
    fn full_network_gradients_match_finite_differences() {
        for (s, t) in [(false, false), (true, true)] {
            let mut model = Model::build(C3DConfig::reduced(3).with_attention(s, t), 11).unwrap();
            // Non-zero attention parameters so their effect is exercised.
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            for p in model.params_mut() {
                if p.data().iter().all(|&v| v == 0.0) {
                    p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
                }
            }
            let x = random_input(&model.input_shape(), 13);
            let (_, _, grads) = model.loss_and_grad(&x, 1).unwrap();
            let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
            let point = model.flat_params();
            let mut probe = model.clone();
            let r = grad_check(
                |v| {
                    probe.set_flat_params(v).unwrap();
                    probe.loss(&x, 1).unwrap()
                },
                &point,
                &analytic,
                GradCheckOptions::default(),
            );
            assert!(r.max_rel_error <= 1e-4, "attention ({s},{t}): {r:?}");
        }
    }

    #[test]
    fn input_gradient_path_through_spatial_attention() {
        let model = Model::build(C3DConfig::reduced(3).with_attention(true, false), 5).unwrap();
        let x = random_input(&model.input_shape(), 6);
        let (loss, probs, _) = model.loss_and_grad(&x, 2).unwrap();
        let direct = -softmax(&model.forward(&x).unwrap()).data()[2].ln();
        assert!((loss - direct).abs() < 1e-12);
        assert!((probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = Model::build(C3DConfig::reduced(3), 0).unwrap();
        assert!(model.forward(&Tensor::zeros(&[1, 4, 6, 7])).is_err());
    }
}
