//! Small fully-convolutional encoder-decoder producing a per-pixel
//! foreground probability map.
//!
//! With `channels = [c0, c1, ..., cd]` the network is
//!
//! ```text
//! enc0 = relu(conv(x, 1 -> c0))                       at H x W
//! enc_i = relu(conv(pool(enc_{i-1}), c_{i-1} -> c_i)) at H/2^i
//! bottom = relu(conv(enc_d, cd -> cd))
//! dec_i = relu(conv(concat(up(dec_{i+1}), enc_i), c_{i+1}+c_i -> c_i))
//! probs = sigmoid(conv1x1(dec_0, c0 -> 1))
//! ```
//!
//! so spatial size is preserved when `H` and `W` are divisible by `2^d`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Value};

const CHECKPOINT_MAGIC: &[u8; 8] = b"BXSEGCK1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input {height}x{width} collapses below 1x1 after {pools} poolings")]
    SpatialCollapse {
        height: usize,
        width: usize,
        pools: usize,
    },
    #[error("input {height}x{width} is not divisible by {factor}")]
    Indivisible {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("malformed checkpoint at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel width per resolution level; its length is the depth.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub seed: u64,
    /// Start the 1x1 head kernel at zero so the initial map is uniform.
    pub zero_head: bool,
    /// Initial head bias, i.e. the logit of the initial uniform map. The
    /// default puts the initial foreground mass below the box-size lower
    /// bound; a map starting at 0.5 violates the upper size bound and the
    /// emptiness constraint so strongly that weakly supervised training
    /// drives every pixel into sigmoid saturation before it can separate
    /// foreground from background.
    pub head_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            kernel: 3,
            seed: 0,
            zero_head: true,
            head_bias: -6.0,
        }
    }
}

impl ModelConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn pools(&self) -> usize {
        self.channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.is_empty() {
            return Err(ModelError::Config("at least one level is required".into()));
        }
        if self.channels.contains(&0) {
            return Err(ModelError::Config("channel widths must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(ModelError::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if !self.head_bias.is_finite() {
            return Err(ModelError::Config(format!("head bias must be finite, got {}", self.head_bias)));
        }
        if self.pools() >= usize::BITS as usize {
            return Err(ModelError::Config(format!("depth {} is too large", self.depth())));
        }
        Ok(())
    }

    /// Checks that an `height x width` input survives the pooling stack.
    pub fn check_input(&self, height: usize, width: usize) -> Result<(), ModelError> {
        let factor = 1usize << self.pools();
        if height / factor == 0 || width / factor == 0 {
            return Err(ModelError::SpatialCollapse {
                height,
                width,
                pools: self.pools(),
            });
        }
        if !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
            return Err(ModelError::Indivisible { height, width, factor });
        }
        Ok(())
    }

    /// Parameter shapes in declaration order, kernels followed by biases.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .iter()
            .flat_map(|l| [vec![l.out_c, l.in_c, l.k, l.k], vec![l.out_c]])
            .collect()
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let ch = &self.channels;
        let k = self.kernel;
        let d = ch.len();
        let mut layers = Vec::new();
        let mut prev = 1;
        for &c in ch {
            layers.push(LayerSpec { in_c: prev, out_c: c, k });
            prev = c;
        }
        layers.push(LayerSpec {
            in_c: ch[d - 1],
            out_c: ch[d - 1],
            k,
        });
        for i in (0..d - 1).rev() {
            layers.push(LayerSpec {
                in_c: ch[i + 1] + ch[i],
                out_c: ch[i],
                k,
            });
        }
        layers.push(LayerSpec {
            in_c: ch[0],
            out_c: 1,
            k: 1,
        });
        layers
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSpec {
    in_c: usize,
    out_c: usize,
    k: usize,
}

/// Per-pixel foreground map of one image, living on a tape.
///
/// `logits` and `probs` are `[H, W]` nodes with `probs = sigmoid(logits)`.
/// Losses that involve `log(1 - s)` are evaluated from the logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionMap {
    pub logits: Value,
    pub probs: Value,
    pub height: usize,
    pub width: usize,
}

impl PredictionMap {
    /// Wraps a trainable `[H, W]` logit tensor.
    pub fn from_logits(tape: &mut Tape, logits: Tensor) -> Result<Self, AutodiffError> {
        let (height, width) = match *logits.shape() {
            [h, w] => (h, w),
            _ => {
                return Err(AutodiffError::Rank {
                    op: "prediction map",
                    expected: 2,
                    shape: logits.shape().to_vec(),
                })
            }
        };
        let logits = tape.leaf(logits);
        Ok(Self::from_logit_value(tape, logits, height, width))
    }

    fn from_logit_value(tape: &mut Tape, logits: Value, height: usize, width: usize) -> Self {
        let probs = tape.sigmoid(logits);
        Self {
            logits,
            probs,
            height,
            width,
        }
    }

    pub fn probs<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        tape.value(self.probs).data()
    }
}

/// Output of one recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    /// Tape handles of the parameters, aligned with [`SegModel::params`].
    pub params: Vec<Value>,
    pub maps: Vec<PredictionMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl SegModel {
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config.layers();
        let last = layers.len() - 1;
        let mut params = Vec::with_capacity(2 * layers.len());
        for (i, l) in layers.iter().enumerate() {
            let shape = [l.out_c, l.in_c, l.k, l.k];
            let fan_in = l.in_c * l.k * l.k;
            let fan_out = l.out_c * l.k * l.k;
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            // The generator advances even for a zero head so the remaining
            // parameters do not depend on that flag.
            let mut data: Vec<f64> = (0..n).map(|_| rng.random_range(-a..a)).collect();
            if i == last && config.zero_head {
                data.fill(0.0);
            }
            params.push(Tensor::new(shape.to_vec(), data)?);
            let bias = if i == last { config.head_bias } else { 0.0 };
            params.push(Tensor::filled(&[l.out_c], bias));
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass for a batch of `[H, W]` images.
    pub fn forward_batch(&self, tape: &mut Tape, images: &[&Tensor]) -> Result<Forward, ModelError> {
        let first = images
            .first()
            .ok_or_else(|| ModelError::Config("empty batch".into()))?;
        let (h, w) = match *first.shape() {
            [h, w] => (h, w),
            _ => {
                return Err(AutodiffError::Rank {
                    op: "forward",
                    expected: 2,
                    shape: first.shape().to_vec(),
                }
                .into())
            }
        };
        self.config.check_input(h, w)?;
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.shape() != [h, w] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "forward batch",
                    left: vec![h, w],
                    right: img.shape().to_vec(),
                }
                .into());
            }
            data.extend_from_slice(img.data());
        }
        let n = images.len();
        let x = tape.constant(Tensor::new(vec![n, 1, h, w], data)?);

        let params: Vec<Value> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let pad = self.config.kernel / 2;
        let d = self.config.depth();
        let mut layer = 0;
        let mut conv = |tape: &mut Tape, input: Value, padding: usize| -> Result<Value, AutodiffError> {
            let out = tape.conv2d(input, params[2 * layer], params[2 * layer + 1], padding)?;
            layer += 1;
            Ok(out)
        };

        let mut skips = Vec::with_capacity(d);
        let mut cur = x;
        for level in 0..d {
            if level > 0 {
                cur = tape.maxpool2d(cur, 2)?;
            }
            let c = conv(tape, cur, pad)?;
            cur = tape.relu(c);
            skips.push(cur);
        }
        let c = conv(tape, cur, pad)?;
        cur = tape.relu(c);
        for level in (0..d - 1).rev() {
            let up = tape.upsample_nearest(cur, 2)?;
            let cat = tape.concat_channels(&[up, skips[level]])?;
            let c = conv(tape, cat, pad)?;
            cur = tape.relu(c);
        }
        let logits = conv(tape, cur, 0)?;

        let mut maps = Vec::with_capacity(n);
        for i in 0..n {
            let one = tape.select_batch(logits, i)?;
            let plane = tape.reshape(one, &[h, w])?;
            maps.push(PredictionMap::from_logit_value(tape, plane, h, w));
        }
        Ok(Forward { params, maps })
    }

    /// Records the forward pass for a single image.
    pub fn forward(&self, tape: &mut Tape, image: &Tensor) -> Result<(Vec<Value>, PredictionMap), ModelError> {
        let f = self.forward_batch(tape, &[image])?;
        Ok((f.params, f.maps[0]))
    }

    /// Foreground probabilities for an image, without keeping the tape.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let (_, map) = self.forward(&mut tape, image)?;
        Ok(tape.value(map.probs).clone())
    }

    /// Writes the magic, the config as TOML text (u32 length prefix), then
    /// every parameter as little-endian `f64` in declaration order.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        let text = toml::to_string(&self.config)
            .map_err(|e| ModelError::Config(format!("cannot serialize config: {e}")))?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        for p in &self.params {
            for v in p.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |offset: usize, reason: &str| ModelError::Checkpoint {
            offset,
            reason: reason.to_string(),
        };
        if bytes.len() < 8 {
            return Err(bad(bytes.len(), "truncated magic"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad(0, "bad magic"));
        }
        if bytes.len() < 12 {
            return Err(bad(bytes.len(), "truncated config length"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = 12 + len;
        if bytes.len() < body {
            return Err(bad(bytes.len(), "truncated config text"));
        }
        let text = std::str::from_utf8(&bytes[12..body]).map_err(|e| bad(12 + e.valid_up_to(), "config is not UTF-8"))?;
        let config: ModelConfig = toml::from_str(text).map_err(|e| bad(12, &format!("config: {e}")))?;
        let mut model = Self::build(&config)?;
        let expected = body + 8 * model.num_params();
        if bytes.len() != expected {
            let at = bytes.len().min(expected);
            return Err(bad(
                at,
                &format!("expected {} bytes of parameters, found {}", expected - body, bytes.len() - body),
            ));
        }
        let mut chunks = bytes[body..].chunks_exact(8);
        for p in model.params.iter_mut() {
            for v in p.data_mut() {
                *v = f64::from_le_bytes(chunks.next().expect("length checked").try_into().expect("8 bytes"));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
