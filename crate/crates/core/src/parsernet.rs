//! Toy fully convolutional representation learner with three heads:
//! instance-agnostic parsing, affinity features and a person-count regressor.
//!
//! The trunk is three convolutions (5×5 stride 2, 3×3 stride 2, 3×3 stride 1,
//! zero padded, relu), so every output cell covers a 4×4 block of input
//! pixels. The parsing and affinity heads are 1×1 convolutions on the trunk
//! output; the count head is a linear layer on globally averaged trunk
//! features.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affinity::majority_vote;
use crate::error::{Error, Result};
use crate::numcore::{softmax_rows, ParamSet, RowMap, Tape, Tensor, Var};
use crate::scene::{Grid, BACKGROUND, NUM_CLASSES};

/// Input pixels per trunk cell along each axis.
pub const DOWNSCALE: usize = 4;

/// (name, kernel size, stride) of the trunk layers.
const TRUNK: [(&str, usize, usize); 3] = [("conv1", 5, 2), ("conv2", 3, 2), ("conv3", 3, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub trunk_width: usize,
    pub feature_channels: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            trunk_width: 16,
            feature_channels: 8,
            classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_width == 0 || self.feature_channels == 0 || self.classes < 2 {
            return Err(Error::Config(
                "model needs trunk_width >= 1, feature_channels >= 1 and classes >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Expected shape of every parameter tensor.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let w = self.trunk_width;
        let mut s = BTreeMap::new();
        let mut cin = 3;
        for (name, k, _) in TRUNK {
            s.insert(format!("{name}.w"), vec![k * k * cin, w]);
            s.insert(format!("{name}.b"), vec![w]);
            cin = w;
        }
        s.insert("seg.w".into(), vec![w, self.classes]);
        s.insert("seg.b".into(), vec![self.classes]);
        s.insert("aff.w".into(), vec![w, self.feature_channels]);
        s.insert("aff.b".into(), vec![self.feature_channels]);
        s.insert("count.w".into(), vec![w, 1]);
        s.insert("count.b".into(), vec![1]);
        s
    }
}

/// Generator-side learnable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: ParamSet,
}

impl ModelParams {
    /// He-normal weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&shape)
                } else {
                    let normal = Normal::new(0.0, (2.0 / shape[0] as f64).sqrt()).unwrap();
                    let n = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| normal.sample(&mut rng)).collect()).unwrap()
                };
                (name, t)
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Checks names, shapes and finiteness.
    pub fn from_parts(config: ModelConfig, tensors: ParamSet) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Invariant(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &shapes {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Invariant(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Invariant(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Ok(Self { config, tensors })
    }
}

/// Instance-agnostic parsing at trunk resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsingMap {
    /// `H'×W'×C`
    pub logits: Tensor,
    /// Softmax of `logits` over the last axis.
    pub probabilities: Tensor,
}

impl ParsingMap {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        if logits.shape().len() != 3 {
            return Err(Error::arg(format!("logits must be H×W×C, got {:?}", logits.shape())));
        }
        let s = logits.shape().to_vec();
        let flat = logits.clone().reshape(vec![s[0] * s[1], s[2]])?;
        let probabilities = softmax_rows(&flat).reshape(s)?;
        Ok(Self { logits, probabilities })
    }

    /// Parsing that puts all mass on `labels` (used for ground-truth probes).
    pub fn one_hot(labels: &Grid<u8>, classes: usize) -> Result<Self> {
        let (h, w) = (labels.height(), labels.width());
        let mut p = Tensor::zeros(&[h, w, classes]);
        for (k, &c) in labels.data().iter().enumerate() {
            if c as usize >= classes {
                return Err(Error::arg(format!("label {c} outside {classes} classes")));
            }
            p.data_mut()[k * classes + c as usize] = 1.0;
        }
        // logits are only informative up to softmax; log of one-hot clipped
        let logits = p.map(|v| if v > 0.0 { 0.0 } else { -1e3 });
        Ok(Self { logits, probabilities: p })
    }

    pub fn height(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[2]
    }

    /// Most probable class per cell, lowest class id on ties.
    pub fn argmax(&self) -> Grid<u8> {
        let c = self.classes();
        let p = self.probabilities.data();
        Grid::from_fn(self.height(), self.width(), |y, x| {
            let row = &p[(y * self.width() + x) * c..][..c];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
    }

    /// Foreground probability `1 − p(background)` per cell, as `H'×W'×1`.
    pub fn foreground(&self) -> Tensor {
        let c = self.classes();
        let data = self
            .probabilities
            .data()
            .chunks(c)
            .map(|row| 1.0 - row[BACKGROUND as usize])
            .collect();
        Tensor::new(vec![self.height(), self.width(), 1], data).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub parsing: ParsingMap,
    /// `H''×W''×C_F`, same grid as the parsing map.
    pub features: Tensor,
    pub count: f64,
}

/// Forward pass recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `(H'·W')×C`
    pub logits: Var,
    /// `(H'·W')×C_F`
    pub features: Var,
    /// `1×1`
    pub count: Var,
    pub height: usize,
    pub width: usize,
}

/// im2col index for a zero-padded `k×k` convolution with the given stride.
fn conv_index(h: usize, w: usize, cin: usize, k: usize, stride: usize) -> (Vec<Option<usize>>, usize, usize) {
    let (ho, wo) = (h / stride, w / stride);
    let pad = (k / 2) as isize;
    let mut index = Vec::with_capacity(ho * wo * k * k * cin);
    for oy in 0..ho {
        for ox in 0..wo {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad;
                    let ix = (ox * stride + kx) as isize - pad;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                    for c in 0..cin {
                        index.push(inside.then(|| (iy as usize * w + ix as usize) * cin + c));
                    }
                }
            }
        }
    }
    (index, ho, wo)
}

/// Records the forward pass. `vars` holds a tape variable for every
/// parameter name (trainable or constant).
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    config: &ModelConfig,
    image: &Tensor,
) -> Result<ForwardVars> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::arg(format!("expected H×W×3 image, got {s:?}")));
    }
    let (mut h, mut w) = (s[0], s[1]);
    if h == 0 || w == 0 || h % DOWNSCALE != 0 || w % DOWNSCALE != 0 {
        return Err(Error::arg(format!("image {h}x{w} not divisible by {DOWNSCALE}")));
    }
    let get = |name: &str| {
        vars.get(name)
            .copied()
            .ok_or_else(|| Error::arg(format!("missing parameter {name}")))
    };
    // centre intensities on zero
    let mut x = tape.constant(image.map(|v| 2.0 * v - 1.0).reshape(vec![h * w, 3])?);
    let mut cin = 3;
    for (name, k, stride) in TRUNK {
        let (index, ho, wo) = conv_index(h, w, cin, k, stride);
        let cols = tape.gather(x, Arc::new(index), vec![ho * wo, k * k * cin])?;
        let y = tape.matmul(cols, get(&format!("{name}.w"))?)?;
        let y = tape.add_bias(y, get(&format!("{name}.b"))?)?;
        x = tape.relu(y);
        (h, w, cin) = (ho, wo, config.trunk_width);
    }
    let logits = tape.matmul(x, get("seg.w")?)?;
    let logits = tape.add_bias(logits, get("seg.b")?)?;
    let features = tape.matmul(x, get("aff.w")?)?;
    let features = tape.add_bias(features, get("aff.b")?)?;
    let gap = Arc::new(RowMap {
        inputs: h * w,
        rows: vec![(0..h * w).map(|i| (i, 1.0 / (h * w) as f64)).collect()],
    });
    let pooled = tape.row_pool(x, gap)?;
    let count = tape.matmul(pooled, get("count.w")?)?;
    let count = tape.add_bias(count, get("count.b")?)?;
    Ok(ForwardVars {
        logits,
        features,
        count,
        height: h,
        width: w,
    })
}

pub fn forward(params: &ModelParams, image: &Tensor) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = params
        .tensors
        .iter()
        .map(|(n, t)| (n.clone(), tape.constant(t.clone())))
        .collect();
    let out = forward_on_tape(&mut tape, &vars, &params.config, image)?;
    let (h, w) = (out.height, out.width);
    let logits = tape.value(out.logits).clone().reshape(vec![h, w, params.config.classes])?;
    let features = tape
        .value(out.features)
        .clone()
        .reshape(vec![h, w, params.config.feature_channels])?;
    let count = tape.scalar(out.count);
    if !logits.is_finite() || !features.is_finite() || !count.is_finite() {
        return Err(Error::NonFinite("forward pass".into()));
    }
    Ok(ForwardOutput {
        parsing: ParsingMap::from_logits(logits)?,
        features,
        count,
    })
}

/// Mean pixel-wise cross-entropy of the parsing map against `gt`.
pub fn seg_loss(parsing: &ParsingMap, gt: &Grid<u8>) -> Result<f64> {
    if gt.height() != parsing.height() || gt.width() != parsing.width() {
        return Err(Error::arg("ground truth and parsing map differ in size"));
    }
    let c = parsing.classes();
    let p = parsing.probabilities.data();
    let total: f64 = gt
        .data()
        .iter()
        .enumerate()
        .map(|(k, &g)| -p[k * c + g as usize].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / gt.len() as f64)
}

/// One-hot `n×C` constant used by the tape cross-entropy.
fn one_hot_rows(gt: &Grid<u8>, classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[gt.len(), classes]);
    for (k, &g) in gt.data().iter().enumerate() {
        if g as usize >= classes {
            return Err(Error::arg(format!("label {g} outside {classes} classes")));
        }
        t.data_mut()[k * classes + g as usize] = 1.0;
    }
    Ok(t)
}

/// Cross-entropy on a tape; `logits` is `n×C` in the raster order of `gt`.
pub fn seg_loss_on_tape(tape: &mut Tape, logits: Var, gt: &Grid<u8>) -> Result<Var> {
    let c = tape.value(logits).cols();
    if tape.value(logits).rows() != gt.len() {
        return Err(Error::arg("ground truth and logits differ in size"));
    }
    let hot = tape.constant(one_hot_rows(gt, c)?);
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.mul(logp, hot)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / gt.len() as f64))
}

pub fn count_loss(count_pred: f64, persons: usize) -> f64 {
    (count_pred - persons as f64).powi(2)
}

pub fn count_loss_on_tape(tape: &mut Tape, count: Var, persons: usize) -> Result<Var> {
    let d = tape.add_scalar(count, -(persons as f64));
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq))
}

/// Person count used at inference: nearest integer, at least 1.
pub fn rounded_count(count_pred: f64) -> usize {
    if count_pred.is_finite() {
        count_pred.round().max(1.0) as usize
    } else {
        1
    }
}

/// Part labels at trunk resolution by majority vote over each cell.
pub fn downsample_labels(labels: &Grid<u8>, factor: usize) -> Result<Grid<u8>> {
    let (h, w) = (labels.height(), labels.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::arg(format!("{h}x{w} not divisible by {factor}")));
    }
    Ok(Grid::from_fn(h / factor, w / factor, |y, x| {
        majority_vote((0..factor * factor).map(|i| labels.get(y * factor + i / factor, x * factor + i % factor)))
    }))
}

/// Bilinear upsampling of an `h×w×C` tensor by an integer factor with
/// half-pixel centres and edge clamping.
pub fn upsample_bilinear(t: &Tensor, factor: usize) -> Result<Tensor> {
    if t.shape().len() != 3 || factor == 0 {
        return Err(Error::arg("upsample_bilinear expects H×W×C and factor >= 1"));
    }
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (oh, ow) = (h * factor, w * factor);
    let src = t.data();
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Tensor::zeros(&[oh, ow, c]);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w);
            for ch in 0..c {
                let v = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.data_mut()[(y * ow + x) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

/// Trained weights of both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelParams,
    /// Discriminator tensors, absent for generator-only checkpoints.
    #[serde(default)]
    pub discriminator: Option<ParamSet>,
}

const CHECKPOINT_FORMAT: &str = "mhparse-checkpoint";

impl Checkpoint {
    pub fn new(model: ModelParams, discriminator: Option<ParamSet>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            model,
            discriminator,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
            return Err(Error::Invariant(format!(
                "{}: not a version 1 checkpoint",
                path.display()
            )));
        }
        let model = ModelParams::from_parts(ck.model.config, ck.model.tensors)?;
        Ok(Self { model, ..ck })
    }
}
