//! Graph-GAN: a graph-convolutional discriminator with attention node
//! pooling, and the alternating training loop that couples it with the
//! parsing network's affinity head.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affinity::{
    accordance_map, gt_affinity, pooling_map, predicted_affinity_var, superpixel_majority,
    AffinityGraph, DEFAULT_THETA,
};
use crate::error::{Error, Result};
use crate::numcore::{Adam, ParamSet, RowMap, Sgd, Tape, Tensor, Var};
use crate::parsernet::{
    count_loss_on_tape, downsample_labels, forward_on_tape, seg_loss_on_tape, ModelParams, DOWNSCALE,
};
use crate::scene::{make_superpixels, Grid, LabeledScene, SuperpixelMap};

/// Probabilities fed to the log terms are kept this far from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Identity; only useful for checking the propagation algebra.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Largest graph the one-hot node embedding can hold.
    pub max_nodes: usize,
    /// Width of the attention input (parsing classes).
    pub attention_inputs: usize,
    pub activation: Activation,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            max_nodes: 256,
            attention_inputs: crate::scene::NUM_CLASSES,
            activation: Activation::Tanh,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.hidden == 0 || self.max_nodes == 0 || self.attention_inputs == 0 {
            return Err(Error::Config(
                "discriminator needs layers >= 2 and positive hidden, max_nodes, attention_inputs".into(),
            ));
        }
        Ok(())
    }

    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut s = BTreeMap::new();
        for l in 0..self.layers {
            let fan_in = if l == 0 { self.max_nodes } else { self.hidden };
            s.insert(format!("gcn{l}.w"), vec![fan_in, self.hidden]);
            s.insert(format!("gcn{l}.b"), vec![self.hidden]);
        }
        s.insert("att.w".into(), vec![self.attention_inputs, 1]);
        s.insert("att.b".into(), vec![1]);
        s.insert("cls.w".into(), vec![self.hidden, 1]);
        s.insert("cls.b".into(), vec![1]);
        s
    }
}

/// Discriminator weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub config: GcnConfig,
    pub tensors: ParamSet,
}

impl GcnParams {
    /// Glorot-normal weights, zero biases.
    pub fn init(config: GcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&shape)
                } else {
                    // the one-hot input layer behaves like fan-in 1
                    let fan_in = if name == "gcn0.w" { 1 } else { shape[0] };
                    let std = (2.0 / (fan_in + shape[1]) as f64).sqrt();
                    let normal = Normal::new(0.0, std).unwrap();
                    let n = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| normal.sample(&mut rng)).collect()).unwrap()
                };
                (name, t)
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn from_parts(config: GcnConfig, tensors: ParamSet) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if tensors.len() != shapes.len() || shapes.iter().any(|(n, s)| tensors.get(n).map(|t| t.shape()) != Some(s)) {
            return Err(Error::Invariant("discriminator tensors do not match the configuration".into()));
        }
        if tensors.values().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("discriminator parameters".into()));
        }
        Ok(Self { config, tensors })
    }
}

/// Records the discriminator on a tape and returns its output probability
/// (`1×1`). `adjacency` must already be normalised; node features are the
/// one-hot embedding, so the first layer reads the first `N` rows of its
/// weight matrix.
pub fn gcn_on_tape(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    config: &GcnConfig,
    adjacency: Var,
    att_input: Var,
) -> Result<Var> {
    let s = tape.value(adjacency).shape().to_vec();
    if s.len() != 2 || s[0] != s[1] || s[0] == 0 {
        return Err(Error::arg(format!("adjacency must be a non-empty square matrix, got {s:?}")));
    }
    let n = s[0];
    if n > config.max_nodes {
        return Err(Error::arg(format!("{n} nodes exceed the discriminator limit of {}", config.max_nodes)));
    }
    if tape.value(att_input).shape() != [n, config.attention_inputs] {
        return Err(Error::arg(format!(
            "attention input must be {n}x{}, got {:?}",
            config.attention_inputs,
            tape.value(att_input).shape()
        )));
    }
    let get = |name: &str| {
        vars.get(name)
            .copied()
            .ok_or_else(|| Error::arg(format!("missing discriminator parameter {name}")))
    };
    let mut h = None;
    for l in 0..config.layers {
        let w = get(&format!("gcn{l}.w"))?;
        let hw = match h {
            None => {
                let index = Arc::new((0..n * config.hidden).map(Some).collect());
                tape.gather(w, index, vec![n, config.hidden])?
            }
            Some(h) => tape.matmul(h, w)?,
        };
        let z = tape.matmul(adjacency, hw)?;
        let z = tape.add_bias(z, get(&format!("gcn{l}.b"))?)?;
        h = Some(match config.activation {
            Activation::Tanh => tape.tanh(z),
            Activation::Linear => z,
        });
    }
    let h = h.unwrap();
    let scores = tape.matmul(att_input, get("att.w")?)?;
    let scores = tape.add_bias(scores, get("att.b")?)?;
    let scores = tape.reshape(scores, vec![1, n])?;
    let weights = tape.softmax_rows(scores)?;
    let hg = tape.matmul(weights, h)?;
    let logit = tape.matmul(hg, get("cls.w")?)?;
    let logit = tape.add_bias(logit, get("cls.b")?)?;
    Ok(tape.sigmoid(logit))
}

fn constants(tape: &mut Tape, set: &ParamSet) -> BTreeMap<String, Var> {
    set.iter().map(|(n, t)| (n.clone(), tape.constant(t.clone()))).collect()
}

/// Discriminator probability that the (normalised) graph is ground truth.
pub fn gcn_forward(params: &GcnParams, adjacency: &Tensor, att_input: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = constants(&mut tape, &params.tensors);
    let a = tape.constant(adjacency.clone());
    let h = tape.constant(att_input.clone());
    let p = gcn_on_tape(&mut tape, &vars, &params.config, a, h)?;
    Ok(tape.scalar(p))
}

/// `‖A − Ā∘A_fg‖²` summed over all entries.
pub fn l2_affinity_loss(pred: &AffinityGraph, gt: &AffinityGraph) -> Result<f64> {
    if pred.node_count() != gt.node_count() {
        return Err(Error::arg("affinity graphs differ in size"));
    }
    let mask = gt.foreground_mask();
    Ok(gt
        .affinity
        .data()
        .iter()
        .zip(pred.affinity.data())
        .zip(mask.data())
        .map(|((a, p), m)| (a - p * m).powi(2))
        .sum())
}

/// Discriminator and generator losses from the two output probabilities.
/// `d_loss = −(ln d_real + ln(1 − d_fake))`; `g_loss` is `ln(1 − d_fake)`
/// in the literal minimax form or `−ln d_fake` in the non-saturating form.
pub fn gan_losses(d_real: f64, d_fake: f64, non_saturating: bool) -> (f64, f64) {
    let r = d_real.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let f = d_fake.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let d_loss = -(r.ln() + (1.0 - f).ln());
    let g_loss = if non_saturating { -f.ln() } else { (1.0 - f).ln() };
    (d_loss, g_loss)
}

/// Generator adversarial term on a tape.
pub fn g_loss_on_tape(tape: &mut Tape, d_fake: Var, non_saturating: bool) -> Var {
    let f = tape.clamp(d_fake, PROB_CLAMP, 1.0 - PROB_CLAMP);
    if non_saturating {
        let l = tape.log(f);
        tape.scale(l, -1.0)
    } else {
        let one_minus = tape.scale(f, -1.0);
        let one_minus = tape.add_scalar(one_minus, 1.0);
        tape.log(one_minus)
    }
}

/// Discriminator loss on a tape.
pub fn d_loss_on_tape(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = tape.clamp(d_real, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let f = tape.clamp(d_fake, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lr = tape.log(r);
    let nf = tape.scale(f, -1.0);
    let nf = tape.add_scalar(nf, 1.0);
    let lf = tape.log(nf);
    let s = tape.add(lr, lf)?;
    Ok(tape.scale(s, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    /// Weight of the adversarial term in the generator objective.
    pub lambda: f64,
    pub non_saturating: bool,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub generator_lr: f64,
    /// Adam step size of the discriminator.
    pub discriminator_lr: f64,
    /// Generator SGD momentum.
    pub momentum: f64,
    /// Global gradient-norm ceiling of the generator update; 0 disables it.
    pub clip_norm: f64,
    /// Divide the L2 affinity term by the number of foreground pairs in the
    /// training objective.
    pub normalize_l2: bool,
    pub count_weight: f64,
    /// Gaussian kernel bandwidth of the predicted affinity.
    pub theta: f64,
    pub discriminator: GcnConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            non_saturating: true,
            d_steps: 1,
            generator_lr: 0.05,
            discriminator_lr: 1e-3,
            momentum: 0.9,
            clip_norm: 5.0,
            normalize_l2: true,
            count_weight: 0.1,
            theta: DEFAULT_THETA,
            discriminator: GcnConfig::default(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if !(self.generator_lr > 0.0 && self.discriminator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm >= 0.0) || !(self.theta > 0.0) {
            return Err(Error::Config("momentum in [0, 1), clip_norm >= 0 and theta > 0 required".into()));
        }
        self.discriminator.validate()
    }

    fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }
}

/// A scene with everything training needs precomputed.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub image: Tensor,
    /// Part labels at trunk resolution.
    pub labels: Grid<u8>,
    pub superpixels: SuperpixelMap,
    pub pool: Arc<RowMap>,
    pub gt: AffinityGraph,
    pub persons: usize,
}

impl TrainingExample {
    pub fn new(scene: &LabeledScene, superpixel_target: usize) -> Result<Self> {
        let sp = make_superpixels(scene, superpixel_target)?;
        Self::with_superpixels(scene, sp)
    }

    pub fn with_superpixels(scene: &LabeledScene, sp: SuperpixelMap) -> Result<Self> {
        let (h, w) = (scene.height(), scene.width());
        let pool = Arc::new(pooling_map(&sp, h / DOWNSCALE, w / DOWNSCALE)?);
        let sigma = superpixel_majority(&accordance_map(scene), &sp)?;
        Ok(Self {
            image: scene.image.clone(),
            labels: downsample_labels(&scene.part_labels, DOWNSCALE)?,
            pool,
            gt: gt_affinity(&sigma),
            persons: scene.person_count(),
            superpixels: sp,
        })
    }
}

/// Loss components of one training step, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub seg: f64,
    /// Unnormalised `‖A − Ā∘A_fg‖²`.
    pub l2: f64,
    /// Discriminator loss before its update; absent without an adversary.
    pub d: Option<f64>,
    /// Generator adversarial loss before the discriminator update.
    pub g: Option<f64>,
    pub count: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,seg_loss,l2_loss,d_loss,g_loss,count_loss";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.seg,
            self.l2,
            opt(self.d),
            opt(self.g),
            self.count
        )
    }

    fn is_finite(&self) -> bool {
        [self.seg, self.l2, self.count, self.d.unwrap_or(0.0), self.g.unwrap_or(0.0)]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Generator pass recorded on a tape.
struct GeneratorVars {
    seg: Var,
    l2: Var,
    count: Var,
    /// Masked predicted affinity, normalised for the discriminator.
    adjacency: Var,
    /// Superpixel-pooled parsing probabilities.
    att_input: Var,
}

fn generator_on_tape(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    model: &ModelParams,
    ex: &TrainingExample,
    theta: f64,
) -> Result<GeneratorVars> {
    let out = forward_on_tape(tape, vars, &model.config, &ex.image)?;
    let seg = seg_loss_on_tape(tape, out.logits, &ex.labels)?;
    let count = count_loss_on_tape(tape, out.count, ex.persons)?;
    let pred = predicted_affinity_var(tape, out.features, ex.pool.clone(), theta)?;
    let mask = tape.constant(ex.gt.foreground_mask());
    let masked = tape.mul(pred, mask)?;
    let gt = tape.constant(ex.gt.affinity.clone());
    let diff = tape.sub(gt, masked)?;
    let sq = tape.mul(diff, diff)?;
    let l2 = tape.sum(sq);
    let adjacency = tape.normalize_adjacency(masked)?;
    let probs = tape.softmax_rows(out.logits)?;
    let att_input = tape.row_pool(probs, ex.pool.clone())?;
    Ok(GeneratorVars {
        seg,
        l2,
        count,
        adjacency,
        att_input,
    })
}

/// Combined generator objective `seg + l2 + count + λ·g` for one example,
/// on a tape whose generator parameters are registered as trainable.
fn generator_objective(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    model: &ModelParams,
    disc: Option<&GcnParams>,
    ex: &TrainingExample,
    cfg: &GanConfig,
) -> Result<(Var, GeneratorVars)> {
    let g = generator_on_tape(tape, vars, model, ex, cfg.theta)?;
    let pairs = ex.gt.foreground.iter().filter(|&&f| f).count().pow(2).max(1) as f64;
    let l2 = if cfg.normalize_l2 { tape.scale(g.l2, 1.0 / pairs) } else { g.l2 };
    let mut total = tape.add(g.seg, l2)?;
    let count = tape.scale(g.count, cfg.count_weight);
    total = tape.add(total, count)?;
    if let Some(disc) = disc.filter(|_| cfg.lambda > 0.0) {
        let dvars = constants(tape, &disc.tensors);
        let d_fake = gcn_on_tape(tape, &dvars, &disc.config, g.adjacency, g.att_input)?;
        let adv = g_loss_on_tape(tape, d_fake, cfg.non_saturating);
        let adv = tape.sum(adv);
        let adv = tape.scale(adv, cfg.lambda);
        total = tape.add(total, adv)?;
    }
    Ok((total, g))
}

/// Value and gradients of the combined generator objective on one example.
pub fn generator_loss_and_grad(
    model: &ModelParams,
    disc: Option<&GcnParams>,
    ex: &TrainingExample,
    cfg: &GanConfig,
) -> Result<(f64, crate::numcore::Gradients)> {
    let mut tape = Tape::new();
    let vars = tape.params(&model.tensors);
    let (total, _) = generator_objective(&mut tape, &vars, model, disc, ex, cfg)?;
    Ok((tape.scalar(total), tape.backward(total)?))
}

/// Unweighted loss components of one example without gradients (`d`
/// and `g` are left empty).
pub fn example_losses(model: &ModelParams, ex: &TrainingExample, theta: f64) -> Result<LossRecord> {
    let mut tape = Tape::new();
    let vars = constants(&mut tape, &model.tensors);
    let g = generator_on_tape(&mut tape, &vars, model, ex, theta)?;
    Ok(LossRecord {
        step: 0,
        seg: tape.scalar(g.seg),
        l2: tape.scalar(g.l2),
        d: None,
        g: None,
        count: tape.scalar(g.count),
    })
}

/// Mean of [`example_losses`] over a dataset.
pub fn dataset_losses(model: &ModelParams, examples: &[TrainingExample], theta: f64) -> Result<LossRecord> {
    let w = 1.0 / examples.len().max(1) as f64;
    let mut acc = LossRecord {
        step: 0,
        seg: 0.0,
        l2: 0.0,
        d: None,
        g: None,
        count: 0.0,
    };
    for ex in examples {
        let r = example_losses(model, ex, theta)?;
        acc.seg += w * r.seg;
        acc.l2 += w * r.l2;
        acc.count += w * r.count;
    }
    Ok(acc)
}

/// Graph pair seen by the discriminator for one example.
#[derive(Debug, Clone)]
pub struct GraphPair {
    /// Normalised ground-truth adjacency.
    pub real: Tensor,
    /// Normalised masked predicted adjacency.
    pub fake: Tensor,
    pub att_input: Tensor,
}

/// Runs the generator without gradients and prepares the discriminator inputs.
pub fn graph_pair(model: &ModelParams, ex: &TrainingExample, theta: f64) -> Result<GraphPair> {
    let mut tape = Tape::new();
    let vars = constants(&mut tape, &model.tensors);
    let g = generator_on_tape(&mut tape, &vars, model, ex, theta)?;
    Ok(GraphPair {
        real: crate::numcore::normalize_adjacency(&ex.gt.affinity)?,
        fake: tape.value(g.adjacency).clone(),
        att_input: tape.value(g.att_input).clone(),
    })
}

/// Discriminator loss and gradients on one graph pair.
pub fn discriminator_loss_and_grad(disc: &GcnParams, pair: &GraphPair) -> Result<(f64, f64, f64, crate::numcore::Gradients)> {
    let mut tape = Tape::new();
    let vars = tape.params(&disc.tensors);
    let h = tape.constant(pair.att_input.clone());
    let real = tape.constant(pair.real.clone());
    let fake = tape.constant(pair.fake.clone());
    let d_real = gcn_on_tape(&mut tape, &vars, &disc.config, real, h)?;
    let d_fake = gcn_on_tape(&mut tape, &vars, &disc.config, fake, h)?;
    let loss = d_loss_on_tape(&mut tape, d_real, d_fake)?;
    Ok((tape.scalar(loss), tape.scalar(d_real), tape.scalar(d_fake), tape.backward(loss)?))
}

fn average_into(acc: &mut ParamSet, g: &ParamSet, weight: f64) {
    for (name, t) in g {
        let slot = acc.entry(name.clone()).or_insert_with(|| Tensor::zeros(t.shape()));
        for (a, v) in slot.data_mut().iter_mut().zip(t.data()) {
            *a += weight * v;
        }
    }
}

/// Owns both networks and their optimizers for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelParams,
    /// `None` trains the generator alone (no adversarial branch at all).
    pub disc: Option<GcnParams>,
    pub cfg: GanConfig,
    gen_opt: Sgd,
    disc_opt: Adam,
    step: usize,
}

impl Trainer {
    pub fn new(model: ModelParams, disc: Option<GcnParams>, cfg: GanConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(d) = &disc {
            if d.config.attention_inputs != model.config.classes {
                return Err(Error::Config("discriminator attention width differs from class count".into()));
            }
        }
        Ok(Self {
            gen_opt: Sgd::new(cfg.generator_lr, cfg.momentum, cfg.clip()),
            disc_opt: Adam::new(cfg.discriminator_lr),
            model,
            disc,
            cfg,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Swaps in a new discriminator and clears its optimizer state.
    pub fn reset_discriminator(&mut self, disc: Option<GcnParams>) -> Result<()> {
        if let Some(d) = &disc {
            if d.config.attention_inputs != self.model.config.classes {
                return Err(Error::Config("discriminator attention width differs from class count".into()));
            }
        }
        self.disc = disc;
        self.disc_opt = Adam::new(self.cfg.discriminator_lr);
        Ok(())
    }

    /// Discriminator update(s) only; returns mean `(d_loss, g_loss)` before
    /// the first update.
    pub fn discriminator_step(&mut self, batch: &[TrainingExample]) -> Result<Option<(f64, f64)>> {
        let Some(disc) = self.disc.as_mut() else { return Ok(None) };
        let pairs = batch
            .iter()
            .map(|ex| graph_pair(&self.model, ex, self.cfg.theta))
            .collect::<Result<Vec<_>>>()?;
        let mut first = None;
        let w = 1.0 / batch.len() as f64;
        for _ in 0..self.cfg.d_steps {
            let mut grads = ParamSet::new();
            let (mut dl, mut gl) = (0.0, 0.0);
            for pair in &pairs {
                let (loss, d_real, d_fake, g) = discriminator_loss_and_grad(disc, pair)?;
                dl += w * loss;
                gl += w * gan_losses(d_real, d_fake, self.cfg.non_saturating).1;
                average_into(&mut grads, &g, w);
            }
            first.get_or_insert((dl, gl));
            self.disc_opt.step(&mut disc.tensors, &grads);
        }
        Ok(first)
    }

    /// One discriminator phase followed by one generator update.
    pub fn step(&mut self, batch: &[TrainingExample]) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::arg("empty training batch"));
        }
        let adversarial = self.discriminator_step(batch)?;
        let w = 1.0 / batch.len() as f64;
        let mut grads = ParamSet::new();
        let mut record = LossRecord {
            step: self.step,
            seg: 0.0,
            l2: 0.0,
            d: adversarial.map(|a| a.0),
            g: adversarial.map(|a| a.1),
            count: 0.0,
        };
        for ex in batch {
            let mut tape = Tape::new();
            let vars = tape.params(&self.model.tensors);
            let (total, parts) = generator_objective(&mut tape, &vars, &self.model, self.disc.as_ref(), ex, &self.cfg)?;
            record.seg += w * tape.scalar(parts.seg);
            record.l2 += w * tape.scalar(parts.l2);
            record.count += w * tape.scalar(parts.count);
            if !tape.scalar(total).is_finite() {
                record.seg = f64::NAN;
                break;
            }
            average_into(&mut grads, &tape.backward(total)?, w);
        }
        if !record.is_finite() {
            return Err(Error::NonFinite(format!("training aborted at {record:?}")));
        }
        self.gen_opt.step(&mut self.model.tensors, &grads);
        self.step += 1;
        Ok(record)
    }
}

impl Trainer {
    /// `steps` updates over `examples` in fixed cyclic batches of
    /// `batch_size`; `on_step` sees every record.
    pub fn run(
        &mut self,
        examples: &[TrainingExample],
        steps: usize,
        batch_size: usize,
        mut on_step: impl FnMut(&LossRecord),
    ) -> Result<()> {
        if examples.is_empty() || batch_size == 0 {
            return Err(Error::arg("training needs examples and a positive batch size"));
        }
        for _ in 0..steps {
            let start = self.step * batch_size;
            let batch: Vec<TrainingExample> =
                (0..batch_size).map(|j| examples[(start + j) % examples.len()].clone()).collect();
            let record = self.step(&batch)?;
            on_step(&record);
        }
        Ok(())
    }
}

/// Fraction of graphs the discriminator classifies correctly at 0.5.
pub fn discriminator_accuracy(disc: &GcnParams, pairs: &[GraphPair]) -> Result<f64> {
    let mut correct = 0;
    for p in pairs {
        if gcn_forward(disc, &p.real, &p.att_input)? > 0.5 {
            correct += 1;
        }
        if gcn_forward(disc, &p.fake, &p.att_input)? < 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / (2 * pairs.len()).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gan_value_at_half() {
        let (d, _) = gan_losses(0.5, 0.5, true);
        assert!((-d - (-2.0 * 2f64.ln())).abs() < 1e-12);
        let (d, _) = gan_losses(1.0, 0.0, false);
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn single_node_attention_weight_is_one() {
        let cfg = GcnConfig {
            layers: 2,
            hidden: 3,
            max_nodes: 4,
            attention_inputs: 2,
            activation: Activation::Tanh,
        };
        let p = GcnParams::init(cfg, 1).unwrap();
        let a = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let h = Tensor::from_rows(&[vec![0.3, -2.0]]).unwrap();
        let out = gcn_forward(&p, &a, &h).unwrap();
        // H^(2) of the single node then the classifier
        let t = &p.tensors;
        let mut x: Vec<f64> = t["gcn0.w"].row(0).iter().zip(t["gcn0.b"].data()).map(|(w, b)| (w + b).tanh()).collect();
        let w1 = &t["gcn1.w"];
        x = (0..3)
            .map(|j| ((0..3).map(|i| x[i] * w1.get2(i, j)).sum::<f64>() + t["gcn1.b"].data()[j]).tanh())
            .collect();
        let logit: f64 = (0..3).map(|i| x[i] * t["cls.w"].data()[i]).sum::<f64>() + t["cls.b"].data()[0];
        assert!((out - crate::numcore::sigmoid(logit)).abs() < 1e-14);
    }

    #[test]
    fn too_many_nodes_is_an_argument_error() {
        let cfg = GcnConfig {
            max_nodes: 2,
            attention_inputs: 1,
            ..GcnConfig::default()
        };
        let p = GcnParams::init(cfg, 0).unwrap();
        let r = gcn_forward(&p, &Tensor::identity(3), &Tensor::zeros(&[3, 1]));
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn l2_ignores_background() {
        let gt = gt_affinity(&[0, 0]);
        let pred = AffinityGraph {
            affinity: Tensor::full(&[2, 2], 0.7),
            foreground: vec![true, true],
            kind: crate::affinity::AffinityKind::Predicted,
        };
        assert_eq!(l2_affinity_loss(&pred, &gt).unwrap(), 0.0);
    }
}
