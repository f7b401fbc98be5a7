//! Inference from an image to instance-aware parsing, with switches that
//! replace individual stages by ground truth for ablations.

use serde::{Deserialize, Serialize};

use crate::affinity::{accordance_map, gt_affinity, predicted_affinity, superpixel_majority, AffinityGraph, DEFAULT_THETA};
use crate::crf::{mean_field, CrfConfig, CrfProblem};
use crate::error::{Error, Result};
use crate::instance::{cluster_pixels, fuse, InstanceParsing, PixelParsing};
use crate::numcore::Tensor;
use crate::parsernet::{forward, rounded_count, upsample_bilinear, ModelParams, DOWNSCALE};
use crate::scene::{Grid, LabeledScene, SuperpixelMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceOptions {
    pub gt_affinity: bool,
    pub gt_segmentation: bool,
    pub gt_count: bool,
    /// Refine instance masks to pixel level with the dense CRF.
    pub refine: bool,
    pub theta: f64,
    /// Seed of the k-means restarts inside spectral clustering.
    pub seed: u64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            gt_affinity: false,
            gt_segmentation: false,
            gt_count: false,
            refine: false,
            theta: DEFAULT_THETA,
            seed: 0,
        }
    }
}

impl InferenceOptions {
    fn needs_ground_truth(&self) -> bool {
        self.gt_affinity || self.gt_segmentation || self.gt_count
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub prediction: InstanceParsing,
    pub affinity: AffinityGraph,
    /// Raw regressed person count.
    pub count_pred: f64,
    /// Person count handed to clustering.
    pub clusters: usize,
}

/// Runs the network, builds the affinity graph, clusters and fuses, and
/// optionally refines. `gt` must be given when any ground-truth switch is on.
pub fn infer(
    model: &ModelParams,
    image: &Tensor,
    sp: &SuperpixelMap,
    gt: Option<&LabeledScene>,
    opts: &InferenceOptions,
    crf: &CrfConfig,
) -> Result<Inference> {
    let gt = match gt {
        Some(g) => Some(g),
        None if opts.needs_ground_truth() => {
            return Err(Error::arg("ground-truth switches need the annotated scene"));
        }
        None => None,
    };
    let (h, w) = (sp.height(), sp.width());
    if image.shape() != [h, w, 3] {
        return Err(Error::Resolution(format!("image {:?} vs superpixels {h}×{w}", image.shape())));
    }
    let out = forward(model, image)?;
    let pixels = match gt {
        Some(g) if opts.gt_segmentation => PixelParsing::from_labels(&g.part_labels),
        _ => PixelParsing::from_parsing(&out.parsing, h, w)?,
    };
    let affinity = match gt {
        Some(g) if opts.gt_affinity => gt_affinity(&superpixel_majority(&accordance_map(g), sp)?),
        _ => predicted_affinity(&out.features, sp, opts.theta)?,
    };
    let clusters = match gt {
        Some(g) if opts.gt_count => g.person_count(),
        _ => rounded_count(out.count),
    };
    let mut prediction = cluster_pixels(&affinity, &pixels, sp, clusters, opts.seed)?;
    if opts.refine && prediction.instance_count() > 0 {
        let features = upsample_bilinear(&out.features, DOWNSCALE)?;
        prediction = refine(&prediction, &pixels, sp, features, image, crf)?;
    }
    Ok(Inference {
        prediction,
        affinity,
        count_pred: out.count,
        clusters,
    })
}

/// Pixel-level CRF refinement of clustered instances. `features` must be
/// at image resolution.
pub fn refine(
    coarse: &InstanceParsing,
    pixels: &PixelParsing,
    sp: &SuperpixelMap,
    features: Tensor,
    image: &Tensor,
    crf: &CrfConfig,
) -> Result<InstanceParsing> {
    let masks: Vec<Grid<bool>> = (1..=coarse.instance_count() as u16).map(|id| coarse.mask(id)).collect();
    let problem = CrfProblem::new(pixels.foreground.clone(), masks, features, image.clone())?;
    let mf = mean_field(&problem, crf)?;
    fuse(&mf.labels, pixels, sp)
}
