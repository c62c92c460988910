//! Per-image evaluation of the baseline, geometric TTA and TTGA.

use rayon::prelude::*;
use ttga_bench::metrics::{default_nsd_tolerance, roc_auc_grid};
use ttga_bench::{dice, error_ground_truth, hd95, nsd, tta_baseline, SegmenterModel, ToyScene};
use ttga_core::denoiser::ConditionEmbedding;
use ttga_core::engine::{generate_from, prepare, AugmentationSet, TtgaConfig};
use ttga_core::masks::SaliencyRelevance;
use ttga_core::{
    ensemble, error_estimate_map, BinaryMask, EnsembleResult, LatentGrid, NoiseSchedule, SeededRng,
};

use crate::artifacts::{image_seed, DenoiserArtifact};
use crate::config::Method;
use crate::error::CliError;

/// Segmentation metrics against the ground truth, error-estimation metrics
/// against the baseline's error mask. AUCs are `None` when the target has a
/// single class.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub method: Method,
    pub seg_dsc: f64,
    pub seg_auc: Option<f64>,
    pub seg_hd95: f64,
    pub err_dsc: f64,
    pub err_auc: Option<f64>,
    pub err_nsd: f64,
    /// Sentinel conventions that applied to this row.
    pub flags: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct NullFit {
    pub loss: f64,
    pub iterations: usize,
    pub trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub id: usize,
    pub occluded: bool,
    pub scores: Vec<MethodScores>,
    pub augmentations: Option<AugmentationSet>,
    pub null_fit: Option<NullFit>,
    /// Ensemble output per method, kept only when images are dumped.
    pub maps: Vec<(Method, EnsembleResult)>,
}

pub struct Evaluator<'a> {
    pub segmenter: Option<&'a SegmenterModel>,
    pub denoiser: Option<&'a DenoiserArtifact>,
    pub schedule: &'a NoiseSchedule,
    pub ttga: TtgaConfig,
    pub run_seed: u64,
    pub tta_views: usize,
    pub methods: Vec<Method>,
    pub keep_maps: bool,
}

fn augment_with<D: ttga_core::denoiser::Denoiser>(
    m: &D,
    x0: &LatentGrid,
    c: &ConditionEmbedding,
    cfg: &TtgaConfig,
    s: &NoiseSchedule,
) -> ttga_core::Result<(AugmentationSet, NullFit)> {
    let prep = prepare(m, x0, c, cfg, s, &SaliencyRelevance)?;
    let set = generate_from(m, &prep, c, cfg, s)?;
    let fit = NullFit {
        loss: prep.null.final_loss,
        iterations: prep.null.iterations_used,
        trace: prep.null.trace.clone(),
    };
    Ok((set, fit))
}

fn score(
    method: Method,
    result: &EnsembleResult,
    gt: &BinaryMask,
    err_gt: &BinaryMask,
) -> Result<MethodScores, CliError> {
    let mut flags = Vec::new();
    let fg = result.mean_probability.foreground();
    let pred = BinaryMask::threshold(&fg, 0.5);
    let seg_auc = roc_auc_grid(&fg, gt)?;
    if seg_auc.is_none() {
        flags.push("seg_auc_single_class");
    }
    match (pred.any(), gt.any()) {
        (false, false) => flags.push("seg_both_empty"),
        (true, false) | (false, true) => flags.push("seg_one_empty"),
        _ => {}
    }
    let err_map = error_estimate_map(result);
    let err_pred = BinaryMask::threshold(&err_map, 0.5);
    let err_auc = roc_auc_grid(&err_map, err_gt)?;
    if err_auc.is_none() {
        flags.push("err_auc_single_class");
    }
    match (err_pred.any(), err_gt.any()) {
        (false, false) => flags.push("err_both_empty"),
        (true, false) | (false, true) => flags.push("err_one_empty"),
        _ => {}
    }
    let tol = default_nsd_tolerance(gt.height(), gt.width());
    Ok(MethodScores {
        method,
        seg_dsc: dice(&pred, gt)?,
        seg_auc,
        seg_hd95: hd95(&pred, gt)?,
        err_dsc: dice(&err_pred, err_gt)?,
        err_auc,
        err_nsd: nsd(&err_pred, err_gt, tol)?,
        flags,
    })
}

impl Evaluator<'_> {
    fn need_segmenter(&self) -> Result<&SegmenterModel, CliError> {
        self.segmenter
            .ok_or_else(|| CliError::Other("evaluation needs a segmenter".into()))
    }

    fn augment(&self, scene: &ToyScene) -> Result<(AugmentationSet, NullFit), CliError> {
        let d = self
            .denoiser
            .ok_or_else(|| CliError::Other("TTGA needs a denoiser".into()))?;
        let mut cfg = self.ttga;
        cfg.seed = image_seed(self.run_seed, scene.id);
        augment_with(&d.model, &scene.image, &d.semantic, &cfg, self.schedule)
            .map_err(|e| CliError::from(e).context(format!("image {}", scene.id)))
    }

    /// Augmentations only, no segmentation.
    pub fn augment_image(&self, scene: &ToyScene) -> Result<ImageResult, CliError> {
        let (set, fit) = self.augment(scene)?;
        Ok(ImageResult {
            id: scene.id,
            occluded: scene.params.occluder.is_some(),
            scores: Vec::new(),
            augmentations: Some(set),
            null_fit: Some(fit),
            maps: Vec::new(),
        })
    }

    pub fn evaluate_image(&self, scene: &ToyScene) -> Result<ImageResult, CliError> {
        let seg = self.need_segmenter()?;
        let gt = &scene.gt_mask;
        let base = ensemble(vec![seg.segment(&scene.image)?])?;
        let err_gt = error_ground_truth(&base.mean_probability.foreground(), gt)?;
        let seed = image_seed(self.run_seed, scene.id);
        let mut scores = Vec::new();
        let mut maps = Vec::new();
        let mut augmentations = None;
        let mut null_fit = None;
        for &m in &self.methods {
            let result = match m {
                Method::Baseline => base.clone(),
                Method::Tta => {
                    // streams 1..=N of the image seed belong to the TTGA augmentations
                    let mut rng = SeededRng::new(seed, 0);
                    tta_baseline(seg, &scene.image, self.tta_views, &mut rng)?
                }
                Method::Ttga => {
                    let (set, fit) = self.augment(scene)?;
                    let members = set
                        .augmented
                        .iter()
                        .map(|a| seg.segment(&a.image))
                        .collect::<ttga_core::Result<Vec<_>>>()?;
                    augmentations = Some(set);
                    null_fit = Some(fit);
                    ensemble(members)?
                }
            };
            scores.push(score(m, &result, gt, &err_gt)?);
            if self.keep_maps {
                maps.push((m, result));
            }
        }
        Ok(ImageResult {
            id: scene.id,
            occluded: scene.params.occluder.is_some(),
            scores,
            augmentations,
            null_fit,
            maps,
        })
    }

    /// Runs `f` over all scenes on `workers` threads, in id order.
    pub fn run_all<F>(
        &self,
        scenes: &[ToyScene],
        workers: usize,
        f: F,
    ) -> Result<Vec<ImageResult>, CliError>
    where
        F: Fn(&Self, &ToyScene) -> Result<ImageResult, CliError> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?;
        let mut out = pool.install(|| {
            scenes
                .par_iter()
                .map(|s| f(self, s))
                .collect::<Result<Vec<_>, _>>()
        })?;
        out.sort_by_key(|r| r.id);
        Ok(out)
    }
}

/// Mean and sample standard deviation; `None` for an empty input and a
/// missing deviation for a single value.
pub fn mean_std(v: &[f64]) -> Option<(f64, Option<f64>)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1)
        .then(|| (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    Some((mean, std))
}
