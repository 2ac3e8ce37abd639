//! Two-stage training: supervised warm-up of the teacher, then teacher-
//! guided training of the student with weak/strong image perturbations and
//! feature perturbation, the teacher tracking the student by EMA.

pub mod augment;
pub mod config;
pub mod ema;
mod guided;
mod warmup;

pub use augment::{AugmentationSpec, FeaturePerturbKind};
pub use config::{PipelineConfig, TrainConfig};
pub use ema::{alpha_schedule, ema_update, TeacherStudentState};
pub use guided::teacher_guided_train;
pub use warmup::warmup_train;

use crate::cloud::{chamfer_distance, PointCloud};
use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::fusion::{build_category_prior, FusionResult};
use crate::img::Image;
use crate::net::{Mode, ReconNet, StatUpdates};
use crate::nn::{chamfer_to_const, ParamSet, Tape, TapeParams, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-category initial clouds.
#[derive(Debug, Clone)]
pub struct Priors {
    pub clouds: BTreeMap<String, PointCloud>,
    pub n_points: usize,
}

impl Priors {
    pub fn cloud(&self, category: &str) -> Result<&PointCloud> {
        self.clouds
            .get(category)
            .ok_or_else(|| Error::invalid(format!("no prior for category {category:?}")))
    }

    /// Loads priors stored as `<category>.ssmppc` files in one directory.
    pub fn from_dir(dir: impl AsRef<std::path::Path>, n_points: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut clouds = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<std::path::PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == crate::cloud_io::CLOUD_EXT) == Some(true))
            .collect();
        paths.sort();
        for path in paths {
            let category = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid(format!("bad prior file name {path:?}")))?
                .to_string();
            let cloud = crate::cloud_io::load_cloud(&path)?;
            if cloud.len() != n_points {
                return Err(Error::ConfigMismatch(format!(
                    "prior {category} has {} points, expected {n_points}",
                    cloud.len()
                )));
            }
            clouds.insert(category.clone(), cloud.with_category(category));
        }
        if clouds.is_empty() {
            return Err(Error::invalid(format!("no prior clouds found in {dir:?}")));
        }
        Ok(Priors { clouds, n_points })
    }
}

/// Builds the per-category priors from labeled training data only,
/// retaining the full fusion details for persistence.
pub fn build_priors_detailed(
    view: &TrainView<'_>,
    cfg: &PipelineConfig,
) -> Result<(Priors, BTreeMap<String, FusionResult>)> {
    let fusion_cfg = cfg.fusion_config();
    let by_category = view.labeled_by_category();
    if by_category.is_empty() {
        return Err(Error::invalid("no labeled samples to build priors from"));
    }
    let mut results = BTreeMap::new();
    let mut clouds = BTreeMap::new();
    for (category, samples) in by_category {
        let labeled: Vec<PointCloud> = samples
            .iter()
            .map(|s| s.labeled_cloud().cloned())
            .collect::<Result<Vec<_>>>()?;
        let result = build_category_prior(&labeled, &category, &fusion_cfg)?;
        clouds.insert(category.clone(), result.fused.clone());
        results.insert(category, result);
    }
    Ok((
        Priors {
            clouds,
            n_points: cfg.net.n_points,
        },
        results,
    ))
}

/// Builds the per-category priors from labeled training data only.
pub fn build_priors(view: &TrainView<'_>, cfg: &PipelineConfig) -> Result<Priors> {
    Ok(build_priors_detailed(view, cfg)?.0)
}

/// One line of the append-only training log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub stage: String,
    pub loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_cd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_orth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_sup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_un: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_fp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_s1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_s2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub lr: f64,
    pub labeled_batch: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unlabeled_batch: Vec<String>,
}

/// Observation hook, called with each record and the parameters the step's
/// losses were computed from (before the optimizer update).
pub type StepHook<'a> = Box<dyn FnMut(&TrainRecord, &ParamSet) + 'a>;

#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_step: Option<StepHook<'a>>,
}

/// Output of one per-sample forward/backward: parameter gradients,
/// statistics updates, and loss components.
pub(crate) struct SamplePass {
    pub grads: Vec<Option<Tensor>>,
    pub stats: StatUpdates,
    pub losses: Vec<f64>,
}

pub(crate) fn merge_grads(acc: &mut Vec<Option<Tensor>>, part: Vec<Option<Tensor>>) {
    for (slot, g) in part.into_iter().enumerate() {
        if let Some(g) = g {
            match &mut acc[slot] {
                Some(a) => a.axpy(1.0, &g),
                a @ None => *a = Some(g),
            }
        }
    }
}

/// Runs the per-sample closures in parallel but folds their results in
/// input order, so gradient sums are bit-reproducible.
pub(crate) fn ordered_batch<T, F>(items: Vec<T>, f: F, n_params: usize) -> Result<SamplePass>
where
    T: Send,
    F: Fn(T) -> Result<SamplePass> + Sync + Send,
{
    let passes: Vec<Result<SamplePass>> = items.into_par_iter().map(f).collect();
    let mut grads: Vec<Option<Tensor>> = vec![None; n_params];
    let mut stats = StatUpdates::new();
    let mut losses: Vec<f64> = Vec::new();
    for pass in passes {
        let pass = pass?;
        merge_grads(&mut grads, pass.grads);
        stats.extend(pass.stats);
        if losses.is_empty() {
            losses = pass.losses;
        } else {
            for (a, b) in losses.iter_mut().zip(pass.losses) {
                *a += b;
            }
        }
    }
    Ok(SamplePass {
        grads,
        stats,
        losses,
    })
}

/// Supervised pass: chamfer distance between the prediction for one image
/// and its ground-truth cloud, scaled for batch averaging.
pub(crate) fn supervised_pass(
    net: &ReconNet,
    params: &ParamSet,
    image: &Image,
    prior: &PointCloud,
    target: &PointCloud,
    scale: f64,
) -> Result<SamplePass> {
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, params);
    let mut stats = StatUpdates::new();
    let mut mode = Mode::Train(&mut stats);
    let pred = net.forward(&tape, &tp, params, image, prior, &mut mode)?;
    let cd = chamfer_to_const(pred, target);
    let cd_value = cd.value().item();
    let loss = cd.scale(scale);
    let grads = tape.backward(loss);
    Ok(SamplePass {
        grads: tp.collect_grads(&grads),
        stats,
        losses: vec![cd_value],
    })
}

/// Teacher inference on weakly augmented images: eval-mode forward, no
/// gradients retained.
pub fn generate_pseudo_labels(
    net: &ReconNet,
    teacher: &ParamSet,
    inputs: &[(Image, String)],
    priors: &Priors,
) -> Result<Vec<PointCloud>> {
    inputs
        .par_iter()
        .map(|(image, category)| {
            let prior = priors.cloud(category)?;
            let tape = Tape::new();
            let tp = TapeParams::register(&tape, teacher);
            let mut mode = Mode::Eval;
            let pred = net.forward(&tape, &tp, teacher, image, prior, &mut mode)?;
            PointCloud::from_flat(pred.value().data())
        })
        .collect()
}

/// The consistency loss over the three student branches:
/// `w_feature * CD(P_w, P_fp) + w_strong/2 * (CD(P_w, P_s1) + CD(P_w, P_s2))`.
/// The pseudo-label `P_w` is a constant target.
pub fn unsupervised_loss(
    pseudo: &PointCloud,
    feature_branch: &PointCloud,
    strong1: &PointCloud,
    strong2: &PointCloud,
    w_feature: f64,
    w_strong: f64,
) -> Result<f64> {
    Ok(w_feature * chamfer_distance(pseudo, feature_branch)?
        + 0.5 * w_strong * (chamfer_distance(pseudo, strong1)? + chamfer_distance(pseudo, strong2)?))
}

/// Orthogonality penalty value and gradients on a dedicated tape.
pub(crate) fn orthogonality_pass(net: &ReconNet, params: &ParamSet) -> (f64, Vec<Option<Tensor>>) {
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, params);
    let loss = net.orthogonality_loss(&tape, &tp);
    let value = loss.value().item();
    let grads = tape.backward(loss);
    (value, tp.collect_grads(&grads))
}

pub(crate) fn check_finite(step: u64, components: &[(&str, f64)]) -> Result<()> {
    for (name, v) in components {
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "non-finite {name}; components: {}",
                    components
                        .iter()
                        .map(|(n, v)| format!("{n}={v}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            });
        }
    }
    Ok(())
}
