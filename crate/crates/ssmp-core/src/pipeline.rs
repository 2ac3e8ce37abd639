//! End-to-end run driver: label split, prior construction, warm-up,
//! teacher-guided stage, and evaluation of both checkpoints. Used by the
//! CLI, the ablation runner, and the acceptance suite.

use crate::data::{split_labeled, Dataset, SplitSpec};
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::net::ReconNet;
use crate::nn::ParamSet;
use crate::train::{
    build_priors, teacher_guided_train, warmup_train, AugmentationSpec, PipelineConfig, Priors,
    TeacherStudentState, TrainHooks, TrainRecord,
};

pub struct PipelineResult {
    pub config: PipelineConfig,
    pub priors: Priors,
    pub warmup_params: ParamSet,
    pub state: TeacherStudentState,
    pub warmup_records: Vec<TrainRecord>,
    pub guided_records: Vec<TrainRecord>,
    /// Teacher evaluated right after warm-up.
    pub warmup_eval: EvalReport,
    /// EMA teacher evaluated after the guided stage (equals the warm-up
    /// report when the guided stage is disabled).
    pub final_eval: EvalReport,
}

impl PipelineResult {
    /// Relative improvement of the guided stage over warm-up alone.
    pub fn relative_improvement(&self) -> f64 {
        let w = self.warmup_eval.overall_mean_cd;
        let f = self.final_eval.overall_mean_cd;
        if w <= 0.0 {
            0.0
        } else {
            (w - f) / w
        }
    }
}

/// Runs the full pipeline on `dataset`, re-deriving the label split from
/// the config. Everything downstream of the dataset bytes is a pure
/// function of `cfg`.
pub fn run_pipeline(dataset: &mut Dataset, cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    split_labeled(
        dataset,
        &SplitSpec {
            labeled_ratio: cfg.labeled_ratio,
            seed: cfg.split_seed,
        },
    )?;
    let view = dataset.train_view();
    let priors = build_priors(&view, cfg)?;

    let labeled = view.labeled();
    let unlabeled = view.unlabeled();
    let (warmup_params, warmup_records) = warmup_train(
        &labeled,
        &priors,
        &cfg.net,
        &cfg.train,
        &mut TrainHooks::default(),
    )?;

    let mut scratch = ParamSet::new();
    let net = ReconNet::build(&cfg.net, &mut scratch, cfg.train.seed)?;
    let warmup_eval = evaluate(
        &net,
        &warmup_params,
        dataset,
        &priors,
        "teacher-warmup",
        cfg.train.seed,
    )?;

    let (state, guided_records) = if cfg.train.guided_epochs == 0 {
        (TeacherStudentState::from_teacher(warmup_params.clone()), Vec::new())
    } else {
        teacher_guided_train(
            &labeled,
            &unlabeled,
            warmup_params.clone(),
            &priors,
            &cfg.net,
            &cfg.train,
            &AugmentationSpec::default(),
            &mut TrainHooks::default(),
        )?
    };
    let final_eval = evaluate(
        &net,
        &state.teacher,
        dataset,
        &priors,
        "teacher-final",
        cfg.train.seed,
    )?;

    Ok(PipelineResult {
        config: cfg.clone(),
        priors,
        warmup_params,
        state,
        warmup_records,
        guided_records,
        warmup_eval,
        final_eval,
    })
}
