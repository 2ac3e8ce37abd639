//! Teacher-guided stage: the student trains on labeled data plus
//! pseudo-labeled unlabeled data under three perturbation branches, and the
//! teacher tracks the student by EMA with a cosine momentum ramp.
//!
//! Pseudo-labels are regenerated at the start of every epoch from the
//! current teacher, in eval mode, with no gradient coupling.

use super::{
    alpha_schedule, check_finite, ema_update, generate_pseudo_labels, ordered_batch, merge_grads,
    supervised_pass, AugmentationSpec, Priors, SamplePass, TeacherStudentState, TrainConfig,
    TrainHooks, TrainRecord,
};
use crate::cloud::PointCloud;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::net::{Mode, NetConfig, ReconNet, StatUpdates};
use crate::nn::optim::{cosine_lr, AdamW};
use crate::nn::{chamfer_to_const, ParamSet, Tape, TapeParams, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

struct Branches {
    weak: Image,
    strong1: Image,
    strong2: Image,
    /// Feature perturbation as (mask, offset) over the image feature row.
    feature: (Tensor, Tensor),
}

fn branch_rng(seed: u64, epoch: usize, uid: &str) -> ChaCha12Rng {
    let mut h = 0xcbf29ce484222325u64;
    for chunk in [&seed.to_le_bytes()[..], &(epoch as u64).to_le_bytes()[..], uid.as_bytes()] {
        for &b in chunk {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
    }
    ChaCha12Rng::seed_from_u64(h)
}

/// Student pass over one unlabeled sample: feature-perturbed branch plus two
/// strongly augmented branches, all measured against the constant
/// pseudo-label.
#[allow(clippy::too_many_arguments)]
fn unlabeled_pass(
    net: &ReconNet,
    student: &ParamSet,
    branches: &Branches,
    prior: &PointCloud,
    pseudo: &PointCloud,
    w_feature: f64,
    w_strong: f64,
    scale: f64,
) -> Result<SamplePass> {
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, student);
    let mut stats = StatUpdates::new();

    let (mask, offset) = &branches.feature;
    let mut mode = Mode::Train(&mut stats);
    let e_w = net.encode_image(&tape, &tp, &branches.weak)?;
    let e_fp = e_w.mul_const(mask).add_const(offset);
    let p_fp = net.forward_from_feature(&tape, &tp, student, e_fp, prior, &mut mode)?;
    let cd_fp = chamfer_to_const(p_fp, pseudo);

    let mut mode = Mode::Train(&mut stats);
    let p_s1 = net.forward(&tape, &tp, student, &branches.strong1, prior, &mut mode)?;
    let cd_s1 = chamfer_to_const(p_s1, pseudo);

    let mut mode = Mode::Train(&mut stats);
    let p_s2 = net.forward(&tape, &tp, student, &branches.strong2, prior, &mut mode)?;
    let cd_s2 = chamfer_to_const(p_s2, pseudo);

    let (v_fp, v_s1, v_s2) = (cd_fp.value().item(), cd_s1.value().item(), cd_s2.value().item());
    let loss = cd_fp
        .scale(w_feature)
        .add(cd_s1.add(cd_s2).scale(0.5 * w_strong))
        .scale(scale);
    let grads = tape.backward(loss);
    Ok(SamplePass {
        grads: tp.collect_grads(&grads),
        stats,
        losses: vec![v_fp, v_s1, v_s2],
    })
}

/// Runs the teacher-guided stage. The teacher enters as the warm-up result;
/// the student starts as its copy. Returns the final state (the EMA teacher
/// is the reported model) and the per-step log.
pub fn teacher_guided_train(
    labeled: &[&Sample],
    unlabeled: &[&Sample],
    teacher: ParamSet,
    priors: &Priors,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    aug: &AugmentationSpec,
    hooks: &mut TrainHooks<'_>,
) -> Result<(TeacherStudentState, Vec<TrainRecord>)> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("guided stage needs labeled samples"));
    }
    for s in labeled {
        s.labeled_cloud()?;
    }

    let mut scratch = ParamSet::new();
    let net = ReconNet::build(net_cfg, &mut scratch, cfg.seed)?;
    scratch.congruent(&teacher)?;

    let mut state = TeacherStudentState::from_teacher(teacher);
    let mut opt = AdamW::new(&state.student, cfg.weight_decay);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x6ded));

    let batch = cfg.guided_batch;
    let steps_per_epoch = if unlabeled.is_empty() {
        labeled.len().div_ceil(batch)
    } else {
        unlabeled.len().div_ceil(batch)
    };
    let total_steps = (cfg.guided_epochs * steps_per_epoch) as u64;
    let mut records = Vec::with_capacity(total_steps as usize);
    let mut step = 0u64;

    for epoch in 0..cfg.guided_epochs {
        // Per-epoch branch construction and pseudo-label regeneration from
        // the current EMA teacher.
        let mut branches: Vec<Branches> = Vec::with_capacity(unlabeled.len());
        for s in unlabeled {
            let mut r = branch_rng(cfg.seed, epoch, &s.uid);
            // One weak (geometric) draw per sample; the strong branches
            // perturb appearance on top of the same geometry so all three
            // branches share the pseudo-label target.
            let weak = aug.weak(&s.image, &mut r);
            let strong1 = aug.strong_extras(&weak, &mut r);
            let strong2 = aug.strong_extras(&weak, &mut r);
            let kind = aug.draw_feature_kind(&mut r);
            // The perturbation is built against the teacher's feature
            // statistics; its std only scales the noise amplitude.
            let feat_probe = teacher_feature(&net, &state.teacher, &weak)?;
            let feature = aug.feature_perturbation(&feat_probe, kind, &mut r);
            branches.push(Branches {
                weak,
                strong1,
                strong2,
                feature,
            });
        }
        let pseudo_inputs: Vec<(Image, String)> = branches
            .iter()
            .zip(unlabeled)
            .map(|(b, s)| (b.weak.clone(), s.category.clone()))
            .collect();
        let pseudo = generate_pseudo_labels(&net, &state.teacher, &pseudo_inputs, priors)?;

        let mut unlabeled_order: Vec<usize> = (0..unlabeled.len()).collect();
        unlabeled_order.shuffle(&mut rng);
        let mut labeled_order: Vec<usize> = (0..labeled.len()).collect();
        labeled_order.shuffle(&mut rng);
        let mut labeled_cursor = 0usize;

        for step_in_epoch in 0..steps_per_epoch {
            // Labeled batch: cycle through the shuffled labeled set.
            let labeled_batch: Vec<&Sample> = (0..batch.min(labeled.len()))
                .map(|_| {
                    let s = labeled[labeled_order[labeled_cursor % labeled.len()]];
                    labeled_cursor += 1;
                    s
                })
                .collect();
            let labeled_uids: Vec<String> = labeled_batch.iter().map(|s| s.uid.clone()).collect();
            let sup_scale = 1.0 / labeled_batch.len() as f64;
            let sup_pass = ordered_batch(
                labeled_batch,
                |s| {
                    supervised_pass(
                        &net,
                        &state.student,
                        &s.image,
                        priors.cloud(&s.category)?,
                        s.labeled_cloud()?,
                        sup_scale,
                    )
                },
                state.student.len(),
            )?;
            let loss_sup = sup_pass.losses[0] * sup_scale;

            let (un_pass, un_uids, loss_fp, loss_s1, loss_s2) = if unlabeled.is_empty() {
                (None, Vec::new(), 0.0, 0.0, 0.0)
            } else {
                let lo = step_in_epoch * batch;
                let hi = ((step_in_epoch + 1) * batch).min(unlabeled.len());
                let idx: Vec<usize> = unlabeled_order[lo..hi].to_vec();
                let un_scale = 1.0 / idx.len() as f64;
                let uids: Vec<String> = idx.iter().map(|&i| unlabeled[i].uid.clone()).collect();
                let pass = ordered_batch(
                    idx,
                    |i| {
                        unlabeled_pass(
                            &net,
                            &state.student,
                            &branches[i],
                            priors.cloud(&unlabeled[i].category)?,
                            &pseudo[i],
                            cfg.w_feature,
                            cfg.w_strong,
                            un_scale,
                        )
                    },
                    state.student.len(),
                )?;
                let n = (hi - lo) as f64;
                let (fp, s1, s2) = (pass.losses[0] / n, pass.losses[1] / n, pass.losses[2] / n);
                (Some(pass), uids, fp, s1, s2)
            };
            let loss_un = cfg.w_feature * loss_fp + 0.5 * cfg.w_strong * (loss_s1 + loss_s2);
            let loss_total = loss_un + loss_sup;
            let alpha = alpha_schedule(step, total_steps, cfg.alpha0);
            check_finite(
                step,
                &[
                    ("loss_total", loss_total),
                    ("loss_sup", loss_sup),
                    ("loss_un", loss_un),
                ],
            )
            .map_err(|e| attach_batches(e, &labeled_uids, &un_uids))?;

            let lr = cosine_lr(step, total_steps, cfg.guided_lr_start, cfg.guided_lr_end);
            let record = TrainRecord {
                step,
                stage: "guided".into(),
                loss_total,
                loss_cd: None,
                loss_orth: None,
                loss_sup: Some(loss_sup),
                loss_un: Some(loss_un),
                loss_fp: Some(loss_fp),
                loss_s1: Some(loss_s1),
                loss_s2: Some(loss_s2),
                alpha: Some(alpha),
                lr,
                labeled_batch: labeled_uids,
                unlabeled_batch: un_uids,
            };
            if let Some(hook) = hooks.on_step.as_mut() {
                hook(&record, &state.student);
            }

            let mut grads = sup_pass.grads;
            let mut stats = sup_pass.stats;
            if let Some(pass) = un_pass {
                merge_grads(&mut grads, pass.grads);
                stats.extend(pass.stats);
            }
            opt.step(&mut state.student, &grads, lr);
            net.renormalize_bases(&mut state.student);
            net.apply_stat_updates(&mut state.student, &stats);
            ema_update(&mut state, alpha)?;
            state.step = step + 1;
            records.push(record);
            step += 1;
        }
    }
    Ok((state, records))
}

/// Eval-mode image feature from the teacher, used only to size the feature
/// perturbation.
fn teacher_feature(net: &ReconNet, teacher: &ParamSet, image: &Image) -> Result<Tensor> {
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, teacher);
    Ok(net.encode_image(&tape, &tp, image)?.value().as_ref().clone())
}

fn attach_batches(e: Error, labeled: &[String], unlabeled: &[String]) -> Error {
    match e {
        Error::Diverged { step, detail } => Error::Diverged {
            step,
            detail: format!(
                "{detail}; labeled batch: {}; unlabeled batch: {}",
                labeled.join(","),
                unlabeled.join(",")
            ),
        },
        other => other,
    }
}
