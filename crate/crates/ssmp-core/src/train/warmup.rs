//! Supervised warm-up of the teacher: chamfer reconstruction loss plus the
//! weighted basis orthogonality penalty, cosine learning-rate decay.

use super::{
    check_finite, ordered_batch, orthogonality_pass, supervised_pass, Priors, TrainConfig,
    TrainHooks, TrainRecord,
};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::net::{NetConfig, ReconNet};
use crate::nn::optim::{cosine_lr, AdamW};
use crate::nn::ParamSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Trains the teacher on fully labeled data. Every sample must be labeled;
/// an unlabeled sample is an input error, not something to silently skip.
pub fn warmup_train(
    labeled: &[&Sample],
    priors: &Priors,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<(ParamSet, Vec<TrainRecord>)> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("warm-up needs at least one labeled sample"));
    }
    for s in labeled {
        if !s.labeled {
            return Err(Error::invalid(format!(
                "sample {} in the warm-up set is not labeled",
                s.uid
            )));
        }
        s.labeled_cloud()?;
    }

    let mut params = ParamSet::new();
    let net = ReconNet::build(net_cfg, &mut params, cfg.seed)?;
    let mut opt = AdamW::new(&params, cfg.weight_decay);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let steps_per_epoch = labeled.len().div_ceil(cfg.warmup_batch);
    let total_steps = (cfg.warmup_epochs * steps_per_epoch) as u64;
    let mut records = Vec::with_capacity(total_steps as usize);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut step = 0u64;

    for _epoch in 0..cfg.warmup_epochs {
        order.shuffle(&mut rng);
        for batch_idx in order.chunks(cfg.warmup_batch) {
            let scale = 1.0 / batch_idx.len() as f64;
            let items: Vec<&Sample> = batch_idx.iter().map(|&i| labeled[i]).collect();
            let uids: Vec<String> = items.iter().map(|s| s.uid.clone()).collect();
            let pass = ordered_batch(
                items,
                |s| {
                    supervised_pass(
                        &net,
                        &params,
                        &s.image,
                        priors.cloud(&s.category)?,
                        s.labeled_cloud()?,
                        scale,
                    )
                },
                params.len(),
            )?;
            let mean_cd = pass.losses[0] / batch_idx.len() as f64;
            let (orth_value, orth_grads) = orthogonality_pass(&net, &params);
            let loss_total = mean_cd + cfg.orth_weight * orth_value;
            check_finite(
                step,
                &[
                    ("loss_total", loss_total),
                    ("loss_cd", mean_cd),
                    ("loss_orth", orth_value),
                ],
            )
            .map_err(|e| attach_batch(e, &uids))?;

            let lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end);
            let record = TrainRecord {
                step,
                stage: "warmup".into(),
                loss_total,
                loss_cd: Some(mean_cd),
                loss_orth: Some(orth_value),
                loss_sup: None,
                loss_un: None,
                loss_fp: None,
                loss_s1: None,
                loss_s2: None,
                alpha: None,
                lr,
                labeled_batch: uids,
                unlabeled_batch: Vec::new(),
            };
            if let Some(hook) = hooks.on_step.as_mut() {
                hook(&record, &params);
            }

            let mut grads = pass.grads;
            for (slot, g) in orth_grads.into_iter().enumerate() {
                if let Some(g) = g {
                    match &mut grads[slot] {
                        Some(a) => a.axpy(cfg.orth_weight, &g),
                        a @ None => *a = Some(g.scale(cfg.orth_weight)),
                    }
                }
            }
            opt.step(&mut params, &grads, lr);
            net.renormalize_bases(&mut params);
            net.apply_stat_updates(&mut params, &pass.stats);
            records.push(record);
            step += 1;
        }
    }
    Ok((params, records))
}

fn attach_batch(e: Error, uids: &[String]) -> Error {
    match e {
        Error::Diverged { step, detail } => Error::Diverged {
            step,
            detail: format!("{detail}; batch uids: {}", uids.join(",")),
        },
        other => other,
    }
}
