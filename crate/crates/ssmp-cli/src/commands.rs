//! Subcommand implementations.

use crate::manifest::{content_hash, write_manifest};
use anyhow::{bail, Context, Result};
use ssmp_core::ablate::{run_ablation, AblationPlan};
use ssmp_core::checkpoint::{load_checkpoint, save_checkpoint};
use ssmp_core::cloud_io;
use ssmp_core::data::{generate_synthetic_dataset, ingest::load_dataset, ingest::save_dataset,
    split_labeled, SplitSpec, SynthConfig};
use ssmp_core::eval::evaluate_checkpoint;
use ssmp_core::fusion::write_prior_manifest;
use ssmp_core::pipeline::PipelineResult;
use ssmp_core::train::{
    build_priors_detailed, teacher_guided_train, warmup_train, AugmentationSpec, PipelineConfig,
    Priors, TrainHooks, TrainRecord,
};
use std::fs;
use std::path::Path;
use std::str::FromStr;

pub fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = SynthConfig::from_file(config)?;
    let dataset = generate_synthetic_dataset(&cfg)?;
    save_dataset(out, &dataset)?;
    write_manifest(
        &out.join("run-manifest.txt"),
        &[
            ("command", "gen-data".into()),
            ("config", cfg.to_file_string()),
            ("config_hash", content_hash(&[config])?),
            ("samples", dataset.samples.len().to_string()),
        ],
    )?;
    println!(
        "wrote {} samples across {} categories to {}",
        dataset.samples.len(),
        dataset.categories.len(),
        out.display()
    );
    Ok(())
}

pub fn fuse_priors(
    dataset_dir: &Path,
    category: &str,
    k: usize,
    strategy: &str,
    labeled_ratio: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut dataset = load_dataset(dataset_dir)?;
    split_labeled(
        &mut dataset,
        &SplitSpec {
            labeled_ratio,
            seed,
        },
    )?;
    let mut cfg = PipelineConfig::default();
    cfg.net.n_points = dataset.n_points;
    cfg.net.img_size = dataset.img_size;
    cfg.fusion_k = k;
    cfg.fusion_strategy = ssmp_core::fusion::FusionStrategy::from_str(strategy)?;
    cfg.train.seed = seed;
    cfg.labeled_ratio = labeled_ratio;
    cfg.split_seed = seed;

    let view = dataset.train_view();
    let (_, results) = build_priors_detailed(&view, &cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = 0usize;
    for (cat, result) in &results {
        if category != "all" && cat != category {
            continue;
        }
        let cloud_path = out.join(format!("{cat}.{}", cloud_io::CLOUD_EXT));
        cloud_io::save_cloud(&cloud_path, &result.fused)?;
        write_prior_manifest(
            &out.join(format!("{cat}.manifest.txt")),
            result,
            cat,
            k.min(result.weights.len()),
            dataset.n_points,
            seed,
        )?;
        written += 1;
    }
    if written == 0 {
        bail!("category {category:?} not present in the dataset");
    }
    println!("wrote {written} prior(s) to {}", out.display());
    Ok(())
}

fn load_config_with_seed(config: &Path, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::from_file(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
        cfg.split_seed = seed;
    }
    Ok(cfg)
}

fn load_or_build_priors(
    cfg: &PipelineConfig,
    dataset: &ssmp_core::data::Dataset,
    priors_dir: Option<&Path>,
) -> Result<Priors> {
    match priors_dir {
        Some(dir) => Ok(Priors::from_dir(dir, cfg.net.n_points)?),
        None => {
            log::info!("no --priors given; building priors in process");
            Ok(ssmp_core::train::build_priors(&dataset.train_view(), cfg)?)
        }
    }
}

fn write_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn train_warmup(
    config: &Path,
    data: &Path,
    priors_dir: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config_with_seed(config, seed)?;
    let mut dataset = load_dataset(data)?;
    if dataset.n_points != cfg.net.n_points {
        bail!(
            "dataset holds {} points per cloud, config expects {}",
            dataset.n_points,
            cfg.net.n_points
        );
    }
    split_labeled(
        &mut dataset,
        &SplitSpec {
            labeled_ratio: cfg.labeled_ratio,
            seed: cfg.split_seed,
        },
    )?;
    let priors = load_or_build_priors(&cfg, &dataset, priors_dir)?;
    let view = dataset.train_view();
    let (teacher, records) = warmup_train(
        &view.labeled(),
        &priors,
        &cfg.net,
        &cfg.train,
        &mut TrainHooks::default(),
    )?;
    fs::create_dir_all(out)?;
    save_checkpoint(out.join("teacher.ckpt"), &cfg.net, &teacher)?;
    write_records(&out.join("warmup-log.jsonl"), &records)?;
    write_manifest(
        &out.join("run-manifest.txt"),
        &[
            ("command", "train-warmup".into()),
            ("config", cfg.to_file_string()),
            ("net_config_hash", cfg.net.config_hash()),
            ("inputs_hash", content_hash(&[&data.join("manifest.txt")])?),
            ("seed", cfg.train.seed.to_string()),
            ("steps", records.len().to_string()),
            (
                "final_loss",
                records.last().map(|r| r.loss_total.to_string()).unwrap_or_default(),
            ),
        ],
    )?;
    println!(
        "warm-up done: {} steps, final loss {:.6}; checkpoint at {}",
        records.len(),
        records.last().map(|r| r.loss_total).unwrap_or(f64::NAN),
        out.join("teacher.ckpt").display()
    );
    Ok(())
}

pub fn train_ssl(
    config: &Path,
    data: &Path,
    priors_dir: Option<&Path>,
    teacher_path: &Path,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config_with_seed(config, seed)?;
    let mut dataset = load_dataset(data)?;
    split_labeled(
        &mut dataset,
        &SplitSpec {
            labeled_ratio: cfg.labeled_ratio,
            seed: cfg.split_seed,
        },
    )?;
    let priors = load_or_build_priors(&cfg, &dataset, priors_dir)?;
    let teacher_ckpt = load_checkpoint(teacher_path)?;
    if teacher_ckpt.config.config_hash() != cfg.net.config_hash() {
        bail!(
            "teacher checkpoint config hash {} does not match config {}",
            teacher_ckpt.config.config_hash(),
            cfg.net.config_hash()
        );
    }
    let view = dataset.train_view();
    let (state, records) = teacher_guided_train(
        &view.labeled(),
        &view.unlabeled(),
        teacher_ckpt.params,
        &priors,
        &cfg.net,
        &cfg.train,
        &AugmentationSpec::default(),
        &mut TrainHooks::default(),
    )?;
    fs::create_dir_all(out)?;
    save_checkpoint(out.join("teacher.ckpt"), &cfg.net, &state.teacher)?;
    save_checkpoint(out.join("student.ckpt"), &cfg.net, &state.student)?;
    write_records(&out.join("guided-log.jsonl"), &records)?;
    write_manifest(
        &out.join("run-manifest.txt"),
        &[
            ("command", "train-ssl".into()),
            ("config", cfg.to_file_string()),
            ("net_config_hash", cfg.net.config_hash()),
            (
                "inputs_hash",
                content_hash(&[&data.join("manifest.txt"), teacher_path])?,
            ),
            ("seed", cfg.train.seed.to_string()),
            ("steps", records.len().to_string()),
        ],
    )?;
    println!(
        "guided stage done: {} steps; EMA teacher at {}",
        records.len(),
        out.join("teacher.ckpt").display()
    );
    Ok(())
}

pub fn eval(
    model: &Path,
    data: &Path,
    priors_dir: &Path,
    tag: &str,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = load_checkpoint(model)?;
    let dataset = load_dataset(data)?;
    let priors = Priors::from_dir(priors_dir, ckpt.config.n_points)?;
    let report = evaluate_checkpoint(&ckpt.config, &ckpt.params, &dataset, &priors, tag, 0)?;
    print!("{}", report.table());
    if let Some(path) = out {
        fs::write(path, format!("{}\n", report.to_json_line()))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn ablate(plan: &str, config: &Path, data: &Path, seeds: &str, out: &Path) -> Result<()> {
    let plan = AblationPlan::from_str(plan)?;
    let base = PipelineConfig::from_file(config)?;
    let mut dataset = load_dataset(data)?;
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>().context("bad seed list"))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;

    let base_for_cb = base.clone();
    let out_dir = out.to_path_buf();
    let mut persist = move |arm: &ssmp_core::ablate::AblationArm,
                            seed: u64,
                            res: &PipelineResult| {
        let dir = out_dir.join(&arm.name).join(format!("seed{seed}"));
        let write = || -> Result<()> {
            fs::create_dir_all(&dir)?;
            save_checkpoint(dir.join("teacher.ckpt"), &res.config.net, &res.state.teacher)?;
            write_records(&dir.join("warmup-log.jsonl"), &res.warmup_records)?;
            write_records(&dir.join("guided-log.jsonl"), &res.guided_records)?;
            fs::write(
                dir.join("eval.jsonl"),
                format!(
                    "{}\n{}\n",
                    res.warmup_eval.to_json_line(),
                    res.final_eval.to_json_line()
                ),
            )?;
            write_manifest(
                &dir.join("run-manifest.txt"),
                &[
                    ("command", "ablate".into()),
                    ("arm", arm.name.clone()),
                    (
                        "overrides",
                        arm.overrides
                            .iter()
                            .map(|(k, v)| format!("{k}={v}"))
                            .collect::<Vec<_>>()
                            .join(","),
                    ),
                    ("seed", seed.to_string()),
                    ("config", res.config.to_file_string()),
                    ("base_config", base_for_cb.to_file_string()),
                ],
            )?;
            Ok(())
        };
        if let Err(e) = write() {
            log::warn!("failed to persist arm {} seed {seed}: {e}", arm.name);
        }
    };
    let outcome = run_ablation(plan, &base, &mut dataset, &seeds, Some(&mut persist))?;
    let table = outcome.table();
    print!("{table}");
    let mut summary = table;
    summary.push_str("\nordering (best first):\n");
    for (name, cd) in outcome.ordering() {
        match cd {
            Some(cd) => summary.push_str(&format!("  {name}: {:.4}\n", cd * 100.0)),
            None => summary.push_str(&format!("  {name}: failed\n")),
        }
    }
    fs::write(out.join("summary.txt"), summary)?;
    Ok(())
}
