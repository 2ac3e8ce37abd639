//! Evaluation reports: per-category mean chamfer distance over a test set,
//! rendered as an aligned table (x100 convention) and as line-delimited
//! JSON records.

use crate::cloud::chamfer_distance;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::net::{Mode, NetConfig, ReconNet};
use crate::nn::{ParamSet, Tape, TapeParams};
use crate::train::Priors;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CategoryScore {
    pub mean_cd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    /// Which model produced this report (for example `teacher-final`).
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub per_category: BTreeMap<String, CategoryScore>,
    /// Sample-count-weighted mean of the category means.
    pub overall_mean_cd: f64,
    pub sample_count: usize,
}

impl EvalReport {
    /// Aligned human-readable table; chamfer distances are shown times 100.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "model {}  (config {}, seed {}, CD x 100)\n",
            self.model, self.config_hash, self.seed
        ));
        let width = self
            .per_category
            .keys()
            .map(|k| k.len())
            .chain(["overall".len()])
            .max()
            .unwrap_or(8);
        for (cat, score) in &self.per_category {
            out.push_str(&format!(
                "  {cat:<width$}  {:>8.4}  (n={})\n",
                score.mean_cd * 100.0,
                score.count
            ));
        }
        out.push_str(&format!(
            "  {:<width$}  {:>8.4}  (n={})\n",
            "overall",
            self.overall_mean_cd * 100.0,
            self.sample_count
        ));
        out
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// The weighted-mean consistency every report must satisfy.
    pub fn check_consistency(&self) -> Result<()> {
        let total: usize = self.per_category.values().map(|s| s.count).sum();
        let weighted: f64 = self
            .per_category
            .values()
            .map(|s| s.mean_cd * s.count as f64)
            .sum::<f64>()
            / total as f64;
        if total != self.sample_count {
            return Err(Error::Consistency("sample count mismatch".into()));
        }
        if (weighted - self.overall_mean_cd).abs() > 1e-9 {
            return Err(Error::Consistency(format!(
                "weighted mean {weighted} vs overall {}",
                self.overall_mean_cd
            )));
        }
        if !self.overall_mean_cd.is_finite() {
            return Err(Error::Consistency("non-finite overall mean".into()));
        }
        Ok(())
    }
}

/// Eval-mode forward on every test sample, chamfer distance against ground
/// truth, aggregated per category. The model, priors, and dataset must
/// agree on the point count.
pub fn evaluate(
    net: &ReconNet,
    params: &ParamSet,
    dataset: &Dataset,
    priors: &Priors,
    model_tag: &str,
    seed: u64,
) -> Result<EvalReport> {
    if net.cfg.n_points != dataset.n_points {
        return Err(Error::ConfigMismatch(format!(
            "model expects {} points, dataset holds {}",
            net.cfg.n_points, dataset.n_points
        )));
    }
    if priors.n_points != dataset.n_points {
        return Err(Error::ConfigMismatch(format!(
            "priors built for {} points, dataset holds {}",
            priors.n_points, dataset.n_points
        )));
    }
    let samples: Vec<&Sample> = dataset.test_samples().collect();
    if samples.is_empty() {
        return Err(Error::invalid("dataset has no test samples"));
    }
    let distances: Vec<Result<(String, f64)>> = samples
        .par_iter()
        .map(|s| {
            let target = s.eval_ground_truth().ok_or_else(|| {
                Error::invalid(format!("test sample {} has no ground truth", s.uid))
            })?;
            let prior = priors.cloud(&s.category)?;
            let tape = Tape::new();
            let tp = TapeParams::register(&tape, params);
            let mut mode = Mode::Eval;
            let pred = net.forward(&tape, &tp, params, &s.image, prior, &mut mode)?;
            let pred = crate::cloud::PointCloud::from_flat(pred.value().data())?;
            Ok((s.category.clone(), chamfer_distance(&pred, target)?))
        })
        .collect();

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for d in distances {
        let (category, cd) = d?;
        let e = sums.entry(category).or_insert((0.0, 0));
        e.0 += cd;
        e.1 += 1;
    }
    let per_category: BTreeMap<String, CategoryScore> = sums
        .into_iter()
        .map(|(cat, (sum, count))| {
            (
                cat,
                CategoryScore {
                    mean_cd: sum / count as f64,
                    count,
                },
            )
        })
        .collect();
    let sample_count: usize = per_category.values().map(|s| s.count).sum();
    let overall_mean_cd = per_category
        .values()
        .map(|s| s.mean_cd * s.count as f64)
        .sum::<f64>()
        / sample_count as f64;
    let report = EvalReport {
        model: model_tag.to_string(),
        config_hash: net.config_hash(),
        seed,
        per_category,
        overall_mean_cd,
        sample_count,
    };
    report.check_consistency()?;
    Ok(report)
}

/// Builds a network from a checkpoint and evaluates it.
pub fn evaluate_checkpoint(
    config: &NetConfig,
    params: &ParamSet,
    dataset: &Dataset,
    priors: &Priors,
    model_tag: &str,
    seed: u64,
) -> Result<EvalReport> {
    let mut scratch = ParamSet::new();
    let net = ReconNet::build(config, &mut scratch, 0)?;
    scratch.congruent(params)?;
    evaluate(&net, params, dataset, priors, model_tag, seed)
}
