//! Paired-seed ablation runner.
//!
//! Each plan is a base config plus per-arm override deltas. Arms run with
//! identical seed lists (same split, same initialization, same data order),
//! so arm differences isolate the declared delta. The runner checks that
//! isolation mechanically before running anything.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::pipeline::{run_pipeline, PipelineResult};
use crate::train::PipelineConfig;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationPlan {
    SslVsWarmup,
    FusionStrategy,
    PriorSingleVsMulti,
    DecoderType,
    LabelRatio,
}

impl fmt::Display for AblationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationPlan::SslVsWarmup => "ssl-vs-warmup",
            AblationPlan::FusionStrategy => "fusion-strategy",
            AblationPlan::PriorSingleVsMulti => "prior-single-vs-multi",
            AblationPlan::DecoderType => "decoder-type",
            AblationPlan::LabelRatio => "label-ratio",
        };
        write!(f, "{s}")
    }
}

impl FromStr for AblationPlan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssl-vs-warmup" => Ok(AblationPlan::SslVsWarmup),
            "fusion-strategy" => Ok(AblationPlan::FusionStrategy),
            "prior-single-vs-multi" => Ok(AblationPlan::PriorSingleVsMulti),
            "decoder-type" => Ok(AblationPlan::DecoderType),
            "label-ratio" => Ok(AblationPlan::LabelRatio),
            other => Err(Error::invalid(format!("unknown ablation plan {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationArm {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl AblationPlan {
    pub fn arms(&self) -> Vec<AblationArm> {
        let arm = |name: &str, overrides: &[(&str, &str)]| AblationArm {
            name: name.to_string(),
            overrides: overrides
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        };
        match self {
            AblationPlan::SslVsWarmup => vec![
                arm("warmup-only", &[("train.guided_epochs", "0")]),
                arm("teacher-guided", &[]),
            ],
            AblationPlan::FusionStrategy => vec![
                arm("inverse", &[]),
                arm("direct", &[("fusion.strategy", "direct")]),
                arm("penalty", &[("fusion.strategy", "penalty")]),
            ],
            AblationPlan::PriorSingleVsMulti => vec![
                arm("single-sphere", &[("fusion.mode", "sphere")]),
                arm("multi-fused", &[]),
            ],
            AblationPlan::DecoderType => vec![
                arm("self-attention", &[]),
                arm("mlp", &[("net.decoder", "mlp")]),
            ],
            AblationPlan::LabelRatio => vec![
                arm("ratio-01", &[("data.labeled_ratio", "0.01")]),
                arm("ratio-10", &[("data.labeled_ratio", "0.1")]),
                arm("ratio-20", &[("data.labeled_ratio", "0.2")]),
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub warmup_eval: EvalReport,
    pub final_eval: EvalReport,
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub arm: AblationArm,
    pub seeds: Vec<SeedOutcome>,
    /// Failure message when any seed of this arm failed.
    pub error: Option<String>,
}

impl ArmOutcome {
    pub fn mean_final_cd(&self) -> Option<f64> {
        if self.seeds.is_empty() || self.error.is_some() {
            return None;
        }
        Some(
            self.seeds.iter().map(|s| s.final_eval.overall_mean_cd).sum::<f64>()
                / self.seeds.len() as f64,
        )
    }

    pub fn mean_warmup_cd(&self) -> Option<f64> {
        if self.seeds.is_empty() {
            return None;
        }
        Some(
            self.seeds.iter().map(|s| s.warmup_eval.overall_mean_cd).sum::<f64>()
                / self.seeds.len() as f64,
        )
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub plan: AblationPlan,
    pub arms: Vec<ArmOutcome>,
}

impl AblationOutcome {
    /// Arms ranked by mean final CD, best first; failed arms sort last.
    pub fn ordering(&self) -> Vec<(String, Option<f64>)> {
        let mut rows: Vec<(String, Option<f64>)> = self
            .arms
            .iter()
            .map(|a| (a.arm.name.clone(), a.mean_final_cd()))
            .collect();
        rows.sort_by(|a, b| match (a.1, b.1) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        rows
    }

    pub fn table(&self) -> String {
        let mut out = format!("ablation {}\n", self.plan);
        for armo in &self.arms {
            match (&armo.error, armo.mean_final_cd()) {
                (Some(e), _) => out.push_str(&format!("  {:<16} FAILED: {e}\n", armo.arm.name)),
                (None, Some(cd)) => {
                    let per_seed: Vec<String> = armo
                        .seeds
                        .iter()
                        .map(|s| format!("{:.4}", s.final_eval.overall_mean_cd * 100.0))
                        .collect();
                    out.push_str(&format!(
                        "  {:<16} mean CD x100 = {:>8.4}  (seeds: {})\n",
                        armo.arm.name,
                        cd * 100.0,
                        per_seed.join(", ")
                    ));
                }
                (None, None) => out.push_str(&format!("  {:<16} (no seeds)\n", armo.arm.name)),
            }
        }
        out
    }
}

/// Applies `overrides` to a copy of `base` and validates the result.
pub fn arm_config(base: &PipelineConfig, arm: &AblationArm, seed: u64) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    for (k, v) in &arm.overrides {
        cfg.set(k, v)?;
    }
    cfg.train.seed = seed;
    cfg.split_seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Mechanical arm isolation: the config diff between any two arms may only
/// contain keys one of them declared as its delta.
pub fn check_arm_isolation(base: &PipelineConfig, arms: &[AblationArm]) -> Result<()> {
    let configs: Vec<PipelineConfig> = arms
        .iter()
        .map(|a| arm_config(base, a, base.train.seed))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..arms.len() {
        for j in i + 1..arms.len() {
            let diff = configs[i].diff_keys(&configs[j]);
            for key in &diff {
                let declared = arms[i].overrides.iter().any(|(k, _)| k == key)
                    || arms[j].overrides.iter().any(|(k, _)| k == key);
                if !declared {
                    return Err(Error::Consistency(format!(
                        "arms {} and {} differ on undeclared key {key}",
                        arms[i].name, arms[j].name
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Runs every arm of `plan` over the same seed list. A failing arm is
/// flagged and the remaining arms still run (partial report).
pub fn run_ablation(
    plan: AblationPlan,
    base: &PipelineConfig,
    dataset: &mut Dataset,
    seeds: &[u64],
    mut on_result: Option<&mut dyn FnMut(&AblationArm, u64, &PipelineResult)>,
) -> Result<AblationOutcome> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let arms = plan.arms();
    check_arm_isolation(base, &arms)?;
    let mut outcomes = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut seed_outcomes = Vec::new();
        let mut error = None;
        for &seed in seeds {
            let result = arm_config(base, &arm, seed).and_then(|cfg| run_pipeline(dataset, &cfg));
            match result {
                Ok(res) => {
                    if let Some(cb) = on_result.as_deref_mut() {
                        cb(&arm, seed, &res);
                    }
                    seed_outcomes.push(SeedOutcome {
                        seed,
                        warmup_eval: res.warmup_eval.clone(),
                        final_eval: res.final_eval.clone(),
                    });
                }
                Err(e) => {
                    log::warn!("ablation arm {} seed {seed} failed: {e}", arm.name);
                    error = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        outcomes.push(ArmOutcome {
            arm,
            seeds: seed_outcomes,
            error,
        });
    }
    Ok(AblationOutcome {
        plan,
        arms: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_plan_passes_arm_isolation() {
        let base = PipelineConfig::default();
        for plan in [
            AblationPlan::SslVsWarmup,
            AblationPlan::FusionStrategy,
            AblationPlan::PriorSingleVsMulti,
            AblationPlan::DecoderType,
            AblationPlan::LabelRatio,
        ] {
            check_arm_isolation(&base, &plan.arms()).unwrap();
        }
    }

    #[test]
    fn arm_config_applies_declared_delta_only() {
        let base = PipelineConfig::default();
        let arms = AblationPlan::DecoderType.arms();
        let cfg = arm_config(&base, &arms[1], base.train.seed).unwrap();
        assert_eq!(base.diff_keys(&cfg), vec!["net.decoder".to_string()]);
    }

    #[test]
    fn plan_names_roundtrip() {
        for plan in [
            AblationPlan::SslVsWarmup,
            AblationPlan::FusionStrategy,
            AblationPlan::PriorSingleVsMulti,
            AblationPlan::DecoderType,
            AblationPlan::LabelRatio,
        ] {
            assert_eq!(AblationPlan::from_str(&plan.to_string()).unwrap(), plan);
        }
        assert!(AblationPlan::from_str("bogus").is_err());
    }
}
