use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Arm, ExperimentConfig, LossCurveSummary};

/// Published MoNuSeg numbers (UNeXt, 512×512, 2000 epochs), embedded for context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub no_style_iou: f64,
    pub style_iou: f64,
    pub no_style_dice: f64,
    pub style_dice: f64,
}

pub const REFERENCE: ReferenceValues = ReferenceValues {
    no_style_iou: 0.6072,
    style_iou: 0.6656,
    no_style_dice: 0.7533,
    style_dice: 0.7991,
};

const REFERENCE_LABEL: &str =
    "Published MoNuSeg results (UNeXt, 512x512, 2000 epochs); reference only, not produced by this run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArmOutcome {
    Completed {
        mean_iou: f64,
        mean_dice: f64,
        std_iou: f64,
        std_dice: f64,
        best_epoch: usize,
        best_val_iou: f64,
        loss_curve: LossCurveSummary,
    },
    Failed {
        error: String,
        exit_code: i32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub arm: Arm,
    pub outcome: ArmOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMedian {
    pub arm: Arm,
    /// Completed runs contributing to the medians.
    pub completed: usize,
    pub median_iou: Option<f64>,
    pub median_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBlock {
    pub label: String,
    pub values: ReferenceValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub medians: Vec<ArmMedian>,
    pub reference: ReferenceBlock,
}

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, runs: Vec<RunRecord>) -> Self {
        let medians = Arm::BOTH
            .into_iter()
            .map(|arm| {
                let (ious, dices): (Vec<f64>, Vec<f64>) = runs
                    .iter()
                    .filter(|r| r.arm == arm)
                    .filter_map(|r| match r.outcome {
                        ArmOutcome::Completed { mean_iou, mean_dice, .. } => Some((mean_iou, mean_dice)),
                        ArmOutcome::Failed { .. } => None,
                    })
                    .unzip();
                ArmMedian {
                    arm,
                    completed: ious.len(),
                    median_iou: median(&ious),
                    median_dice: median(&dices),
                }
            })
            .collect();
        Self {
            schema: super::SCHEMA_VERSION,
            config,
            runs,
            medians,
            reference: ReferenceBlock {
                label: REFERENCE_LABEL.into(),
                values: REFERENCE,
            },
        }
    }

    pub fn median_for(&self, arm: Arm) -> Option<&ArmMedian> {
        self.medians.iter().find(|m| m.arm == arm)
    }

    pub fn run(&self, seed: u64, arm: Arm) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.seed == seed && r.arm == arm)
    }

    /// Largest exit code among failed runs, 0 when all completed.
    pub fn failure_code(&self) -> i32 {
        self.runs
            .iter()
            .filter_map(|r| match r.outcome {
                ArmOutcome::Failed { exit_code, .. } => Some(exit_code),
                ArmOutcome::Completed { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let no = self.median_for(Arm::NoStyle);
        let st = self.median_for(Arm::Style);
        let mut s = String::new();
        let _ = writeln!(s, "# {}\n", self.config.name);
        let _ = writeln!(
            s,
            "Median over seeds {:?}; metrics averaged over {} dropout instances per run (threshold {}).\n",
            self.config.seeds, self.config.eval.n_instances, self.config.eval.threshold
        );
        let _ = writeln!(s, "| | {} | {} |", Arm::NoStyle.label(), Arm::Style.label());
        let _ = writeln!(s, "|---|---|---|");
        let _ = writeln!(
            s,
            "| IoU | {} | {} |",
            cell(no.and_then(|m| m.median_iou)),
            cell(st.and_then(|m| m.median_iou))
        );
        let _ = writeln!(
            s,
            "| Dice | {} | {} |",
            cell(no.and_then(|m| m.median_dice)),
            cell(st.and_then(|m| m.median_dice))
        );
        let _ = writeln!(s, "\n## Runs\n");
        let _ = writeln!(s, "| seed | arm | IoU | Dice | best epoch | min val loss epoch | final / min val loss |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for r in &self.runs {
            match &r.outcome {
                ArmOutcome::Completed {
                    mean_iou,
                    mean_dice,
                    std_iou,
                    std_dice,
                    best_epoch,
                    loss_curve,
                    ..
                } => {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {mean_iou:.4} ± {std_iou:.4} | {mean_dice:.4} ± {std_dice:.4} | {best_epoch} | {} | {:.3} |",
                        r.seed,
                        r.arm.as_str(),
                        loss_curve.min_val_loss_epoch,
                        loss_curve.final_over_min_val_loss
                    );
                }
                ArmOutcome::Failed { error, .. } => {
                    let _ = writeln!(s, "| {} | {} | failed: {error} | | | | |", r.seed, r.arm.as_str());
                }
            }
        }
        let v = self.reference.values;
        let _ = writeln!(s, "\n## Reference\n\n{}.\n", self.reference.label);
        let _ = writeln!(s, "| | {} | {} |", Arm::NoStyle.label(), Arm::Style.label());
        let _ = writeln!(s, "|---|---|---|");
        let _ = writeln!(s, "| IoU | {:.4} | {:.4} |", v.no_style_iou, v.style_iou);
        let _ = writeln!(s, "| Dice | {:.4} | {:.4} |", v.no_style_dice, v.style_dice);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_rules() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn failed_runs_are_excluded_from_medians() {
        let curve = LossCurveSummary::default();
        let done = |seed, arm, iou| RunRecord {
            seed,
            arm,
            outcome: ArmOutcome::Completed {
                mean_iou: iou,
                mean_dice: iou,
                std_iou: 0.0,
                std_dice: 0.0,
                best_epoch: 1,
                best_val_iou: iou,
                loss_curve: curve.clone(),
            },
        };
        let runs = vec![
            done(0, Arm::NoStyle, 0.2),
            done(1, Arm::NoStyle, 0.4),
            done(0, Arm::Style, 0.5),
            RunRecord {
                seed: 1,
                arm: Arm::Style,
                outcome: ArmOutcome::Failed {
                    error: "diverged".into(),
                    exit_code: 3,
                },
            },
        ];
        let r = ExperimentReport::new(ExperimentConfig::synthetic_benchmark(), runs);
        assert!((r.median_for(Arm::NoStyle).unwrap().median_iou.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.median_for(Arm::Style).unwrap().completed, 1);
        assert_eq!(r.failure_code(), 3);
        let md = r.to_markdown();
        assert!(md.contains("0.6072") && md.contains("0.7991") && md.contains("not produced by this run"));
    }
}
