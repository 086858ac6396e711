//! `ocra eval`: compare rollout logs against the dataset's ground-truth
//! trajectory and classify each rollout as success, outcome failure, or
//! process failure.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ocra_core::control::camera_to_robot;
use ocra_core::synth::read_manifest;
use ocra_core::{Error, Result, Se3Transform};

use crate::config::PipelineConfig;
use crate::util::write_json_atomic;

use super::rollout::read_rollout;
use super::{manifest_path, metrics_path, rollout_path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// Final pose within both thresholds.
    Success,
    /// Run completed but the final pose is out of threshold.
    OutcomeFailure,
    /// Error diverged mid-run: some step error exceeded 10x its threshold.
    ProcessFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Meters.
    pub translation_error: f64,
    pub rotation_error_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub rollout: usize,
    pub seed: u64,
    pub classification: Classification,
    pub final_translation_error: f64,
    pub final_rotation_error_deg: f64,
    /// RMS of measured force minus the dataset force reference.
    pub force_rmse: f64,
    pub steps: Vec<StepMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub translation_threshold: f64,
    pub rotation_threshold_deg: f64,
    pub n_success: usize,
    pub n_outcome_failure: usize,
    pub n_process_failure: usize,
    pub mean_final_translation_error: f64,
    pub mean_final_rotation_error_deg: f64,
    pub mean_force_rmse: f64,
    pub rollouts: Vec<RolloutMetrics>,
}

fn rotation_error_deg(a: &Se3Transform, b: &Se3Transform) -> f64 {
    let rel = Se3Transform::new(a.rotation * b.rotation.transpose(), nalgebra::Vector3::zeros());
    rel.rotation_angle().to_degrees()
}

pub fn evaluate(config: &PipelineConfig, root: &Path) -> Result<MetricsReport> {
    let manifest = read_manifest(&manifest_path(root))?;
    let gt_steps = &manifest.scene.trajectory;
    let t_thr = config.eval.translation_threshold;
    let r_thr = config.eval.rotation_threshold_deg;

    let mut rollouts = Vec::new();
    for r in 0..config.rollout.n_rollouts {
        let (header, steps) = read_rollout(&rollout_path(root, r))?;
        if steps.len() != gt_steps.len() {
            return Err(Error::LengthMismatch {
                got: steps.len(),
                expected: gt_steps.len(),
            });
        }
        let e = header.extrinsic;
        let mut cumulative = Se3Transform::identity();
        let mut per_step = Vec::with_capacity(steps.len());
        let mut force_sq = 0.0;
        let mut process_failure = false;
        for (i, line) in steps.iter().enumerate() {
            cumulative = gt_steps[i].compose(&cumulative);
            let gt_robot = camera_to_robot(&cumulative, &e).compose(&e.compose(&header.start_world));
            let translation_error = (line.pose.translation - gt_robot.translation).norm();
            let rot_err = rotation_error_deg(&line.pose, &gt_robot);
            if translation_error > 10.0 * t_thr || rot_err > 10.0 * r_thr {
                process_failure = true;
            }
            let gt_force = {
                let f = manifest.scene.force_profile.get(i + 1).copied().unwrap_or([0.0; 3]);
                config.rollout.force_rescale * (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt()
            };
            force_sq += (line.measured_force - gt_force).powi(2);
            per_step.push(StepMetrics {
                step: line.step,
                translation_error,
                rotation_error_deg: rot_err,
            });
        }
        let last = per_step.last().ok_or(Error::LengthMismatch {
            got: 0,
            expected: gt_steps.len(),
        })?;
        let classification = if process_failure {
            Classification::ProcessFailure
        } else if last.translation_error <= t_thr && last.rotation_error_deg <= r_thr {
            Classification::Success
        } else {
            Classification::OutcomeFailure
        };
        rollouts.push(RolloutMetrics {
            rollout: r,
            seed: header.seed,
            classification,
            final_translation_error: last.translation_error,
            final_rotation_error_deg: last.rotation_error_deg,
            force_rmse: (force_sq / steps.len() as f64).sqrt(),
            steps: per_step,
        });
    }

    let n = rollouts.len() as f64;
    let count = |c: Classification| rollouts.iter().filter(|r| r.classification == c).count();
    Ok(MetricsReport {
        translation_threshold: t_thr,
        rotation_threshold_deg: r_thr,
        n_success: count(Classification::Success),
        n_outcome_failure: count(Classification::OutcomeFailure),
        n_process_failure: count(Classification::ProcessFailure),
        mean_final_translation_error: rollouts.iter().map(|r| r.final_translation_error).sum::<f64>() / n,
        mean_final_rotation_error_deg: rollouts.iter().map(|r| r.final_rotation_error_deg).sum::<f64>() / n,
        mean_force_rmse: rollouts.iter().map(|r| r.force_rmse).sum::<f64>() / n,
        rollouts,
    })
}

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let report = evaluate(config, root)?;
    std::fs::create_dir_all(root.join("eval"))?;
    write_json_atomic(&metrics_path(root), &report)?;
    for r in &report.rollouts {
        println!(
            "eval: rollout {} {:?} final {:.4} m / {:.3} deg, force rmse {:.4} N",
            r.rollout, r.classification, r.final_translation_error, r.final_rotation_error_deg,
            r.force_rmse
        );
    }
    println!(
        "eval: {} success / {} outcome failure / {} process failure -> {}",
        report.n_success,
        report.n_outcome_failure,
        report.n_process_failure,
        metrics_path(root).display()
    );
    Ok(())
}
