//! `ocra reconstruct`: scale-calibrate and back-project every frame of
//! every demo into fused, labeled world-frame point clouds (PLY).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ocra_core::reconstruct::{calibrate_scale, ScaleCalibration, ROTATION_WARN_THRESHOLD};
use ocra_core::synth::read_manifest;
use ocra_core::{io, Error, Result};

use crate::config::{PipelineConfig, ScaleMode};
use crate::util::{input_hash, stage_up_to_date, write_json_atomic, write_stamp};

use super::{manifest_path, recon_dir, recon_ply};

#[derive(Debug, Serialize, Deserialize)]
pub struct ReconSummary {
    pub scale_mode: ScaleMode,
    /// One calibration per demo (identical entries in global mode).
    pub calibrations: Vec<ScaleCalibration>,
}

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let manifest_file = manifest_path(root);
    if !manifest_file.exists() {
        return Err(Error::format(
            "reconstruct",
            format!("missing {} (run `ocra synth` first)", manifest_file.display()),
        ));
    }
    let manifest = read_manifest(&manifest_file)?;

    let mut inputs = vec![manifest_file.clone()];
    for demo in &manifest.demos {
        for frame in &demo.frames {
            inputs.extend(frame.depth.iter().cloned());
            inputs.extend(frame.mask_manip.iter().cloned());
            inputs.extend(frame.mask_ctx.iter().cloned());
        }
    }
    let params = serde_json::to_vec(&config.scale_mode)?;
    let hash = input_hash(&params, &inputs)?;
    if stage_up_to_date(root, "reconstruct", &hash) {
        println!("reconstruct: up to date");
        return Ok(());
    }

    // The synthetic manifest carries one camera pair, so per-sequence mode
    // recalibrates from the same evidence per demo; the branch exists for
    // datasets with per-demo camera estimates.
    let global = calibrate_scale(&manifest.predicted_relative, &manifest.measured_relative)?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut calibrations = Vec::with_capacity(manifest.demos.len());
    for (d, demo) in manifest.demos.iter().enumerate() {
        let cal = match config.scale_mode {
            ScaleMode::Global => global,
            ScaleMode::PerSequence => {
                calibrate_scale(&manifest.predicted_relative, &manifest.measured_relative)?
            }
        };
        if cal.exceeds_rotation_warning() {
            eprintln!(
                "reconstruct: demo {d}: predicted/measured rotations disagree by {:.2} deg \
                 (warn threshold {:.2} deg)",
                cal.rotation_discrepancy.to_degrees(),
                ROTATION_WARN_THRESHOLD.to_degrees()
            );
        }
        calibrations.push(cal);
        let demo_dir = recon_dir(root).join(format!("demo{d:03}"));
        std::fs::create_dir_all(&demo_dir)?;
        for (f, files) in demo.frames.iter().enumerate() {
            let cloud = super::fuse_frame_files(&manifest, files, &cal)
                .map_err(|e| e.at_frame(f))?;
            let path = recon_ply(root, d, f);
            let tmp = path.with_extension("ply.tmp");
            io::write_ply(&tmp, &cloud)?;
            std::fs::rename(&tmp, &path)?;
            outputs.push(path);
        }
    }

    let summary_path = recon_dir(root).join("recon.json");
    write_json_atomic(
        &summary_path,
        &ReconSummary {
            scale_mode: config.scale_mode,
            calibrations,
        },
    )?;
    outputs.push(summary_path);
    println!(
        "reconstruct: {} demos, scale {:.6}",
        manifest.demos.len(),
        global.scale
    );
    write_stamp(root, "reconstruct", &hash, &outputs)
}
