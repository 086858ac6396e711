//! `ocra track`: per-demo frame-to-frame ICP on the manipulated object's
//! reconstructed cloud, emitting one JSON track file per demo.

use std::path::{Path, PathBuf};

use ocra_core::geometry::LABEL_MANIPULATED;
use ocra_core::registration::icp_align;
use ocra_core::synth::read_manifest;
use ocra_core::{io, Error, Result, Se3Transform};

use crate::config::PipelineConfig;
use crate::util::{input_hash, stage_up_to_date, write_json_atomic, write_stamp};

use super::{manifest_path, recon_ply, track_dir, track_path, TrackRecord};

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let manifest = read_manifest(&manifest_path(root))?;
    let n_frames = manifest.scene.n_frames();

    let mut inputs = Vec::new();
    for d in 0..manifest.demos.len() {
        for f in 0..n_frames {
            let ply = recon_ply(root, d, f);
            if !ply.exists() {
                return Err(Error::format(
                    "track",
                    format!("missing {} (run `ocra reconstruct` first)", ply.display()),
                ));
            }
            inputs.push(ply);
        }
    }
    let params = serde_json::to_vec(&config.icp)?;
    let hash = input_hash(&params, &inputs)?;
    if stage_up_to_date(root, "track", &hash) {
        println!("track: up to date");
        return Ok(());
    }

    std::fs::create_dir_all(track_dir(root))?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    for d in 0..manifest.demos.len() {
        let clouds: Vec<_> = (0..n_frames)
            .map(|f| io::read_ply(&recon_ply(root, d, f)).map(|c| c.filter_label(LABEL_MANIPULATED)))
            .collect::<Result<_>>()?;
        let mut records = Vec::with_capacity(n_frames.saturating_sub(1));
        let mut warm: Option<Se3Transform> = None;
        for f in 1..n_frames {
            let result = icp_align(&clouds[f - 1], &clouds[f], &config.icp, warm)
                .map_err(|e| e.at_frame(f))?;
            warm = Some(result.transform);
            let r = &result.transform.rotation;
            records.push(TrackRecord {
                frame: f,
                rotation: [
                    [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                    [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                    [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                ],
                translation: result.transform.translation.into(),
                rms: result.rms_residual,
                converged: result.converged,
            });
        }
        let path = track_path(root, d);
        write_json_atomic(&path, &records)?;
        outputs.push(path);
    }
    println!("track: {} demos x {} steps", manifest.demos.len(), n_frames - 1);
    write_stamp(root, "track", &hash, &outputs)
}
