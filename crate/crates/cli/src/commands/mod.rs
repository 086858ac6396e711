//! Pipeline stages. Each stage reads its inputs from the artifact root,
//! writes its outputs atomically, and is a no-op when a content-hash stamp
//! shows the inputs have not changed.

pub mod eval;
pub mod plot;
pub mod reconstruct;
pub mod rollout;
pub mod synth;
pub mod track;
pub mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ocra_core::encode::{geom_features, tactile_features, FeatureVector};
use ocra_core::geometry::{backproject, LABEL_CONTEXT, LABEL_MANIPULATED};
use ocra_core::reconstruct::{apply_scale, fuse_views, ScaleCalibration};
use ocra_core::synth::DatasetManifest;
use ocra_core::tactile::ForceField;
use ocra_core::{io, PointCloud, Result};

pub fn synth_dir(root: &Path) -> PathBuf {
    root.join("synth")
}

pub fn manifest_path(root: &Path) -> PathBuf {
    synth_dir(root).join("manifest.json")
}

pub fn recon_dir(root: &Path) -> PathBuf {
    root.join("recon")
}

pub fn recon_ply(root: &Path, demo: usize, frame: usize) -> PathBuf {
    recon_dir(root).join(format!("demo{demo:03}")).join(format!("f{frame:03}.ply"))
}

pub fn track_dir(root: &Path) -> PathBuf {
    root.join("track")
}

pub fn track_path(root: &Path, demo: usize) -> PathBuf {
    track_dir(root).join(format!("demo{demo:03}.json"))
}

pub fn checkpoint_path(root: &Path) -> PathBuf {
    root.join("train").join("policy.ckpt")
}

pub fn train_log_path(root: &Path) -> PathBuf {
    root.join("train").join("train_log.csv")
}

pub fn rollout_dir(root: &Path) -> PathBuf {
    root.join("rollout")
}

pub fn rollout_path(root: &Path, index: usize) -> PathBuf {
    rollout_dir(root).join(format!("rollout{index:02}.jsonl"))
}

pub fn forces_csv_path(root: &Path) -> PathBuf {
    rollout_dir(root).join("forces.csv")
}

pub fn metrics_path(root: &Path) -> PathBuf {
    root.join("eval").join("metrics.json")
}

pub fn plot_dir(root: &Path) -> PathBuf {
    root.join("plot")
}

/// One tracked step as written to the per-demo track JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRecord {
    /// Frame index the object moved into (1-based).
    pub frame: usize,
    /// Row-major 3x3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub rms: f64,
    pub converged: bool,
}

impl TrackRecord {
    pub fn transform(&self) -> ocra_core::Se3Transform {
        let r = nalgebra::Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let t = nalgebra::Vector3::new(
            self.translation[0],
            self.translation[1],
            self.translation[2],
        );
        ocra_core::Se3Transform::new(r, t)
    }
}

pub fn read_tracks(root: &Path, demo: usize) -> Result<Vec<TrackRecord>> {
    let bytes = std::fs::read(track_path(root, demo))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Scale-correct and back-project one frame's two views into a fused,
/// labeled world-frame cloud — the core reconstruction step shared by the
/// offline stage and closed-loop rollout.
pub fn fuse_frame_files(
    manifest: &DatasetManifest,
    files: &ocra_core::synth::FrameFiles,
    cal: &ScaleCalibration,
) -> Result<PointCloud> {
    let mut views = Vec::with_capacity(2);
    for view in 0..2 {
        let depth = apply_scale(&io::read_depth(&files.depth[view])?, cal);
        let manip_mask = io::read_mask(&files.mask_manip[view])?;
        let ctx_mask = io::read_mask(&files.mask_ctx[view])?;
        let cam = &manifest.cameras[view];
        let mut cloud = backproject(&depth, &manip_mask, cam, LABEL_MANIPULATED)?;
        let ctx = backproject(&depth, &ctx_mask, cam, LABEL_CONTEXT)?;
        cloud.points.extend_from_slice(&ctx.points);
        cloud.labels.extend_from_slice(&ctx.labels);
        views.push(cloud);
    }
    Ok(fuse_views(&views[0], &views[1]))
}

/// Uniform tactile fields standing in for the two gripper pads at a given
/// contact force; pads share the reference in this synthetic setup.
pub fn force_fields(force: [f64; 3]) -> (ForceField, ForceField) {
    // small grids: the features only use 4x4 cell means
    let f = ForceField::uniform(16, 16, force);
    (f.clone(), f)
}

/// Per-frame observation features from a fused cloud and a contact force.
pub fn frame_features(
    cloud: &PointCloud,
    force: [f64; 3],
    dim: usize,
) -> Result<(FeatureVector, FeatureVector)> {
    let manip = cloud.filter_label(LABEL_MANIPULATED);
    let ctx = cloud.filter_label(LABEL_CONTEXT);
    let f_pc = geom_features(&manip, &ctx, dim)?;
    let (left, right) = force_fields(force);
    let f_t = tactile_features(&left, &right, dim);
    Ok((f_pc, f_t))
}

/// Chunk row encoding for one step: 9 pose dims followed by 0, 1 or 3
/// force dims (scalar = force magnitude).
pub fn step_row(transform: &ocra_core::Se3Transform, force: [f64; 3], force_dims: usize) -> Vec<f64> {
    let mut row = ocra_core::geometry::pose_encode(transform).to_flat().to_vec();
    match force_dims {
        0 => {}
        1 => row.push((force[0] * force[0] + force[1] * force[1] + force[2] * force[2]).sqrt()),
        3 => row.extend_from_slice(&force),
        other => panic!("unsupported force_dims {other}"),
    }
    row
}
