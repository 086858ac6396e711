//! Metric-scale calibration of reconstruction depth against measured camera
//! poses, and fusion of per-view object clouds into one world-frame cloud.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, PointCloud, Se3Transform, LABEL_CONTEXT};

/// Meters per reconstruction unit, plus the rotation agreement diagnostic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScaleCalibration {
    pub scale: f64,
    /// Angle (rad) between the predicted and measured relative rotations.
    pub rotation_discrepancy: f64,
}

/// Rotation discrepancy above this is suspicious calibration input.
pub const ROTATION_WARN_THRESHOLD: f64 = 2.0 * std::f64::consts::PI / 180.0;

const MIN_BASELINE: f64 = 1e-6;

/// Scale from the translation-norm ratio of the predicted vs measured
/// relative camera pose. Rotation is scale-free and only reported as a
/// health metric.
pub fn calibrate_scale(
    predicted_relative: &Se3Transform,
    measured_relative: &Se3Transform,
) -> Result<ScaleCalibration> {
    let pred_norm = predicted_relative.translation.norm();
    if pred_norm <= MIN_BASELINE {
        return Err(Error::DegenerateBaseline {
            norm: pred_norm,
            min: MIN_BASELINE,
        });
    }
    let scale = measured_relative.translation.norm() / pred_norm;
    let rel = predicted_relative.rotation.transpose() * measured_relative.rotation;
    let rotation_discrepancy = Se3Transform::new(rel, Vector3::zeros()).rotation_angle();
    Ok(ScaleCalibration {
        scale,
        rotation_discrepancy,
    })
}

impl ScaleCalibration {
    pub fn exceeds_rotation_warning(&self) -> bool {
        self.rotation_discrepancy > ROTATION_WARN_THRESHOLD
    }
}

/// Multiply every valid pixel by the calibrated scale; holes stay 0.
pub fn apply_scale(depth: &DepthMap, cal: &ScaleCalibration) -> DepthMap {
    DepthMap {
        values: depth
            .values
            .iter()
            .map(|&d| if d > 0.0 { d * cal.scale } else { d })
            .collect(),
        width: depth.width,
        height: depth.height,
    }
}

/// Deduplication voxel edge for fused clouds (m).
pub const FUSION_VOXEL_SIZE: f64 = 0.002;

#[derive(Default)]
struct VoxelAccum {
    sum: Vector3<f64>,
    count: usize,
    label_counts: [usize; 2],
}

pub fn voxel_key(p: &Vector3<f64>, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Centroid-per-voxel downsampling with majority label; label ties resolve
/// to context so the manipulated object is never inflated.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut grid: BTreeMap<(i64, i64, i64), VoxelAccum> = BTreeMap::new();
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        let acc = grid.entry(voxel_key(p, voxel)).or_default();
        acc.sum += p;
        acc.count += 1;
        acc.label_counts[l as usize] += 1;
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut labels = Vec::with_capacity(grid.len());
    for acc in grid.values() {
        points.push(acc.sum / acc.count as f64);
        labels.push(if acc.label_counts[1] > acc.label_counts[0] {
            1
        } else {
            LABEL_CONTEXT
        });
    }
    PointCloud::new(points, labels)
}

/// Concatenate two world-frame clouds and deduplicate at 2 mm.
pub fn fuse_views(c1: &PointCloud, c2: &PointCloud) -> PointCloud {
    let mut merged = c1.clone();
    merged.points.extend_from_slice(&c2.points);
    merged.labels.extend_from_slice(&c2.labels);
    voxel_downsample(&merged, FUSION_VOXEL_SIZE)
}
