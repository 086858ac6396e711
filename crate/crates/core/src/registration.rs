//! ICP estimation of the manipulated object's frame-to-frame SE(3)
//! transform: k-d tree correspondence search, weighted Kabsch/SVD inner
//! step with det-correction, trimmed iteration, and sequence tracking with
//! warm starts.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Se3Transform};

/// Balanced 3-d spatial index; exact nearest neighbor.
pub struct KdTree3 {
    nodes: Vec<KdNode>,
    points: Vec<Vector3<f64>>,
    root: usize,
}

struct KdNode {
    point_index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree3 {
    pub fn build(points: &[Vector3<f64>]) -> KdTree3 {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut indices, 0, &mut nodes).unwrap_or(0);
        KdTree3 {
            nodes,
            points: points.to_vec(),
            root,
        }
    }

    fn build_rec(
        points: &[Vector3<f64>],
        indices: &mut [usize],
        depth: usize,
        nodes: &mut Vec<KdNode>,
    ) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        indices.sort_by(|&a, &b| points[a][axis].partial_cmp(&points[b][axis]).unwrap());
        let mid = indices.len() / 2;
        let point_index = indices[mid];
        let node_index = nodes.len();
        nodes.push(KdNode {
            point_index,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = indices.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes[node_index].left = left;
        nodes[node_index].right = right;
        Some(node_index)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the exact nearest point.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, query: &Vector3<f64>, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        let p = &self.points[n.point_index];
        let d2 = (p - query).norm_squared();
        if d2 < best.1 {
            *best = (n.point_index, d2);
        }
        let delta = query[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, query, best);
        }
        if let Some(c) = far {
            if delta * delta < best.1 {
                self.search(c, query, best);
            }
        }
    }
}

/// Closed-form weighted least-squares rigid alignment of corresponded point
/// sets (Kabsch): centroid removal, SVD of the cross-covariance, and a
/// determinant correction so the result is a proper rotation.
pub fn kabsch_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> Result<Se3Transform> {
    assert_eq!(src.len(), dst.len());
    assert_eq!(src.len(), weights.len());
    if src.len() < 3 {
        return Err(Error::DegenerateGeometry);
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for i in 0..src.len() {
        cs += weights[i] * src[i];
        cd += weights[i] * dst[i];
    }
    cs /= wsum;
    cd /= wsum;

    let mut h = Matrix3::zeros();
    for i in 0..src.len() {
        h += weights[i] * (src[i] - cs) * (dst[i] - cd).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry);
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    // det correction rejects the reflection solution
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = vt.transpose() * d * u.transpose();
    let translation = cd - rotation * cs;
    Ok(Se3Transform {
        rotation,
        translation,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Relative RMS change below which iteration stops.
    pub tolerance: f64,
    /// Correspondences farther than this are rejected (m).
    pub max_corr_dist: f64,
    /// Fraction of worst surviving pairs trimmed per iteration.
    pub trim_fraction: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            max_corr_dist: 0.05,
            trim_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: Se3Transform,
    pub rms_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMS after each accepted update; non-increasing by construction.
    pub residual_history: Vec<f64>,
}

/// Point-to-point trimmed ICP aligning `src` onto `dst`. The estimate is
/// warm-started from `initial` (identity when `None`). An update that would
/// increase the trimmed RMS is rejected and iteration stops there.
pub fn icp_align(
    src: &PointCloud,
    dst: &PointCloud,
    params: &IcpParams,
    initial: Option<Se3Transform>,
) -> Result<IcpResult> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(Error::DegenerateGeometry);
    }
    let tree = KdTree3::build(&dst.points);
    let mut transform = initial.unwrap_or_else(Se3Transform::identity);
    let mut prev_rms = f64::INFINITY;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..params.max_iterations {
        iterations += 1;
        // correspondences under the current transform
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(src.len());
        for (i, p) in src.points.iter().enumerate() {
            let q = transform.apply(p);
            let (j, d2) = tree.nearest(&q).expect("dst non-empty");
            if d2.sqrt() <= params.max_corr_dist {
                pairs.push((i, j, d2));
            }
        }
        if pairs.is_empty() {
            return Err(Error::EmptyCorrespondenceSet {
                max_corr_dist: params.max_corr_dist,
            });
        }
        pairs.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
        let keep = ((pairs.len() as f64) * (1.0 - params.trim_fraction)).ceil() as usize;
        pairs.truncate(keep.max(3).min(pairs.len()));

        let src_pts: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _, _)| src.points[i]).collect();
        let dst_pts: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j, _)| dst.points[j]).collect();
        let weights = vec![1.0; pairs.len()];
        let candidate = kabsch_align(&src_pts, &dst_pts, &weights)?;

        let rms = {
            let mut sum = 0.0;
            for (s, d) in src_pts.iter().zip(&dst_pts) {
                sum += (candidate.apply(s) - d).norm_squared();
            }
            (sum / src_pts.len() as f64).sqrt()
        };
        if rms > prev_rms {
            // refitting on the new correspondences made things worse; keep
            // the previous estimate
            converged = true;
            break;
        }
        transform = candidate;
        history.push(rms);
        if rms < 1e-12
            || (prev_rms.is_finite()
                && (prev_rms - rms).abs() <= params.tolerance * prev_rms.max(1e-300))
        {
            prev_rms = rms;
            converged = true;
            break;
        }
        prev_rms = rms;
    }

    Ok(IcpResult {
        transform,
        rms_residual: if history.is_empty() { prev_rms } else { *history.last().unwrap() },
        iterations,
        converged,
        residual_history: history,
    })
}

/// Frame-to-frame tracking: T_t aligns cloud t onto cloud t+1, warm-started
/// from the previous step's estimate. Warm starting makes the loop
/// inherently sequential.
pub fn track_sequence(clouds: &[PointCloud], params: &IcpParams) -> Result<Vec<Se3Transform>> {
    assert!(clouds.len() >= 2, "need at least two frames");
    let mut out = Vec::with_capacity(clouds.len() - 1);
    let mut warm: Option<Se3Transform> = None;
    for t in 0..clouds.len() - 1 {
        let result = icp_align(&clouds[t], &clouds[t + 1], params, warm)
            .map_err(|e| e.at_frame(t))?;
        warm = Some(result.transform);
        out.push(result.transform);
    }
    Ok(out)
}
