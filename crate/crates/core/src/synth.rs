//! Deterministic synthetic data: analytic depth/mask renders of rigid
//! primitives on known SE(3) trajectories, warped tactile image pairs with
//! exact ground-truth flow, and demonstration datasets with a manifest
//! indexing every file. All outputs are pure functions of (spec, seed).

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap, Mask, Se3Transform};
use crate::io;
use crate::rng::{derive_seed, normal};
use crate::tactile::{FlowField, GrayImage};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PrimitiveShape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: PrimitiveShape,
    pub pose: Se3Transform,
    pub manipulated: bool,
}

/// Test-harness description of a two-camera desk scene: primitives, the
/// manipulated object's per-step trajectory, and sensor noise knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// Per-step transforms of the manipulated object (world frame). Frame f
    /// pose = T_f ... T_1 * initial pose.
    pub trajectory: Vec<Se3Transform>,
    pub cameras: [CameraModel; 2],
    pub depth_noise_sigma: f64,
    pub dropout_rate: f64,
    /// Reconstruction-unit scale: rendered depths and the predicted camera
    /// baseline are multiplied by this factor, mimicking the scale ambiguity
    /// of a monocular reconstruction. 1.0 = already metric.
    pub recon_scale: f64,
    /// Max translation jitter (m) applied to the manipulated object's start
    /// pose per demonstration.
    pub start_jitter: f64,
    /// Per-frame mean contact force, copied into every demo.
    pub force_profile: Vec<[f64; 3]>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn n_frames(&self) -> usize {
        self.trajectory.len() + 1
    }

    pub fn manipulated_index(&self) -> Option<usize> {
        self.primitives.iter().position(|p| p.manipulated)
    }

    /// World pose of primitive `idx` at `frame`. `start_delta` is an extra
    /// transform applied before the trajectory to every manipulated
    /// primitive, so multi-primitive rigid assemblies move together.
    pub fn object_pose(&self, idx: usize, frame: usize, start_delta: Option<&Se3Transform>) -> Se3Transform {
        let prim = &self.primitives[idx];
        if !prim.manipulated {
            return prim.pose;
        }
        let start = match start_delta {
            Some(d) => d.compose(&prim.pose),
            None => prim.pose,
        };
        let mut cumulative = Se3Transform::identity();
        for t in self.trajectory.iter().take(frame) {
            cumulative = t.compose(&cumulative);
        }
        cumulative.compose(&start)
    }
}

fn ray_sphere(origin: &Vector3<f64>, dir: &Vector3<f64>, radius: f64) -> Option<f64> {
    // |o + t d|^2 = r^2
    let a = dir.dot(dir);
    let b = 2.0 * origin.dot(dir);
    let c = origin.dot(origin) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / (2.0 * a);
    let t1 = (-b + sq) / (2.0 * a);
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let mut t0 = (-half[i] - origin[i]) * inv;
        let mut t1 = (half[i] - origin[i]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        tmin = tmin.max(t0);
        tmax = tmax.min(t1);
        if tmin > tmax {
            return None;
        }
    }
    if tmin > 1e-9 {
        Some(tmin)
    } else if tmax > 1e-9 {
        Some(tmax)
    } else {
        None
    }
}

/// Signed distance to the primitive surface in its own frame (oracle).
pub fn signed_distance(shape: &PrimitiveShape, p_local: &Vector3<f64>) -> f64 {
    match shape {
        PrimitiveShape::Sphere { radius } => p_local.norm() - radius,
        PrimitiveShape::Box { half_extents } => {
            let h = Vector3::new(half_extents[0], half_extents[1], half_extents[2]);
            let q = Vector3::new(
                p_local.x.abs() - h.x,
                p_local.y.abs() - h.y,
                p_local.z.abs() - h.z,
            );
            let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
            let inside = q.x.max(q.y).max(q.z).min(0.0);
            outside + inside
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub depth: DepthMap,
    /// One mask per primitive, in spec order.
    pub masks: Vec<Mask>,
}

/// Analytic ray-primitive render of one view at one frame. Depth is the
/// camera-frame z of the nearest hit, with optional Gaussian noise and
/// Bernoulli dropout holes. Noise is seeded per (frame, view).
pub fn render_depth(spec: &SceneSpec, frame: usize, view: usize) -> Result<RenderedFrame> {
    render_depth_with_start(spec, frame, view, None)
}

pub fn render_depth_with_start(
    spec: &SceneSpec,
    frame: usize,
    view: usize,
    start_delta: Option<&Se3Transform>,
) -> Result<RenderedFrame> {
    if frame >= spec.n_frames() {
        return Err(Error::FrameOutOfRange {
            frame,
            len: spec.n_frames(),
        });
    }
    let cam = &spec.cameras[view];
    let poses: Vec<Se3Transform> = (0..spec.primitives.len())
        .map(|i| spec.object_pose(i, frame, start_delta))
        .collect();
    let inv_poses: Vec<Se3Transform> = poses.iter().map(|p| p.inverse()).collect();

    let mut depth = DepthMap::zeros(cam.width, cam.height);
    let mut masks = vec![Mask::filled(cam.width, cam.height, false); spec.primitives.len()];
    let origin_world = cam.pose.translation;

    for v in 0..cam.height {
        for u in 0..cam.width {
            let dir_world = cam.pose.rotation * cam.pixel_ray(u as f64, v as f64);
            let mut best: Option<(f64, usize)> = None;
            for (i, prim) in spec.primitives.iter().enumerate() {
                let o = inv_poses[i].apply(&origin_world);
                let d = inv_poses[i].rotation * dir_world;
                let hit = match &prim.shape {
                    PrimitiveShape::Sphere { radius } => ray_sphere(&o, &d, *radius),
                    PrimitiveShape::Box { half_extents } => ray_box(
                        &o,
                        &d,
                        &Vector3::new(half_extents[0], half_extents[1], half_extents[2]),
                    ),
                };
                if let Some(t) = hit {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            if let Some((t, i)) = best {
                // pixel_ray has z = 1 so t equals camera-frame depth
                depth.set(u, v, t * spec.recon_scale);
                masks[i].set(u, v, true);
            }
        }
    }

    if spec.depth_noise_sigma > 0.0 || spec.dropout_rate > 0.0 {
        let seed = derive_seed(spec.seed, &[0xd3, frame as u64, view as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in depth.values.iter_mut() {
            if *d <= 0.0 {
                continue;
            }
            if spec.dropout_rate > 0.0 && rng.random::<f64>() < spec.dropout_rate {
                *d = 0.0;
                continue;
            }
            if spec.depth_noise_sigma > 0.0 {
                *d = (*d + spec.depth_noise_sigma * spec.recon_scale * normal(&mut rng)).max(0.0);
            }
        }
    }

    Ok(RenderedFrame { depth, masks })
}

/// Analytic tactile flow families. All are affine maps, so the inverse warp
/// used to build the current frame is exact.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TactileFlowSpec {
    UniformShift { dx: f64, dy: f64 },
    /// flow(p) = rate * (p - center)
    Radial { rate: f64 },
    /// flow(p) = (rate * (y - cy), 0)
    Shear { rate: f64 },
}

impl TactileFlowSpec {
    /// Forward map p -> p + flow(p) as an affine (a, b; c, d) + (tx, ty),
    /// with the image center as the fixed point for radial/shear.
    fn affine(&self, cx: f64, cy: f64) -> ([[f64; 2]; 2], [f64; 2]) {
        match *self {
            TactileFlowSpec::UniformShift { dx, dy } => ([[1.0, 0.0], [0.0, 1.0]], [dx, dy]),
            TactileFlowSpec::Radial { rate } => {
                let s = 1.0 + rate;
                ([[s, 0.0], [0.0, s]], [-rate * cx, -rate * cy])
            }
            TactileFlowSpec::Shear { rate } => ([[1.0, rate], [0.0, 1.0]], [-rate * cy, 0.0]),
        }
    }
}

/// Random-dot reference frame plus an exactly warped current frame and the
/// ground-truth flow field (reference -> current convention).
pub fn gen_tactile_pair(
    pattern_seed: u64,
    spec: TactileFlowSpec,
    width: usize,
    height: usize,
) -> Result<(GrayImage, GrayImage, FlowField)> {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (a, b) = spec.affine(cx, cy);

    // ground-truth flow and its max magnitude
    let mut flow = FlowField::zeros(width, height);
    let mut max_mag = 0.0f64;
    for v in 0..height {
        for u in 0..width {
            let x = u as f64;
            let y = v as f64;
            let fx = a[0][0] * x + a[0][1] * y + b[0] - x;
            let fy = a[1][0] * x + a[1][1] * y + b[1] - y;
            flow.set(u, v, [fx, fy]);
            max_mag = max_mag.max((fx * fx + fy * fy).sqrt());
        }
    }
    let margin = width.min(height) as f64 / 4.0;
    if max_mag >= margin {
        return Err(Error::FlowTooLarge {
            mag: max_mag,
            margin,
        });
    }

    // tracer-particle pattern: Gaussian blobs on a dark background
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(pattern_seed, &[0x7ac]));
    let mut reference = GrayImage::zeros(width, height);
    for p in reference.pixels.iter_mut() {
        *p = 0.05;
    }
    let n_dots = width * height / 24;
    for _ in 0..n_dots {
        let dx = rng.random::<f64>() * width as f64;
        let dy = rng.random::<f64>() * height as f64;
        let sigma = 1.0 + rng.random::<f64>();
        let amp = 0.3 + 0.7 * rng.random::<f64>();
        let r = (3.0 * sigma).ceil() as i64;
        for v in (dy as i64 - r).max(0)..=(dy as i64 + r).min(height as i64 - 1) {
            for u in (dx as i64 - r).max(0)..=(dx as i64 + r).min(width as i64 - 1) {
                let du = u as f64 - dx;
                let dv = v as f64 - dy;
                let g = amp * (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
                let idx = v as usize * width + u as usize;
                reference.pixels[idx] = (reference.pixels[idx] + g).min(1.0);
            }
        }
    }

    // current(q) = reference(inv(q)); the affine inverse is exact
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let ainv = [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ];
    let mut current = GrayImage::zeros(width, height);
    for v in 0..height {
        for u in 0..width {
            let qx = u as f64 - b[0];
            let qy = v as f64 - b[1];
            let px = ainv[0][0] * qx + ainv[0][1] * qy;
            let py = ainv[1][0] * qx + ainv[1][1] * qy;
            current.set(u, v, reference.sample(px, py));
        }
    }
    Ok((reference, current, flow))
}

// --- demonstration dataset -------------------------------------------------

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameFiles {
    /// Per-view depth file, reconstruction units.
    pub depth: Vec<PathBuf>,
    pub mask_manip: Vec<PathBuf>,
    pub mask_ctx: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoRecord {
    pub frames: Vec<FrameFiles>,
    /// Ground-truth per-step transforms (length n_frames - 1).
    pub transforms: Vec<Se3Transform>,
    pub start_pose: Se3Transform,
    /// Per-frame mean contact force reference.
    pub force_profile: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub cameras: [CameraModel; 2],
    /// Measured relative pose cam0 -> cam1 (metric ground truth).
    pub measured_relative: Se3Transform,
    /// The same relative pose in reconstruction units, as a monocular
    /// reconstruction would report it.
    pub predicted_relative: Se3Transform,
    pub demos: Vec<DemoRecord>,
    pub scene: SceneSpec,
}

/// Render `n_demos` trajectory variants to `out_dir` and return the manifest
/// (also written as `manifest.json`).
pub fn gen_demo_dataset(spec: &SceneSpec, n_demos: usize, out_dir: &Path) -> Result<DatasetManifest> {
    assert!(n_demos >= 1);
    let manip_idx = spec.manipulated_index().ok_or(Error::EmptyManipCloud)?;
    std::fs::create_dir_all(out_dir)?;

    let measured_relative = spec.cameras[0].pose.inverse().compose(&spec.cameras[1].pose);
    let mut predicted_relative = measured_relative;
    predicted_relative.translation *= spec.recon_scale;

    let mut demos = Vec::with_capacity(n_demos);
    for demo in 0..n_demos {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xde, demo as u64]));
        let mut delta = Se3Transform::identity();
        if spec.start_jitter > 0.0 {
            delta.translation = Vector3::new(
                (rng.random::<f64>() - 0.5) * 2.0 * spec.start_jitter,
                (rng.random::<f64>() - 0.5) * 2.0 * spec.start_jitter,
                (rng.random::<f64>() - 0.5) * 2.0 * spec.start_jitter,
            );
        }
        let start = delta.compose(&spec.primitives[manip_idx].pose);
        let demo_dir = out_dir.join(format!("demo{demo:03}"));
        std::fs::create_dir_all(&demo_dir)?;

        let mut frames = Vec::with_capacity(spec.n_frames());
        for frame in 0..spec.n_frames() {
            let mut files = FrameFiles {
                depth: Vec::new(),
                mask_manip: Vec::new(),
                mask_ctx: Vec::new(),
            };
            for view in 0..2 {
                let rendered = render_depth_with_start(spec, frame, view, Some(&delta))?;
                let depth_path = demo_dir.join(format!("f{frame:03}_v{view}_depth.bin"));
                io::write_depth(&depth_path, &rendered.depth)?;

                let mut manip = Mask::filled(rendered.depth.width, rendered.depth.height, false);
                let mut ctx = Mask::filled(rendered.depth.width, rendered.depth.height, false);
                for (i, m) in rendered.masks.iter().enumerate() {
                    let target = if spec.primitives[i].manipulated {
                        &mut manip
                    } else {
                        &mut ctx
                    };
                    for (t, &b) in target.bits.iter_mut().zip(&m.bits) {
                        *t = *t || b;
                    }
                }
                let manip_path = demo_dir.join(format!("f{frame:03}_v{view}_manip.bin"));
                let ctx_path = demo_dir.join(format!("f{frame:03}_v{view}_ctx.bin"));
                io::write_mask(&manip_path, &manip)?;
                io::write_mask(&ctx_path, &ctx)?;
                files.depth.push(depth_path);
                files.mask_manip.push(manip_path);
                files.mask_ctx.push(ctx_path);
            }
            frames.push(files);
        }

        let force_profile = if spec.force_profile.is_empty() {
            vec![[0.0; 3]; spec.n_frames()]
        } else {
            spec.force_profile.clone()
        };
        demos.push(DemoRecord {
            frames,
            transforms: spec.trajectory.clone(),
            start_pose: start,
            force_profile,
        });
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        cameras: spec.cameras,
        measured_relative,
        predicted_relative,
        demos,
        scene: spec.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    io::write_atomic(&out_dir.join("manifest.json"), &bytes)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            "manifest",
            format!("unsupported version {}", manifest.version),
        ));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject;

    pub fn test_scene() -> SceneSpec {
        let cam0 = CameraModel {
            fx: 110.0,
            fy: 110.0,
            cx: 64.0,
            cy: 48.0,
            width: 128,
            height: 96,
            pose: Se3Transform::look_at(Vector3::new(0.0, 0.0, -0.5), Vector3::zeros()),
        };
        let mut cam1 = cam0;
        cam1.pose = Se3Transform::look_at(Vector3::new(0.3, 0.15, -0.4), Vector3::zeros());
        let step = Se3Transform::from_translation(Vector3::new(0.01, 0.0, 0.0));
        SceneSpec {
            primitives: vec![
                Primitive {
                    shape: PrimitiveShape::Sphere { radius: 0.05 },
                    pose: Se3Transform::identity(),
                    manipulated: true,
                },
                Primitive {
                    shape: PrimitiveShape::Box {
                        half_extents: [0.04, 0.04, 0.04],
                    },
                    pose: Se3Transform::from_translation(Vector3::new(-0.12, 0.0, 0.02)),
                    manipulated: false,
                },
            ],
            trajectory: vec![step; 5],
            cameras: [cam0, cam1],
            depth_noise_sigma: 0.0,
            dropout_rate: 0.0,
            recon_scale: 1.0,
            start_jitter: 0.0,
            force_profile: vec![],
            seed: 42,
        }
    }

    #[test]
    fn principal_pixel_depth_of_unit_sphere() {
        // unit-diameter sphere centered at (0,0,1), camera at the origin
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            pose: Se3Transform::identity(),
        };
        let spec = SceneSpec {
            primitives: vec![Primitive {
                shape: PrimitiveShape::Sphere { radius: 0.5 },
                pose: Se3Transform::from_translation(Vector3::new(0.0, 0.0, 1.0)),
                manipulated: true,
            }],
            trajectory: vec![],
            cameras: [cam, cam],
            depth_noise_sigma: 0.0,
            dropout_rate: 0.0,
            recon_scale: 1.0,
            start_jitter: 0.0,
            force_profile: vec![],
            seed: 1,
        };
        let rendered = render_depth(&spec, 0, 0).unwrap();
        assert!((rendered.depth.at(32, 32) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noise_free_points_lie_on_surfaces() {
        let spec = test_scene();
        for view in 0..2 {
            let rendered = render_depth(&spec, 0, view).unwrap();
            for (i, prim) in spec.primitives.iter().enumerate() {
                let cloud =
                    backproject(&rendered.depth, &rendered.masks[i], &spec.cameras[view], 1)
                        .unwrap();
                assert!(cloud.len() > 50, "object {i} too small in view {view}");
                let inv = spec.object_pose(i, 0, None).inverse();
                for p in &cloud.points {
                    let sd = signed_distance(&prim.shape, &inv.apply(p));
                    assert!(sd.abs() < 1e-6, "signed distance {sd}");
                }
            }
        }
    }

    #[test]
    fn renders_are_bitwise_deterministic() {
        let mut spec = test_scene();
        spec.depth_noise_sigma = 0.002;
        spec.dropout_rate = 0.05;
        let a = render_depth(&spec, 1, 0).unwrap();
        let b = render_depth(&spec, 1, 0).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.masks, b.masks);
    }

    #[test]
    fn frame_out_of_range() {
        let spec = test_scene();
        assert!(matches!(
            render_depth(&spec, 99, 0),
            Err(Error::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn tactile_pair_zero_flow() {
        let (r, c, f) = gen_tactile_pair(5, TactileFlowSpec::UniformShift { dx: 0.0, dy: 0.0 }, 64, 64).unwrap();
        assert_eq!(r, c);
        assert!(f.max_magnitude() == 0.0);
    }

    #[test]
    fn tactile_pair_uniform_shift_flow_is_constant() {
        let (_, _, f) = gen_tactile_pair(5, TactileFlowSpec::UniformShift { dx: 3.0, dy: 2.0 }, 64, 64).unwrap();
        for v in &f.vectors {
            assert_eq!(*v, [3.0, 2.0]);
        }
    }

    #[test]
    fn tactile_pair_warp_consistency_integer_shift() {
        let (r, c, f) =
            gen_tactile_pair(6, TactileFlowSpec::UniformShift { dx: 4.0, dy: -3.0 }, 64, 64).unwrap();
        for v in 8..56usize {
            for u in 8..56usize {
                let fl = f.at(u, v);
                let got = c.sample(u as f64 + fl[0], v as f64 + fl[1]);
                assert!((got - r.at(u, v)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tactile_pair_warp_consistency_radial() {
        // non-integer warp: bilinear resampling error only
        let (r, c, f) = gen_tactile_pair(7, TactileFlowSpec::Radial { rate: 0.02 }, 64, 64).unwrap();
        let mut errs = Vec::new();
        for v in 8..56usize {
            for u in 8..56usize {
                let fl = f.at(u, v);
                let got = c.sample(u as f64 + fl[0], v as f64 + fl[1]);
                errs.push((got - r.at(u, v)).abs());
            }
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errs[errs.len() / 2];
        assert!(median < 0.02, "bilinear resampling median error {median}");
    }

    #[test]
    fn tactile_pair_rejects_excessive_flow() {
        assert!(matches!(
            gen_tactile_pair(8, TactileFlowSpec::UniformShift { dx: 40.0, dy: 0.0 }, 64, 64),
            Err(Error::FlowTooLarge { .. })
        ));
    }

    #[test]
    fn dataset_is_deterministic_and_matches_spec() {
        let dir = tempfile::tempdir().unwrap();
        let spec = test_scene();
        let m1 = gen_demo_dataset(&spec, 1, &dir.path().join("a")).unwrap();
        assert_eq!(m1.demos[0].transforms, spec.trajectory);
        assert_eq!(m1.demos[0].start_pose, spec.primitives[0].pose);

        let mut jittered = spec.clone();
        jittered.start_jitter = 0.01;
        let a = gen_demo_dataset(&jittered, 3, &dir.path().join("b")).unwrap();
        let b = gen_demo_dataset(&jittered, 3, &dir.path().join("c")).unwrap();
        assert_eq!(
            serde_json::to_string(&a.demos.iter().map(|d| d.start_pose).collect::<Vec<_>>()).unwrap(),
            serde_json::to_string(&b.demos.iter().map(|d| d.start_pose).collect::<Vec<_>>()).unwrap()
        );
        // files bitwise identical
        let fa = std::fs::read(&a.demos[1].frames[0].depth[0]).unwrap();
        let fb = std::fs::read(&b.demos[1].frames[0].depth[0]).unwrap();
        assert_eq!(fa, fb);
    }
}
