//! `ocra rollout`: closed-loop policy deployment against the synthetic
//! scene. Each rollout starts the object at a jittered pose, reconstructs
//! observations from fresh renders, samples action chunks, and executes
//! them with PID-tracked grasp force, logging a JSON-lines trajectory and
//! a force CSV.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ocra_core::control::{execute_rollout, GripperPlant, PidState};
use ocra_core::encode::FeatureVector;
use ocra_core::geometry::LABEL_CONTEXT;
use ocra_core::policy::{fuse_observation, sample_chunk, PolicyCheckpoint, SampledChunk};
use ocra_core::reconstruct::{apply_scale, calibrate_scale, fuse_views, ScaleCalibration};
use ocra_core::rng::derive_seed;
use ocra_core::synth::{read_manifest, render_depth_with_start, DatasetManifest, SceneSpec};
use ocra_core::{io, Error, Result, Se3Transform};

use crate::config::PipelineConfig;
use crate::util::{input_hash, stage_up_to_date, write_stamp};

use super::{
    checkpoint_path, forces_csv_path, frame_features, manifest_path, rollout_dir, rollout_path,
};

const ROLLOUT_SEED_TAG: u64 = 0x011;

/// First line of each rollout JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutHeader {
    pub rollout: usize,
    pub seed: u64,
    pub n_steps: usize,
    pub dt: f64,
    pub extrinsic: Se3Transform,
    /// Object pose in the camera/world frame at step 0.
    pub start_world: Se3Transform,
}

/// One executed step (robot frame).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutStepLine {
    pub step: usize,
    pub pose: Se3Transform,
    pub reference_force: f64,
    pub commanded_force: f64,
    pub measured_force: f64,
}

/// Render the scene with the manipulated assembly displaced by `delta`
/// (relative to its spec pose) and reconstruct the fused labeled cloud
/// exactly as the offline pipeline does.
fn reconstruct_at(
    spec: &SceneSpec,
    manifest: &DatasetManifest,
    cal: &ScaleCalibration,
    delta: &Se3Transform,
) -> Result<ocra_core::PointCloud> {
    let mut views = Vec::with_capacity(2);
    for view in 0..2 {
        let mut rendered = render_depth_with_start(spec, 0, view, Some(delta))?;
        // Depth files are stored as f32; round-trip the live render through
        // the same precision so voxel fusion bins points identically to the
        // offline reconstruction (flat surfaces sit on voxel boundaries).
        for v in &mut rendered.depth.values {
            *v = *v as f32 as f64;
        }
        let depth = apply_scale(&rendered.depth, cal);
        let cam = &manifest.cameras[view];
        let mut manip_mask = ocra_core::geometry::Mask::filled(cam.width, cam.height, false);
        let mut ctx_mask = manip_mask.clone();
        for (i, m) in rendered.masks.iter().enumerate() {
            let target = if spec.primitives[i].manipulated {
                &mut manip_mask
            } else {
                &mut ctx_mask
            };
            for (t, &b) in target.bits.iter_mut().zip(&m.bits) {
                *t = *t || b;
            }
        }
        let mut cloud = ocra_core::geometry::backproject(
            &depth,
            &manip_mask,
            cam,
            ocra_core::geometry::LABEL_MANIPULATED,
        )?;
        let ctx = ocra_core::geometry::backproject(&depth, &ctx_mask, cam, LABEL_CONTEXT)?;
        cloud.points.extend_from_slice(&ctx.points);
        cloud.labels.extend_from_slice(&ctx.labels);
        views.push(cloud);
    }
    Ok(fuse_views(&views[0], &views[1]))
}

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let ckpt_file = checkpoint_path(root);
    if !ckpt_file.exists() {
        return Err(Error::format(
            "rollout",
            format!("missing {} (run `ocra train` first)", ckpt_file.display()),
        ));
    }
    let manifest = read_manifest(&manifest_path(root))?;
    let params = serde_json::to_vec(&(&config.rollout, config.seed))?;
    let hash = input_hash(&params, &[ckpt_file.clone(), manifest_path(root)])?;
    if stage_up_to_date(root, "rollout", &hash) {
        println!("rollout: up to date");
        return Ok(());
    }

    let ckpt = PolicyCheckpoint::load(&ckpt_file)?;
    let cal = calibrate_scale(&manifest.predicted_relative, &manifest.measured_relative)?;
    let manip_idx = manifest
        .scene
        .manipulated_index()
        .ok_or(Error::EmptyManipCloud)?;
    // static render spec: pose comes from the override, not the trajectory
    let mut render_spec = manifest.scene.clone();
    render_spec.trajectory.clear();

    let n_steps = manifest.scene.trajectory.len();
    let obs_horizon = ckpt.policy.obs_horizon;
    let dim = ckpt.policy.feature_dim;
    let extrinsic = config.rollout.extrinsic;

    std::fs::create_dir_all(rollout_dir(root))?;
    let mut outputs = Vec::new();
    let mut forces_csv = String::from("rollout,step,reference,commanded,measured\n");

    for r in 0..config.rollout.n_rollouts {
        let seed = derive_seed(config.seed, &[ROLLOUT_SEED_TAG, r as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let ref_pose = manifest.scene.primitives[manip_idx].pose;
        let mut start_delta = Se3Transform::identity();
        let jitter = manifest.scene.start_jitter;
        if jitter > 0.0 {
            start_delta.translation = nalgebra::Vector3::new(
                (rng.random::<f64>() - 0.5) * 2.0 * jitter,
                (rng.random::<f64>() - 0.5) * 2.0 * jitter,
                (rng.random::<f64>() - 0.5) * 2.0 * jitter,
            );
        }
        let start = start_delta.compose(&ref_pose);

        let mut pid = PidState::new(
            config.rollout.pid.kp,
            config.rollout.pid.ki,
            config.rollout.pid.kd,
            config.rollout.pid.output_lo,
            config.rollout.pid.output_hi,
        );
        let mut plant = GripperPlant::new(config.rollout.plant.gain, config.rollout.plant.dt);

        let mut world = start;
        let feat = |world: &Se3Transform, force: f64| -> Result<(FeatureVector, FeatureVector)> {
            // displacement of the assembly relative to its spec pose
            let delta = world.compose(&ref_pose.inverse());
            let cloud = reconstruct_at(&render_spec, &manifest, &cal, &delta)?;
            frame_features(&cloud, [0.0, 0.0, force], dim)
        };
        let mut history: VecDeque<(FeatureVector, FeatureVector)> = VecDeque::new();
        let first = feat(&world, plant.force)?;
        for _ in 0..obs_horizon {
            history.push_back(first.clone());
        }

        let header = RolloutHeader {
            rollout: r,
            seed,
            n_steps,
            dt: plant.dt,
            extrinsic,
            start_world: start,
        };
        let mut lines = vec![serde_json::to_string(&header)?];

        let mut executed = 0;
        while executed < n_steps {
            let frames: Vec<_> = history.iter().cloned().collect();
            let obs = fuse_observation(&frames, &ckpt.film)?;
            let chunk = sample_chunk(&ckpt.policy, &obs, &mut rng)
                .map_err(|e| e.at_frame(executed))?;
            let take = (n_steps - executed).min(ckpt.policy.horizon);
            for i in 0..take {
                let single = SampledChunk {
                    values: Vec::new(),
                    transforms: vec![chunk.transforms[i]],
                    forces: vec![chunk.forces[i].clone()],
                };
                let robot_initial = extrinsic.compose(&world);
                let log = execute_rollout(
                    &[single],
                    &extrinsic,
                    &robot_initial,
                    &mut pid,
                    &mut plant,
                    config.rollout.force_rescale,
                )
                .map_err(|e| e.at_frame(executed))?;
                world = chunk.transforms[i].compose(&world);
                let s = &log.steps[0];
                lines.push(serde_json::to_string(&RolloutStepLine {
                    step: executed + 1,
                    pose: s.pose,
                    reference_force: s.reference_force,
                    commanded_force: s.commanded_force,
                    measured_force: s.measured_force,
                })?);
                forces_csv.push_str(&format!(
                    "{r},{},{:.17e},{:.17e},{:.17e}\n",
                    executed + 1,
                    s.reference_force,
                    s.commanded_force,
                    s.measured_force
                ));
                executed += 1;
                history.pop_front();
                history.push_back(feat(&world, plant.force)?);
            }
        }

        let path = rollout_path(root, r);
        io::write_atomic(&path, (lines.join("\n") + "\n").as_bytes())?;
        outputs.push(path);
    }

    io::write_atomic(&forces_csv_path(root), forces_csv.as_bytes())?;
    outputs.push(forces_csv_path(root));
    println!(
        "rollout: {} rollouts x {} steps",
        config.rollout.n_rollouts, n_steps
    );
    write_stamp(root, "rollout", &hash, &outputs)
}

/// Parse one rollout JSONL file.
pub fn read_rollout(path: &Path) -> Result<(RolloutHeader, Vec<RolloutStepLine>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: RolloutHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::format("rollout log", "empty file"))?,
    )?;
    let steps: Vec<RolloutStepLine> = lines
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, steps))
}
