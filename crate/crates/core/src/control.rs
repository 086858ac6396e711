//! Trajectory composition and force tracking: cumulative SE(3) products,
//! camera-to-robot frame transfer by conjugation, and a PID loop with
//! anti-windup tracking reference grasp force against a first-order
//! simulated gripper plant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Se3Transform;
use crate::policy::SampledChunk;

/// Right-to-left product `T_t ... T_1`: the first list element is applied
/// first. New pose = cumulative * initial pose.
pub fn cumulative_transform(transforms: &[Se3Transform]) -> Result<Se3Transform> {
    if transforms.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut acc = Se3Transform::identity();
    for t in transforms {
        acc = t.compose(&acc);
    }
    Ok(acc)
}

/// Conjugation `E * T_cam * E^-1` with `extrinsic` = robot <- camera.
pub fn camera_to_robot(t_cam: &Se3Transform, extrinsic: &Se3Transform) -> Se3Transform {
    extrinsic.compose(t_cam).compose(&extrinsic.inverse())
}

/// PID state with clamped-integral anti-windup and output limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub output_lo: f64,
    pub output_hi: f64,
    pub integral_limit: f64,
}

impl PidState {
    pub fn new(kp: f64, ki: f64, kd: f64, output_lo: f64, output_hi: f64) -> Self {
        assert!(output_lo < output_hi);
        Self {
            kp,
            ki,
            kd,
            integral: 0.0,
            prev_error: None,
            output_lo,
            output_hi,
            // windup bound sized so ki * integral alone can saturate the
            // output but not dwarf it
            integral_limit: if ki > 0.0 {
                (output_hi.abs().max(output_lo.abs())) / ki
            } else {
                f64::INFINITY
            },
        }
    }
}

/// One PID update: `e = reference - measured`, clamped integral, derivative
/// on the error, output clamped to the configured limits.
pub fn pid_step(state: &mut PidState, reference: f64, measured: f64, dt: f64) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::NonPositiveDt(dt));
    }
    let e = reference - measured;
    state.integral = (state.integral + e * dt).clamp(-state.integral_limit, state.integral_limit);
    let de = match state.prev_error {
        Some(prev) => (e - prev) / dt,
        None => 0.0,
    };
    state.prev_error = Some(e);
    let raw = state.kp * e + state.ki * state.integral + state.kd * de;
    Ok(raw.clamp(state.output_lo, state.output_hi))
}

/// First-order contact model:
/// `force_{n+1} = force_n + g (command - force_n) dt`, with optional
/// measurement noise applied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperPlant {
    pub gain: f64,
    pub dt: f64,
    pub force: f64,
}

impl GripperPlant {
    pub fn new(gain: f64, dt: f64) -> Self {
        assert!(gain > 0.0 && dt > 0.0);
        Self {
            gain,
            dt,
            force: 0.0,
        }
    }

    pub fn step(&mut self, command: f64) -> f64 {
        self.force += self.gain * (command - self.force) * self.dt;
        self.force
    }
}

/// Per-step record of an executed rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub step: usize,
    pub pose: Se3Transform,
    pub reference_force: f64,
    pub commanded_force: f64,
    pub measured_force: f64,
    pub force_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub steps: Vec<RolloutStep>,
}

/// Execute sampled action chunks: accumulate the per-step transforms
/// (cumulative product, newest first), conjugate the motion into the robot
/// frame, apply it to the initial pose, and run the PID force loop against
/// the plant using each step's force reference (scalar magnitude of the
/// force dims; zero when the chunk carries no force).
pub fn execute_rollout(
    chunks: &[SampledChunk],
    extrinsic: &Se3Transform,
    initial_pose: &Se3Transform,
    pid: &mut PidState,
    plant: &mut GripperPlant,
    force_rescale: f64,
) -> Result<RolloutLog> {
    let mut log = RolloutLog { steps: Vec::new() };
    let mut cumulative_cam = Se3Transform::identity();
    let mut step_index = 0;
    for chunk in chunks {
        for (i, t) in chunk.transforms.iter().enumerate() {
            cumulative_cam = t.compose(&cumulative_cam);
            let robot_motion = camera_to_robot(&cumulative_cam, extrinsic);
            let pose = robot_motion.compose(initial_pose);
            let force_dims = &chunk.forces[i];
            let reference = force_rescale
                * match force_dims.len() {
                    0 => 0.0,
                    1 => force_dims[0],
                    _ => force_dims.iter().map(|f| f * f).sum::<f64>().sqrt(),
                };
            let command = pid_step(pid, reference, plant.force, plant.dt)
                .map_err(|e| e.at_frame(step_index))?;
            let measured = plant.step(command);
            log.steps.push(RolloutStep {
                step: step_index,
                pose,
                reference_force: reference,
                commanded_force: command,
                measured_force: measured,
                force_error: reference - measured,
            });
            step_index += 1;
        }
    }
    Ok(log)
}
