//! Object-centric action-transfer engine: masked multi-view depth to object
//! point clouds, ICP SE(3) tracks, fused visuo-tactile features, diffusion-
//! sampled action chunks, and composed robot-frame trajectories with
//! force-tracked gripper control.

pub mod control;
pub mod encode;
pub mod error;
pub mod geometry;
pub mod io;
pub mod policy;
pub mod reconstruct;
pub mod registration;
pub mod rng;
pub mod synth;
pub mod tactile;

pub use control::{GripperPlant, PidState, RolloutLog};
pub use encode::{FeatureVector, ResFilmParams};
pub use error::{Error, Result};
pub use geometry::{CameraModel, DepthMap, Mask, PointCloud, PoseVector, Se3Transform};
pub use policy::{DiffusionPolicy, PolicyCheckpoint, PolicyConfig, SampledChunk};
pub use tactile::{FlowField, ForceField};
