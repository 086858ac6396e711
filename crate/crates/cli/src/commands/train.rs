//! `ocra train`: build fused visuo-tactile training items from the tracked
//! dataset, optimize the denoiser (and optionally the fusion), and write a
//! checkpoint plus a loss log.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ocra_core::encode::ResFilmParams;
use ocra_core::geometry::LABEL_MANIPULATED;
use ocra_core::policy::{
    fuse_observation, fused_train_step, AdamState, DiffusionPolicy, FusedItem, PolicyCheckpoint,
};
use ocra_core::reconstruct::calibrate_scale;
use ocra_core::rng::derive_seed;
use ocra_core::synth::read_manifest;
use ocra_core::{io, Error, Result};

use crate::config::PipelineConfig;
use crate::util::{input_hash, stage_up_to_date, write_stamp};

use super::{checkpoint_path, manifest_path, read_tracks, recon_ply, step_row, train_log_path};

const FILM_SEED_TAG: u64 = 0xf11;
const TRAIN_SEED_TAG: u64 = 0x7a1;

/// All supervised windows from one dataset: per window, obs_horizon frames
/// of (geometric, tactile) features and a horizon-length action chunk of
/// tracked per-step poses plus force references.
pub fn build_items(config: &PipelineConfig, root: &Path) -> Result<Vec<FusedItem>> {
    let manifest = read_manifest(&manifest_path(root))?;
    let n_frames = manifest.scene.n_frames();
    let horizon = config.policy.horizon;
    let obs_horizon = config.policy.obs_horizon;
    let dim = config.policy.feature_dim;
    if n_frames < obs_horizon + horizon {
        return Err(Error::format(
            "train",
            format!(
                "{n_frames} frames cannot fit obs_horizon {obs_horizon} + horizon {horizon}"
            ),
        ));
    }

    let mut items = Vec::new();
    for (d, demo) in manifest.demos.iter().enumerate() {
        let tracks = read_tracks(root, d)?;
        if tracks.len() != n_frames - 1 {
            return Err(Error::LengthMismatch {
                got: tracks.len(),
                expected: n_frames - 1,
            });
        }
        let mut features = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let cloud = io::read_ply(&recon_ply(root, d, f))?;
            features.push(super::frame_features(&cloud, demo.force_profile[f], dim)?);
        }
        // observation frames end at t; the chunk covers steps t+1..=t+horizon
        for t in (obs_horizon - 1)..(n_frames - 1 - horizon + 1) {
            let frames: Vec<_> = (t + 1 - obs_horizon..=t).map(|f| features[f].clone()).collect();
            let mut chunk = Vec::with_capacity(config.policy.chunk_dim());
            for s in 0..horizon {
                let step = &tracks[t + s];
                chunk.extend(step_row(
                    &step.transform(),
                    demo.force_profile[t + 1 + s],
                    config.policy.force_dims,
                ));
            }
            items.push(FusedItem { chunk, frames });
        }
    }
    Ok(items)
}

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let manifest = read_manifest(&manifest_path(root))?;
    let n_frames = manifest.scene.n_frames();
    let mut inputs = vec![manifest_path(root)];
    for d in 0..manifest.demos.len() {
        inputs.push(super::track_path(root, d));
        for f in 0..n_frames {
            inputs.push(recon_ply(root, d, f));
        }
    }
    for p in &inputs {
        if !p.exists() {
            return Err(Error::format(
                "train",
                format!("missing {} (run earlier stages first)", p.display()),
            ));
        }
    }
    let params = serde_json::to_vec(&(&config.policy, &config.train, config.seed))?;
    let hash = input_hash(&params, &inputs)?;
    if stage_up_to_date(root, "train", &hash) {
        println!("train: up to date");
        return Ok(());
    }

    // fail early on unreconstructable geometry (e.g. all-hole depth)
    let probe = io::read_ply(&recon_ply(root, 0, 0))?;
    if probe.filter_label(LABEL_MANIPULATED).is_empty() {
        return Err(Error::EmptyManipCloud);
    }
    // surface a bad calibration before spending time training
    calibrate_scale(&manifest.predicted_relative, &manifest.measured_relative)?;

    let items = build_items(config, root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TRAIN_SEED_TAG]));
    let mut policy = DiffusionPolicy::new(&config.policy, &mut rng)?;
    let mut film = ResFilmParams::init(
        config.policy.feature_dim,
        derive_seed(config.seed, &[FILM_SEED_TAG]),
    );

    let chunks: Vec<Vec<f64>> = items.iter().map(|i| i.chunk.clone()).collect();
    let obs: Vec<Vec<f64>> = items
        .iter()
        .map(|i| fuse_observation(&i.frames, &film))
        .collect::<Result<_>>()?;
    policy.fit_normalizers(&chunks, &obs)?;

    let mut adam = AdamState::new(policy.mlp.params.len(), config.train.lr);
    let mut film_adam = AdamState::new(film.to_flat().len(), config.train.lr);
    let mut log = String::from("step,loss\n");
    for step in 0..config.train.steps {
        let batch: Vec<FusedItem> = (0..config.train.batch)
            .map(|_| items[rng.random_range(0..items.len())].clone())
            .collect();
        let loss = fused_train_step(
            &mut policy,
            &mut film,
            &batch,
            &mut adam,
            &mut film_adam,
            config.train.train_fusion,
            &mut rng,
        )?;
        log.push_str(&format!("{step},{loss:.17e}\n"));
        if step % 500 == 0 || step + 1 == config.train.steps {
            println!("train: step {step} loss {loss:.6}");
        }
    }

    std::fs::create_dir_all(root.join("train"))?;
    io::write_atomic(&train_log_path(root), log.as_bytes())?;
    let ckpt = checkpoint_path(root);
    let tmp = ckpt.with_extension("ckpt.tmp");
    PolicyCheckpoint { policy, film }.save(&tmp)?;
    std::fs::rename(&tmp, &ckpt)?;
    println!("train: {} items, checkpoint {}", items.len(), ckpt.display());
    write_stamp(root, "train", &hash, &[ckpt, train_log_path(root)])
}
