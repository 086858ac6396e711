//! `ocra synth`: render the demonstration dataset for the configured scene.

use std::path::Path;

use ocra_core::synth::gen_demo_dataset;
use ocra_core::Result;

use crate::config::PipelineConfig;
use crate::util::{input_hash, stage_up_to_date, write_stamp};

use super::{manifest_path, synth_dir};

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let scene = config.scene();
    let params = serde_json::to_vec(&(&scene, config.n_demos))?;
    let hash = input_hash(&params, &[])?;
    if stage_up_to_date(root, "synth", &hash) {
        println!("synth: up to date");
        return Ok(());
    }
    let manifest = gen_demo_dataset(&scene, config.n_demos, &synth_dir(root))?;
    println!(
        "synth: {} demos x {} frames -> {}",
        manifest.demos.len(),
        scene.n_frames(),
        synth_dir(root).display()
    );
    write_stamp(root, "synth", &hash, &[manifest_path(root)])
}
