//! Stage bookkeeping: artifact root resolution, content-hash resume stamps,
//! and exit-code mapping.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ocra_core::io::write_atomic;
use ocra_core::{Error, Result};

/// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numerical failure.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DegenerateRotation
        | Error::DegenerateBaseline { .. }
        | Error::DegenerateGeometry
        | Error::EmptyCorrespondenceSet { .. }
        | Error::EmptyManipCloud
        | Error::MissingCache
        | Error::StepOutOfRange { .. }
        | Error::InvalidRange(_)
        | Error::NonPositiveDt(_)
        | Error::FlowTooLarge { .. } => EXIT_NUMERICAL,
        Error::AtFrame { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

/// Artifact root: --data-dir flag, else OCRA_DATA_DIR, else ./ocra-data.
pub fn data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("OCRA_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ocra-data"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a stage's inputs: a caller-provided parameter blob plus the
/// contents of every input file, in order.
pub fn input_hash(params: &[u8], files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update((params.len() as u64).to_le_bytes());
    h.update(params);
    for f in files {
        let bytes = std::fs::read(f)
            .map_err(|e| Error::format("stage input", format!("{}: {e}", f.display())))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

#[derive(Serialize, Deserialize)]
struct Stamp {
    input_hash: String,
    outputs: Vec<PathBuf>,
}

fn stamp_path(root: &Path, stage: &str) -> PathBuf {
    root.join(".stamps").join(format!("{stage}.json"))
}

/// True when the stage's stamp matches `hash` and every recorded output
/// still exists — rerunning is then a no-op.
pub fn stage_up_to_date(root: &Path, stage: &str, hash: &str) -> bool {
    let Ok(bytes) = std::fs::read(stamp_path(root, stage)) else {
        return false;
    };
    let Ok(stamp) = serde_json::from_slice::<Stamp>(&bytes) else {
        return false;
    };
    stamp.input_hash == hash && stamp.outputs.iter().all(|p| p.exists())
}

pub fn write_stamp(root: &Path, stage: &str, hash: &str, outputs: &[PathBuf]) -> Result<()> {
    let path = stamp_path(root, stage);
    std::fs::create_dir_all(path.parent().unwrap())?;
    let stamp = Stamp {
        input_hash: hash.to_string(),
        outputs: outputs.to_vec(),
    };
    write_atomic(&path, &serde_json::to_vec_pretty(&stamp)?)
}

/// Serialize to pretty JSON and write atomically (temp file + rename).
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}
