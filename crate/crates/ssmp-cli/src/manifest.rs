//! Run manifests: flat key-value records of what a run saw and produced.

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

/// SHA-256 over the concatenation of the given files' bytes (paths are
/// hashed too, so renames change the digest).
pub fn content_hash(paths: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in paths {
        hasher.update(path.to_string_lossy().as_bytes());
        let bytes =
            fs::read(path).with_context(|| format!("hashing input {}", path.display()))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut body = String::new();
    for (key, value) in entries {
        if value.contains('\n') {
            // Multi-line values (config dumps) are indented block style.
            body.push_str(&format!("{key} =\n"));
            for line in value.lines() {
                body.push_str(&format!("    {line}\n"));
            }
        } else {
            body.push_str(&format!("{key} = {value}\n"));
        }
    }
    fs::write(path, body).with_context(|| format!("writing manifest {}", path.display()))
}
