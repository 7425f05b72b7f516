//! Small shared helpers: stable hashing, seed derivation, atomic writes.

use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

/// Hex-encoded SHA-256 over the concatenation of `parts`.
///
/// Each part is length-prefixed (u64 little-endian) before hashing so that
/// the digest is unambiguous under re-chunking: `["ab", "c"]` and
/// `["a", "bc"]` hash differently.
pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Derive a 64-bit seed from a label and a list of string parts.
///
/// All randomness in the crate flows from seeds produced here, so two
/// processes given the same inputs draw identical streams regardless of
/// execution order or thread count.
pub fn derive_seed(label: &str, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Write `bytes` to `path` atomically: write to a sibling temp file, then
/// rename over the target. Readers never observe a half-written file, and
/// an interrupted run leaves either the old content or the new one.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile_path(path);
    // In the unlikely event of a collision with a concurrent writer, retry
    // with a different suffix rather than truncating their file.
    let mut attempts = 0;
    let mut file = loop {
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&tmp)
        {
            Ok(f) => break f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && attempts < 16 => {
                attempts += 1;
                tmp = tempfile_path(path);
            }
            Err(e) => return Err(e),
        }
    };
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    std::fs::rename(&tmp, path)
}

fn tempfile_path(path: &Path) -> std::path::PathBuf {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let pid = std::process::id();
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned());
    let name = name.unwrap_or_else(|| "file".to_string());
    path.with_file_name(format!(".{name}.{pid}.{n}.tmp"))
}

/// Round a fraction to a whole percentage, halves away from zero.
pub fn percent_rounded(numerator: f64, denominator: f64) -> i64 {
    if denominator == 0.0 {
        return 0;
    }
    (100.0 * numerator / denominator).round() as i64
}

/// Round to two decimal places, halves away from zero.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
