//! SHA-256 helpers shared by caches, stores, manifests and seeds.

use std::io::Read;
use std::path::Path;

use crpo_core::text::canonicalize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Store key of a single text: digest of its canonical (NFC, trimmed) form.
pub fn text_digest(text: &str) -> String {
    sha256_hex(canonicalize(text).as_bytes())
}

/// Store key of a (prompt, response) pair.
pub fn pair_digest(prompt: &str, response: &str) -> String {
    let mut s = canonicalize(prompt);
    s.push('\0');
    s.push_str(&canonicalize(response));
    sha256_hex(s.as_bytes())
}

/// Named sub-seed derived from the run seed, so each stage draws from its
/// own stream.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
