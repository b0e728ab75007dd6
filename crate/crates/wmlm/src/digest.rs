//! Short content digests for embedding in output files.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 16 hex characters of the SHA-256 of the value's JSON serialization.
/// Struct field order is fixed by declaration, so the digest is stable for a
/// given type and content.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value)
        .map_err(|e| Error::Config(format!("digest serialization failed: {e}")))?;
    let hash = Sha256::digest(json.as_bytes());
    let mut out = String::with_capacity(16);
    for byte in &hash[..8] {
        out.push_str(&format!("{byte:02x}"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Probe {
        a: u32,
        b: String,
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let d1 = config_digest(&Probe { a: 1, b: "x".into() }).unwrap();
        let d2 = config_digest(&Probe { a: 1, b: "x".into() }).unwrap();
        let d3 = config_digest(&Probe { a: 2, b: "x".into() }).unwrap();
        assert_eq!(d1, d2);
        assert_ne!(d1, d3);
        assert_eq!(d1.len(), 16);
        assert!(d1.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
