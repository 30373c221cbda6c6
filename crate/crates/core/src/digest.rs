use sha2::{Digest, Sha256};

/// SHA-256 over length-framed parts, hex encoded.
///
/// Framing keeps `("ab", "c")` and `("a", "bc")` distinct.
pub fn framed_sha256_hex<I, P>(parts: I) -> String
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        let bytes = part.as_ref();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hex::encode(hasher.finalize())
}

/// First eight bytes of a framed SHA-256, for seeding generators.
pub fn framed_sha256_u64<I, P>(parts: I) -> u64
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let hex = framed_sha256_hex(parts);
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}
