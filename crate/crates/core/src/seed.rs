//! Seed derivation shared by every generator.

use sha2::{Digest, Sha256};

/// First eight bytes (little endian) of `sha256(global ‖ key ‖ 0x00 ‖ salt)`.
pub fn derive_seed(global: u64, key: &str, salt: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(key.as_bytes());
    h.update([0u8]);
    h.update(salt.as_bytes());
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

/// Hex sha256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_separate_keys_and_salts() {
        let a = derive_seed(1, "cap-1", "verb");
        assert_eq!(a, derive_seed(1, "cap-1", "verb"));
        assert_ne!(a, derive_seed(2, "cap-1", "verb"));
        assert_ne!(a, derive_seed(1, "cap-2", "verb"));
        assert_ne!(a, derive_seed(1, "cap-1", "order"));
        // the separator keeps ("ab", "c") apart from ("a", "bc")
        assert_ne!(derive_seed(0, "ab", "c"), derive_seed(0, "a", "bc"));
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
