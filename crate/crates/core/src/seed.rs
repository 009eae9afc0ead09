//! Deterministic seed derivation so every stage draws from one root seed.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a named stage.
pub fn derive(root: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name
    let h = stage
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix(root ^ mix(h))
}

/// Child seed for the `index`-th item of a stage.
pub fn derive_indexed(root: u64, index: u64) -> u64 {
    mix(root ^ mix(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_stages_get_distinct_seeds() {
        assert_ne!(derive(7, "train"), derive(7, "prune"));
        assert_eq!(derive(7, "train"), derive(7, "train"));
        assert_ne!(derive_indexed(7, 0), derive_indexed(7, 1));
    }
}
