//! Deterministic seed derivation for per-item random streams.

/// Mixes `parts` into `base` with the splitmix64 finalizer, so that
/// distinct paths get unrelated streams.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    let mut h = mix(base);
    for &p in parts {
        h = mix(h ^ mix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
