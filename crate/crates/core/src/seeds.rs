//! Per-component seed derivation.
//!
//! A run has a single master seed; every randomized component (ordering,
//! shuffle ablation, embedding jitter) draws from its own derived stream so
//! adding a component never perturbs the others.

/// splitmix64 finalizer; full-avalanche mixing of a 64-bit value.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a component seed from the master seed and a domain label.
pub fn derive_seed(master: u64, domain: &str) -> u64 {
    // FNV-1a over the label, then mixed together with the master seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in domain.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(master ^ splitmix64(h))
}
