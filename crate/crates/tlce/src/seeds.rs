//! Master-seed splitting.
//!
//! One run seed deterministically derives every per-purpose seed (data
//! generation, session splitting, parameter init, batch shuffling, episode
//! sampling), so any component can be re-run in isolation.

/// Derives a purpose-specific seed from a master seed and a label.
pub fn derive(master: u64, purpose: &str) -> u64 {
    // FNV-1a over the label, then splitmix64 rounds to mix in the master.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
