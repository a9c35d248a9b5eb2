//! Deterministic seed derivation. One master seed fans out into named
//! streams (generation, augmentation, init) and per-index seeds so each
//! stage stays reproducible on its own.

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Stream seed for a named stage under a master seed.
pub fn substream(master: u64, label: &str) -> u64 {
    let mut h = splitmix64(master);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// Seed for the `index`-th item of a stream.
pub fn indexed(stream: u64, index: u64) -> u64 {
    splitmix64(stream ^ index.wrapping_mul(0x2545f4914f6cdd1d))
}
