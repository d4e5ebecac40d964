use core::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siphasher::sip::SipHasher13;

/// Derives an independent stream seed from a base seed, a label (usually a
/// query id) and an index, so per-query sampling does not depend on the
/// order in which queries are processed.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h = SipHasher13::new_with_keys(base, index);
    h.write(label.as_bytes());
    h.finish()
}

pub fn rng_for(base: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label, index))
}
