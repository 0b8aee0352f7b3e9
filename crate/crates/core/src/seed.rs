//! Hierarchical seed derivation.
//!
//! Every random draw in the harness is keyed by a path below the experiment's
//! master seed (`["sys", 3, "split"]`, `["arms", 3, "coin"]`, ...). Adding a
//! system or a new purpose never perturbs the streams of existing paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"ate-harness/seed/v1";

/// One element of a seed path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathItem<'a> {
    Label(&'a str),
    Ordinal(u64),
}

impl<'a> From<&'a str> for PathItem<'a> {
    fn from(s: &'a str) -> Self {
        PathItem::Label(s)
    }
}

impl<'a> From<&'a String> for PathItem<'a> {
    fn from(s: &'a String) -> Self {
        PathItem::Label(s.as_str())
    }
}

impl From<u64> for PathItem<'_> {
    fn from(n: u64) -> Self {
        PathItem::Ordinal(n)
    }
}

impl From<usize> for PathItem<'_> {
    fn from(n: usize) -> Self {
        PathItem::Ordinal(n as u64)
    }
}

impl From<u32> for PathItem<'_> {
    fn from(n: u32) -> Self {
        PathItem::Ordinal(u64::from(n))
    }
}

/// Builds a `&[PathItem]` from mixed labels and ordinals.
#[macro_export]
macro_rules! seed_path {
    ($($item:expr),* $(,)?) => {
        &[$($crate::seed::PathItem::from($item)),*][..]
    };
}

/// Derives a child seed from `master` and `path`.
///
/// SHA-256 over a length-prefixed, type-tagged encoding, so `["ab"]` and
/// `["a", "b"]` (or `[1]` and `["1"]`) never share an input. The empty path
/// still mixes `master`; it does not return it.
pub fn derive_seed(master: u64, path: &[PathItem<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(master.to_le_bytes());
    for item in path {
        match *item {
            PathItem::Label(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            PathItem::Ordinal(n) => {
                hasher.update([1u8]);
                hasher.update(n.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// The generator used for every draw in the crate. ChaCha8 has a documented,
/// platform-independent output stream.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `counter` under `seed`, for resampling loops whose
/// iterations must not depend on execution order.
pub fn counter_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    rng
}
