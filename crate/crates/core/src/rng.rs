//! Keyed random streams.
//!
//! Every random quantity in a trial is drawn from its own ChaCha stream, keyed
//! by the global seed, a trial coordinate and a purpose tag. Streams never
//! overlap, so trials can run on any number of threads and still reproduce
//! bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{c, CMatrix, C64};

/// What a stream is used for. The discriminant is mixed into the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Channel = 1,
    TrainingNoise = 2,
    DataBits = 3,
    DataNoise = 4,
    Oracle = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds an ordered list of words into one 64-bit key.
pub fn derive_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Opens the stream for `purpose` under `key`.
pub fn stream(key: u64, purpose: Purpose) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(key);
    rng.set_stream(purpose as u64);
    rng
}

/// One CN(0, variance) draw: two independent real Gaussians scaled by
/// sqrt(variance / 2).
pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(s * re, s * im)
}

/// Matrix of i.i.d. CN(0, variance) entries, filled row by row.
pub fn complex_gaussian_matrix<R: rand::Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        for k in 0..cols {
            m[(r, k)] = complex_gaussian(rng, variance);
        }
    }
    m
}
