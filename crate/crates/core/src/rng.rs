//! Seed handling.
//!
//! Every random quantity is drawn from a ChaCha8 generator keyed by a master
//! seed and a 64-bit stream id. Streams are independent, so the draw for a
//! given layer or sample index never depends on the order in which other
//! streams were consumed. Stream ids used by this crate:
//!
//! | purpose                        | stream                        |
//! |--------------------------------|-------------------------------|
//! | weight matrix of layer `i`     | `i` (1-based)                 |
//! | estimator sample `j`           | `j`                           |
//! | instance components            | [`InstanceStream`] constants  |

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for the pieces of a recovery instance.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum InstanceStream {
    Latent = 1 << 32,
    Measurement,
    Noise,
    Spike,
    SpikeNoise,
    Init,
}

impl InstanceStream {
    pub fn rng(self, seed: u64) -> ChaCha8Rng {
        stream_rng(seed, self as u64)
    }
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Row-major fill, so the draw order matches the on-disk layout.
pub fn gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std_dev: f64,
) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| std_dev * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Uniform point on the unit sphere in `R^n`.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}
