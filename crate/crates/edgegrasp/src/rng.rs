//! Seeded random-number streams.
//!
//! Everything in this crate that draws random numbers takes an explicit rng,
//! and long-running pipelines derive one independent stream per unit of work
//! (scene, epoch, round) so results are reproducible regardless of execution
//! order.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// The rng used throughout the crate.
pub type Stream = ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from a master seed and up to two indices
/// (e.g. scene number, attempt number).
pub fn derive(seed: u64, a: u64, b: u64) -> Stream {
    let mut state = seed ^ 0x5851f42d4c957f2d;
    let mut bytes = [0u8; 32];
    // Mix the indices into the splitmix state before squeezing key material.
    state = state.wrapping_add(splitmix64(&mut { a.wrapping_mul(0x2545f4914f6cdd1d) }));
    state ^= b.rotate_left(17);
    for chunk in bytes.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    Stream::from_seed(bytes)
}

/// Master stream for a command-level seed.
pub fn master(seed: u64) -> Stream {
    derive(seed, 0, 0)
}

/// Uniform random rotation from four standard normals normalised into a
/// unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Uniform random unit vector.
pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if v.norm() > 1e-9 {
            return Unit::new_normalize(v);
        }
    }
}
