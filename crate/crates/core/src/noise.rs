//! Exponential-norm noise `K(ε) ∝ exp(−ζ‖ε‖)` and reproducible random streams.
//!
//! # Stream derivation
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose 32-byte
//! seed is a pure function of `(seed, purpose, node, iteration, replica)`:
//!
//! ```text
//! mix64(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!            z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!            return z ^ (z >> 31)                       (wrapping u64 arithmetic)
//!
//! h = mix64(seed + 0x9E3779B97F4A7C15)
//! h = mix64(h ^ purpose_tag)
//! h = mix64(h ^ node)
//! h = mix64(h ^ iteration)
//! h = mix64(h ^ replica)
//! chacha_seed = le_bytes(mix64(h + 1·G)) ‖ le_bytes(mix64(h + 2·G))
//!             ‖ le_bytes(mix64(h + 3·G)) ‖ le_bytes(mix64(h + 4·G))   with G = 0x9E3779B97F4A7C15
//! ```
//!
//! Because each `(node, iteration)` pair owns its own stream, node updates can
//! run in any order or in parallel and still produce identical results.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::Vector;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a stream is used for; keeps e.g. initialization and mechanism noise
/// independent even for the same node and iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Init,
    Mechanism,
    Partition,
    Topology,
    Synthetic,
    Audit,
    Lemma,
}

impl StreamPurpose {
    pub fn tag(self) -> u64 {
        match self {
            StreamPurpose::Init => 0x494E_4954,
            StreamPurpose::Mechanism => 0x4D45_4348,
            StreamPurpose::Partition => 0x5041_5254,
            StreamPurpose::Topology => 0x544F_504F,
            StreamPurpose::Synthetic => 0x5359_4E54,
            StreamPurpose::Audit => 0x4155_4449,
            StreamPurpose::Lemma => 0x4C45_4D4D,
        }
    }
}

/// Coordinates of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: StreamPurpose,
    pub node: u64,
    pub iteration: u64,
    pub replica: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: StreamPurpose, node: u64, iteration: u64) -> Self {
        Self { seed, purpose, node, iteration, replica: 0 }
    }

    pub fn with_replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    /// 64-bit digest of the key.
    pub fn digest(&self) -> u64 {
        let mut h = mix64(self.seed.wrapping_add(GOLDEN));
        h = mix64(h ^ self.purpose.tag());
        h = mix64(h ^ self.node);
        h = mix64(h ^ self.iteration);
        mix64(h ^ self.replica)
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let h = self.digest();
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let word = mix64(h.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Parameters of one noise draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub dim: usize,
    pub zeta: f64,
    pub stream: StreamKey,
}

/// Draws `ε` with density proportional to `exp(−ζ‖ε‖)` on `R^dim`, from the
/// spec's own stream. Identical specs give identical vectors.
pub fn sample_noise(spec: &NoiseSpec) -> Result<Vector> {
    let mut rng = spec.stream.rng();
    sample_noise_with(&mut rng, spec.dim, spec.zeta)
}

/// Same law as [`sample_noise`] from a caller-provided generator: the radius
/// is a sum of `dim` independent exponentials with mean `1/ζ` (so
/// `‖ε‖ ~ Γ(dim, 1/ζ)`) and the direction is uniform on the sphere.
pub fn sample_noise_with<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, zeta: f64) -> Result<Vector> {
    if dim == 0 {
        return Err(Error::InvalidArgument("noise dimension must be at least 1".into()));
    }
    if !(zeta > 0.0) {
        return Err(Error::InvalidArgument(format!("zeta must be positive, got {zeta}")));
    }
    let radius = gamma_radius(rng, dim, zeta);
    let direction = uniform_direction(rng, dim);
    Ok(direction * radius)
}

/// Sum of `k` independent Exp(rate ζ) draws.
pub fn gamma_radius<R: rand::Rng + ?Sized>(rng: &mut R, k: usize, zeta: f64) -> f64 {
    (0..k)
        .map(|_| {
            // 1 - U lies in (0, 1], so the log is finite
            let u: f64 = 1.0 - rng.random::<f64>();
            -u.ln()
        })
        .sum::<f64>()
        / zeta
}

fn uniform_direction<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut *rng));
        let n = v.norm();
        if n > 1e-300 {
            return v / n;
        }
    }
}

/// `kθ·ln(k/δ)`: a `Γ(k, θ)` variable stays below this with probability at
/// least `1 − δ`.
pub fn gamma_tail_threshold(k: usize, theta: f64, delta: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("shape k must be at least 1".into()));
    }
    crate::error::require_positive("theta", theta)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(k as f64 * theta * (k as f64 / delta).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dim: usize, zeta: f64, iteration: u64) -> NoiseSpec {
        NoiseSpec { dim, zeta, stream: StreamKey::new(42, StreamPurpose::Mechanism, 3, iteration) }
    }

    #[test]
    fn deterministic_streams() {
        assert_eq!(sample_noise(&spec(4, 1.5, 9)).unwrap(), sample_noise(&spec(4, 1.5, 9)).unwrap());
        assert_ne!(sample_noise(&spec(4, 1.5, 9)).unwrap(), sample_noise(&spec(4, 1.5, 10)).unwrap());
    }

    #[test]
    fn purposes_are_independent() {
        let a = StreamKey::new(1, StreamPurpose::Init, 0, 0).digest();
        let b = StreamKey::new(1, StreamPurpose::Mechanism, 0, 0).digest();
        assert_ne!(a, b);
        assert_ne!(a, StreamKey::new(1, StreamPurpose::Init, 0, 0).with_replica(1).digest());
    }

    #[test]
    fn mix64_reference_values() {
        // SplitMix64 output for state 0 after one increment
        assert_eq!(mix64(GOLDEN), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(0), 0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_noise(&spec(0, 1.0, 0)).is_err());
        assert!(sample_noise(&spec(2, 0.0, 0)).is_err());
        assert!(sample_noise(&spec(2, -1.0, 0)).is_err());
        assert!(gamma_tail_threshold(0, 1.0, 0.1).is_err());
        assert!(gamma_tail_threshold(1, 1.0, 1.0).is_err());
        assert!(gamma_tail_threshold(1, 0.0, 0.5).is_err());
    }

    #[test]
    fn tail_threshold_values() {
        let t = gamma_tail_threshold(3, 2.0, 0.05).unwrap();
        assert!((t - 6.0 * 60f64.ln()).abs() < 1e-12);
        assert!((t - 24.566_068).abs() < 1e-5);
        let one = gamma_tail_threshold(1, 1.0, (-1.0f64).exp()).unwrap();
        assert!((one - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_norm_one_dim() {
        let mut rng = StreamKey::new(5, StreamPurpose::Lemma, 0, 0).rng();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_noise_with(&mut rng, 1, 2.0).unwrap().norm()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() / 0.5 < 0.02, "mean {mean}");
    }

    #[test]
    fn mean_norm_and_coordinates_three_dim() {
        let mut rng = StreamKey::new(6, StreamPurpose::Lemma, 0, 0).rng();
        let n = 100_000;
        let draws: Vec<Vector> = (0..n).map(|_| sample_noise_with(&mut rng, 3, 2.0).unwrap()).collect();
        let mean_norm = draws.iter().map(|v| v.norm()).sum::<f64>() / n as f64;
        assert!((mean_norm - 1.5).abs() / 1.5 < 0.02, "mean norm {mean_norm}");
        // E‖ε‖² = d(d+1)/ζ² = 3, per-coordinate variance 1
        let se = (1.0f64 / n as f64).sqrt();
        for c in 0..3 {
            let m = draws.iter().map(|v| v[c]).sum::<f64>() / n as f64;
            assert!(m.abs() <= 3.0 * se, "coordinate {c} mean {m}");
        }
    }
}
