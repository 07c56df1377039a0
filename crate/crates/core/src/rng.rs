//! Deterministic randomness shared by every module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The one RNG type used across the pipeline. Seeded runs are reproducible
/// bit-for-bit on every platform.
pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

/// Standard normal draw (Box-Muller, cosine branch only).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] keeps ln() finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    mean + std * standard_normal(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = seeded(7);
        let n = 20_000;
        let xs: alloc::vec::Vec<f64> = (0..n).map(|_| normal(&mut rng, 1.0, 2.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!((var - 4.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn seeded_streams_repeat() {
        let a: alloc::vec::Vec<f64> = {
            let mut r = seeded(3);
            (0..5).map(|_| standard_normal(&mut r)).collect()
        };
        let b: alloc::vec::Vec<f64> = {
            let mut r = seeded(3);
            (0..5).map(|_| standard_normal(&mut r)).collect()
        };
        assert_eq!(a, b);
    }
}
