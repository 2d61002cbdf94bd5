use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::image::Image;

/// Additive white gaussian noise. `sigma` is on the 0–255 scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
    pub clamp: bool,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            sigma,
            seed,
            clamp: true,
        }
    }
}

/// Returns `x + N(0, (sigma/255)^2)` drawn independently per sample,
/// optionally clamped to `[0, 1]`.
///
/// The same seed yields the same standard-normal draws for every sigma, so
/// noise realizations at different levels are scaled copies of each other.
pub fn add_gaussian_noise(x: &Image, spec: &NoiseSpec) -> Image {
    let mut out = x.clone();
    if spec.sigma == 0.0 {
        return out;
    }
    let std = (spec.sigma / 255.0) as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in out.data_mut() {
        let n: f32 = StandardNormal.sample(&mut rng);
        *v += std * n;
        if spec.clamp {
            *v = v.clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let x = Image::filled(3, 8, 8, 0.3);
        assert_eq!(add_gaussian_noise(&x, &NoiseSpec::new(0.0, 1)), x);
    }

    #[test]
    fn noise_statistics_on_interior_pixels() {
        let x = Image::filled(3, 128, 128, 0.5);
        let y = add_gaussian_noise(&x, &NoiseSpec::new(25.0, 11));
        let diffs: alloc::vec::Vec<f64> = x
            .data()
            .iter()
            .zip(y.data())
            .filter(|(_, &b)| b > 0.0 && b < 1.0)
            .map(|(&a, &b)| (b - a) as f64)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
        let target = 25.0 / 255.0;
        assert!(mean.abs() < 0.05 * target, "mean {mean}");
        assert!((std - target).abs() < 0.05 * target, "std {std}");
    }

    #[test]
    fn deterministic_and_clamped() {
        let x = Image::filled(1, 16, 16, 0.9);
        let spec = NoiseSpec::new(50.0, 3);
        let a = add_gaussian_noise(&x, &spec);
        assert_eq!(a, add_gaussian_noise(&x, &spec));
        assert!(a.in_unit_range());
        let unclamped = add_gaussian_noise(&x, &NoiseSpec { clamp: false, ..spec });
        assert!(!unclamped.in_unit_range());
    }
}
