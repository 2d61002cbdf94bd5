//! Stable seed derivation. Results must not depend on the platform or the
//! toolchain, so this avoids `core::hash`.

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for a named sub-stream of `master` (e.g. "network", "latent").
pub fn derive(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label.as_bytes()))
}

/// Per-job seed from a master seed, an image identifier and a noise level.
pub fn job_seed(master: u64, image_id: &str, sigma: f64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(image_id.as_bytes())) ^ sigma.to_bits())
}

/// Seeds of one (image, σ) job: the noise draw and the optimizer run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobSeeds {
    pub noise: u64,
    pub dip: u64,
}

impl JobSeeds {
    pub fn new(master: u64, image_id: &str, sigma: f64) -> Self {
        let job = job_seed(master, image_id, sigma);
        JobSeeds {
            noise: derive(job, "noise"),
            dip: derive(job, "dip"),
        }
    }
}
