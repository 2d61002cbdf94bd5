//! Deterministic structured test images: smooth gradients, soft checkers,
//! discs, low-pass filtered noise and ring patterns.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Gradient,
    Checker,
    Discs,
    FilteredNoise,
    Rings,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Gradient,
        Pattern::Checker,
        Pattern::Discs,
        Pattern::FilteredNoise,
        Pattern::Rings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Gradient => "gradient",
            Pattern::Checker => "checker",
            Pattern::Discs => "discs",
            Pattern::FilteredNoise => "filtered_noise",
            Pattern::Rings => "rings",
        }
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn color(rng: &mut ChaCha8Rng, channels: usize) -> Vec<f32> {
    (0..channels).map(|_| rng.gen_range(0.1..0.9)).collect()
}

/// Separable box blur with edge clamping, `passes` times.
fn box_blur(plane: &mut [f32], h: usize, w: usize, radius: usize, passes: usize) {
    let mut tmp = vec![0.0f32; plane.len()];
    let norm = 1.0 / (2 * radius + 1) as f32;
    for _ in 0..passes {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for d in 0..=2 * radius {
                    let xx = (x + d).saturating_sub(radius).min(w - 1);
                    s += plane[y * w + xx];
                }
                tmp[y * w + x] = s * norm;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for d in 0..=2 * radius {
                    let yy = (y + d).saturating_sub(radius).min(h - 1);
                    s += tmp[yy * w + x];
                }
                plane[y * w + x] = s * norm;
            }
        }
    }
}

pub fn synthetic_image(pattern: Pattern, channels: usize, height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f32, width as f32);
    let mut data = vec![0.0f32; channels * height * width];
    let at = |c: usize, y: usize, x: usize| (c * height + y) * width + x;
    match pattern {
        Pattern::Gradient => {
            let c0 = color(&mut rng, channels);
            let c1 = color(&mut rng, channels);
            let angle: f32 = rng.gen_range(0.0..core::f32::consts::TAU);
            let freq: f32 = rng.gen_range(0.5..1.5);
            let (ca, sa) = (angle.cos(), angle.sin());
            for y in 0..height {
                for x in 0..width {
                    let u = (x as f32 / wf - 0.5) * ca + (y as f32 / hf - 0.5) * sa + 0.5;
                    let wave = 0.08 * (freq * core::f32::consts::TAU * (y as f32 / hf)).sin();
                    for c in 0..channels {
                        data[at(c, y, x)] = c0[c] + (c1[c] - c0[c]) * u + wave;
                    }
                }
            }
        }
        Pattern::Checker => {
            let c0 = color(&mut rng, channels);
            let c1 = color(&mut rng, channels);
            let cell = (height.min(width) / rng.gen_range(4..7)).max(2) as f32;
            for y in 0..height {
                for x in 0..width {
                    let fx = (x as f32 / cell).fract() - 0.5;
                    let fy = (y as f32 / cell).fract() - 0.5;
                    let parity = ((x as f32 / cell) as i64 + (y as f32 / cell) as i64) % 2;
                    // soften edges over ~1 pixel
                    let edge = smoothstep(0.0, 1.5 / cell, 0.5 - fx.abs().max(fy.abs()));
                    let t = if parity == 0 { 0.5 + 0.5 * edge } else { 0.5 - 0.5 * edge };
                    let shade = 0.1 * (y as f32 / hf);
                    for c in 0..channels {
                        data[at(c, y, x)] = c0[c] + (c1[c] - c0[c]) * t + shade;
                    }
                }
            }
        }
        Pattern::Discs => {
            let bg0 = color(&mut rng, channels);
            let bg1 = color(&mut rng, channels);
            for y in 0..height {
                for x in 0..width {
                    let t = (x + y) as f32 / (hf + wf);
                    for c in 0..channels {
                        data[at(c, y, x)] = bg0[c] + (bg1[c] - bg0[c]) * t;
                    }
                }
            }
            let count = rng.gen_range(3..7);
            for _ in 0..count {
                let col = color(&mut rng, channels);
                let cx = rng.gen_range(0.15..0.85) * wf;
                let cy = rng.gen_range(0.15..0.85) * hf;
                let r = rng.gen_range(0.08..0.25) * hf.min(wf);
                for y in 0..height {
                    for x in 0..width {
                        let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                        let a = 1.0 - smoothstep(r - 0.75, r + 0.75, d);
                        for c in 0..channels {
                            let p = &mut data[at(c, y, x)];
                            *p = *p * (1.0 - a) + col[c] * a;
                        }
                    }
                }
            }
        }
        Pattern::FilteredNoise => {
            let radius = (height.min(width) / 32).max(1);
            for c in 0..channels {
                let plane = &mut data[c * height * width..(c + 1) * height * width];
                for v in plane.iter_mut() {
                    *v = rng.gen_range(0.0..1.0);
                }
                box_blur(plane, height, width, radius, 3);
                // stretch the contrast the blur removed
                let mean = plane.iter().sum::<f32>() / plane.len() as f32;
                for v in plane.iter_mut() {
                    *v = 0.5 + (*v - mean) * 3.0;
                }
            }
        }
        Pattern::Rings => {
            let c0 = color(&mut rng, channels);
            let c1 = color(&mut rng, channels);
            let cx = rng.gen_range(0.3..0.7) * wf;
            let cy = rng.gen_range(0.3..0.7) * hf;
            let period = rng.gen_range(0.12..0.25) * hf.min(wf);
            for y in 0..height {
                for x in 0..width {
                    let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                    let t = 0.5 + 0.5 * (core::f32::consts::TAU * d / period).cos();
                    for c in 0..channels {
                        data[at(c, y, x)] = c0[c] + (c1[c] - c0[c]) * t;
                    }
                }
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::new(channels, height, width, data).expect("positive dimensions")
}

/// `count` images cycling through every [`Pattern`], each with its own seed.
pub fn synthetic_suite(count: usize, channels: usize, height: usize, width: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| {
            let pattern = Pattern::ALL[i % Pattern::ALL.len()];
            synthetic_image(pattern, channels, height, width, crate::seed::splitmix64(seed ^ i as u64))
        })
        .collect()
}
