//! Synthetic test frames: structured phantoms with optional low-dose noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::{add_noise, Image, NoiseModel};
use crate::scenario::derive_seed;

/// Square phantom with a smooth background, a few disks, a hard-edged
/// block and thin curved "vessels". Intensities stay inside [0.1, 0.9].
pub fn phantom(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let tilt: f64 = rng.random_range(-0.1..0.1);
    let base: f64 = rng.random_range(0.3..0.4);

    let disks: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..0.8) * s,
                rng.random_range(0.2..0.8) * s,
                rng.random_range(0.08..0.2) * s,
                rng.random_range(-0.15..0.25),
            )
        })
        .collect();
    let block = (
        rng.random_range(0.1..0.5) * s,
        rng.random_range(0.1..0.5) * s,
        rng.random_range(0.15..0.35) * s,
        rng.random_range(0.1..0.2),
    );
    let vessels: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.2..0.8) * s,
                rng.random_range(0.05..0.15) * s,
                rng.random_range(1.0..3.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();

    let pixels = (0..size * size).map(|i| {
        let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
        let mut v = base + tilt * (x - s / 2.0) / s;
        for &(cx, cy, r, a) in &disks {
            if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                v += a;
            }
        }
        let (bx, by, bw, ba) = block;
        if x >= bx && x < bx + bw && y >= by && y < by + bw {
            v += ba;
        }
        for &(row, amp, cycles, phase) in &vessels {
            let center = row + amp * (2.0 * PI * cycles * x / s + phase).sin();
            let d = (y - center).abs();
            v -= 0.25 * (-d * d / 1.5).exp();
        }
        v.clamp(0.1, 0.9)
    });
    Image::new(size, size, pixels.collect()).expect("phantom pixels are finite")
}

/// `count` phantoms, each with independent Gaussian noise of `noise_std`.
pub fn noisy_phantoms(count: usize, size: usize, noise_std: f64, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| {
            let clean = phantom(size, derive_seed(seed, "phantom", i as u64));
            add_noise(
                &clean,
                NoiseModel::Gaussian { std: noise_std },
                derive_seed(seed, "noise", i as u64),
            )
        })
        .collect()
}
