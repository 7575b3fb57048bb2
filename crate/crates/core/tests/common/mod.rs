//! Synthetic frames shared by the integration tests.
#![allow(dead_code)]

use dctf_core::colorspace::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_fn(h, w, |_, _| rng.random()).unwrap()
}

/// Smooth colorful texture defined on the whole plane, sampled at an offset.
pub struct Texture {
    waves: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Texture {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.05..0.6),
                    rng.random_range(0.05..0.6),
                    rng.random_range(0.0..6.3),
                    [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)],
                )
            })
            .collect();
        Self { waves }
    }

    pub fn at(&self, y: f64, x: f64) -> [u8; 3] {
        let mut c = [128.0; 3];
        for (fy, fx, ph, amp) in &self.waves {
            let s = (fy * y + fx * x + ph).sin();
            for k in 0..3 {
                c[k] += amp[k] * s;
            }
        }
        c.map(|v: f64| v.round().clamp(0.0, 255.0) as u8)
    }

    pub fn frame(&self, h: usize, w: usize, dy: f64, dx: f64) -> RgbImage {
        RgbImage::from_fn(h, w, |y, x| self.at(y as f64 + dy, x as f64 + dx)).unwrap()
    }
}

/// Static textured background with a solid square moving `step` pixels per frame.
pub fn moving_square(n: usize, side: usize, step: usize, seed: u64) -> Vec<RgbImage> {
    let mut r = rng(seed);
    let tex = Texture::new(&mut r);
    let color = [r.random(), r.random(), r.random()];
    let (h, w) = (64, 64);
    let y0 = r.random_range(0..h - side);
    (0..n)
        .map(|i| {
            let x0 = (i * step) % (w - side);
            RgbImage::from_fn(h, w, |y, x| {
                if (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x) {
                    color
                } else {
                    tex.at(y as f64, x as f64)
                }
            })
            .unwrap()
        })
        .collect()
}

/// Whole-frame translation of a texture.
pub fn pan(n: usize, step: f64, seed: u64) -> Vec<RgbImage> {
    let tex = Texture::new(&mut rng(seed));
    (0..n).map(|i| tex.frame(64, 64, 0.0, i as f64 * step)).collect()
}

/// Mixed structured content: gradients, stripes, checkerboards, disks.
pub fn structured(kind: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let a: [u8; 3] = rng.random();
    let b: [u8; 3] = rng.random();
    let period = rng.random_range(2..12);
    let mix = |t: f64| -> [u8; 3] {
        [0, 1, 2].map(|k| (a[k] as f64 * (1.0 - t) + b[k] as f64 * t).round() as u8)
    };
    RgbImage::from_fn(h, w, |y, x| match kind % 5 {
        0 => mix(x as f64 / (w - 1) as f64),
        1 => if (x / period) % 2 == 0 { a } else { b },
        2 => if (x / period + y / period) % 2 == 0 { a } else { b },
        3 => {
            let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
            let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if r < (h.min(w) as f64) / 3.0 { a } else { b }
        }
        _ => mix(((x + y) as f64 / (h + w - 2) as f64 * 3.0).fract()),
    })
    .unwrap()
}
