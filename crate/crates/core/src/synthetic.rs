//! Procedural paired fixtures: clean scenes and their low-light renditions.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[cfg(not(feature = "std"))]
use num_traits::Float;
use crate::augment::ImagePair;
use crate::error::Result;
use crate::tensor::Tensor;

/// Low-light intensities and targets of the two-region fixture.
pub const TWO_REGION_LOW: (f32, f32) = (0.05, 0.2);
pub const TWO_REGION_HIGH: (f32, f32) = (0.2, 0.9);

/// Left half dim, right half less dim. The targets stretch the gap between
/// the halves far beyond what any single exponent can reach from the inputs.
pub fn two_region(h: usize, w: usize) -> Result<ImagePair> {
    let texture = |y: usize, x: usize| ((y * 7 + x * 13) % 5) as f32 * 0.0025;
    let pick = |x: usize, (a, b): (f32, f32)| if x < w / 2 { a } else { b };
    let low = Tensor::from_fn([1, 3, h, w], |_, _, y, x| pick(x, TWO_REGION_LOW) + texture(y, x));
    let high = Tensor::from_fn([1, 3, h, w], |_, _, y, x| pick(x, TWO_REGION_HIGH) + 2.0 * texture(y, x));
    ImagePair::new("two_region", low, high)
}

/// How a clean scene is degraded into its low-light partner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    /// Exponent above 1 that darkens mid-tones.
    pub gamma: f32,
    pub exposure: f32,
    /// Per-channel multiplicative colour cast.
    pub cast: [f32; 3],
    /// Standard deviation of additive Gaussian noise.
    pub noise: f32,
}

impl Degradation {
    pub fn apply(&self, clean: &Tensor<f32>, rng: &mut impl Rng) -> Tensor<f32> {
        let normal = Normal::new(0.0f32, self.noise.max(0.0)).expect("finite sigma");
        let mut out = clean.clone();
        let s = out.shape();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = (i / s.plane_len()) % s.c;
            let n = if self.noise > 0.0 { normal.sample(rng) } else { 0.0 };
            *v = (v.powf(self.gamma) * self.exposure * self.cast[c] + n).clamp(0.0, 1.0);
        }
        out
    }
}

/// A smooth, colourful scene in `[0.05, 0.95]`: a colour gradient, a few
/// coloured discs and rectangles, and low-frequency shading.
pub fn scene(h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let mut col = || [rng.random_range(0.1f32..0.9), rng.random_range(0.1f32..0.9), rng.random_range(0.1f32..0.9)];
    let (c0, c1) = (col(), col());
    let shapes: Vec<([f32; 3], [f32; 3])> = (0..4).map(|_| (col(), col())).collect();
    let fy = rng.random_range(0.5f32..2.0);
    let fx = rng.random_range(0.5f32..2.0);
    let (hf, wf) = (h as f32, w as f32);
    Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let (u, v) = (x as f32 / wf, y as f32 / hf);
        let t = 0.5 * (u + v);
        let mut val = c0[c] * (1.0 - t) + c1[c] * t;
        for (k, (geom, colour)) in shapes.iter().enumerate() {
            let (cx, cy, r) = (geom[0], geom[1], 0.1 + 0.2 * geom[2]);
            let inside = if k % 2 == 0 {
                (u - cx).powi(2) + (v - cy).powi(2) < r * r
            } else {
                (u - cx).abs() < r && (v - cy).abs() < 0.6 * r
            };
            if inside {
                val = colour[c];
            }
        }
        let shade = 0.1 * (core::f32::consts::TAU * (fx * u + 0.3)).sin() * (core::f32::consts::TAU * fy * v).cos();
        (val + shade).clamp(0.05, 0.95)
    })
}

/// One scene darkened and corrupted with visible noise; used to show that the
/// second stage removes degradation the curve cannot.
pub fn dark_noisy(h: usize, w: usize, seed: u64) -> Result<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = scene(h, w, &mut rng);
    let d = Degradation { gamma: 1.8, exposure: 0.35, cast: [1.0, 1.0, 1.0], noise: 0.05 };
    ImagePair::new(format!("dark_noisy_{seed}"), d.apply(&clean, &mut rng), clean)
}

/// Six pairs with varied exposure, colour cast and noise.
pub fn six_pairs(h: usize, w: usize, seed: u64) -> Result<Vec<ImagePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..6)
        .map(|i| {
            let clean = scene(h, w, &mut rng);
            let d = Degradation {
                gamma: rng.random_range(1.4..2.2),
                exposure: rng.random_range(0.25..0.5),
                cast: [rng.random_range(0.8..1.0), rng.random_range(0.8..1.0), rng.random_range(0.7..1.0)],
                noise: rng.random_range(0.01..0.03),
            };
            ImagePair::new(format!("pair_{i:02}"), d.apply(&clean, &mut rng), clean)
        })
        .collect()
}

/// Horizontal luminance ramp, useful when a known monotone input is needed.
pub fn ramp(h: usize, w: usize, lo: f32, hi: f32) -> Tensor<f32> {
    let span = (w.max(2) - 1) as f32;
    Tensor::from_fn([1, 3, h, w], |_, _, _, x| lo + (hi - lo) * x as f32 / span)
}
