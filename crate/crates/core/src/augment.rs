//! Paired patch sampling, dihedral augmentation and reflect padding.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// One of the 8 symmetries of the square: `code = rotation + 4 * flip`.
/// The horizontal flip is applied first, then `rotation` quarter turns
/// counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(code: u8) -> Result<Self> {
        if code >= 8 {
            bail!(Contract, "dihedral code {code} outside [0,8)");
        }
        Ok(Dihedral(code))
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn rotation(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    pub fn inverse(self) -> Dihedral {
        if self.flipped() {
            self
        } else {
            Dihedral((4 - self.0) % 4)
        }
    }

    /// Group product: `self.then(other)` applies `self` first.
    pub fn then(self, other: Dihedral) -> Dihedral {
        // R^a F^f followed by R^b F^g = R^b F^g R^a F^f.
        // Moving F^g past R^a negates a when g is set.
        let a = self.rotation() as i32;
        let b = other.rotation() as i32;
        let a = if other.flipped() { -a } else { a };
        let rot = (a + b).rem_euclid(4) as u8;
        let flip = self.flipped() ^ other.flipped();
        Dihedral(rot + 4 * flip as u8)
    }

    pub fn apply<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        let s = t.shape();
        let (h, w) = (s.h, s.w);
        let out_shape = if self.rotation() % 2 == 1 { Shape::new(s.n, s.c, w, h) } else { s };
        let flip = self.flipped();
        let rot = self.rotation();
        Tensor::from_fn(out_shape, |n, c, y, x| {
            // invert the rotation to find the coordinate in the flipped image
            let (fy, fx) = match rot {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            let sx = if flip { w - 1 - fx } else { fx };
            t.at(n, c, fy, sx)
        })
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Pads the right and bottom edges by reflection so both extents become
/// multiples of `multiple`. Returns the padded tensor and the original
/// `(height, width)`.
pub fn reflect_pad<T: Scalar>(image: &Tensor<T>, multiple: usize) -> Result<(Tensor<T>, (usize, usize))> {
    if multiple == 0 {
        bail!(Contract, "padding multiple must be positive");
    }
    let s = image.shape();
    let h = s.h.div_ceil(multiple) * multiple;
    let w = s.w.div_ceil(multiple) * multiple;
    Ok((reflect_pad_to(image, h, w)?, (s.h, s.w)))
}

/// Pads right/bottom by reflection up to at least `h` x `w`.
pub fn reflect_pad_to<T: Scalar>(image: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.h == 0 || s.w == 0 {
        bail!(Dimension, "cannot pad an empty image {s}");
    }
    let h = h.max(s.h);
    let w = w.max(s.w);
    if (h, w) == (s.h, s.w) {
        return Ok(image.clone());
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        image.at(n, c, reflect_index(y, s.h), reflect_index(x, s.w))
    }))
}

/// Inverse of [`reflect_pad`].
pub fn crop_to<T: Scalar>(image: &Tensor<T>, extents: (usize, usize)) -> Result<Tensor<T>> {
    image.crop(0, 0, extents.0, extents.1)
}

/// A decoded low/high pair, each `(1,3,H,W)` in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub name: String,
    pub low: Tensor<f32>,
    pub high: Tensor<f32>,
}

impl ImagePair {
    pub fn new(name: impl Into<String>, low: Tensor<f32>, high: Tensor<f32>) -> Result<Self> {
        let name = name.into();
        let (ls, hs) = (low.shape(), high.shape());
        if ls != hs {
            bail!(Dataset, "{name}: low {ls} and high {hs} differ in extents");
        }
        if ls.n != 1 || ls.c != 3 {
            bail!(Dataset, "{name}: expected one RGB image, got {ls}");
        }
        for (what, t) in [("low", &low), ("high", &high)] {
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                bail!(Dataset, "{name}: {what} has values outside [0,1]");
            }
        }
        Ok(ImagePair { name, low, high })
    }

    pub fn extents(&self) -> (usize, usize) {
        let s = self.low.shape();
        (s.h, s.w)
    }

    /// Reflect-pads both images so each extent is at least `min`.
    pub fn padded_to(&self, min: usize) -> Result<ImagePair> {
        Ok(ImagePair {
            name: self.name.clone(),
            low: reflect_pad_to(&self.low, min, min)?,
            high: reflect_pad_to(&self.high, min, min)?,
        })
    }
}

/// Where and how one batch item was cut; shared by both images of the pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchRecord {
    pub sample: usize,
    pub top: usize,
    pub left: usize,
    pub transform: Dihedral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub low: Tensor<f32>,
    pub high: Tensor<f32>,
    pub records: Vec<PatchRecord>,
}

impl PatchBatch {
    pub fn codes(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.transform.code()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Cuts one patch per index with a random position and dihedral code.
pub fn sample_patches(samples: &[ImagePair], indices: &[usize], patch: usize, rng: &mut impl Rng) -> Result<PatchBatch> {
    if samples.is_empty() || indices.is_empty() {
        bail!(Contract, "cannot sample a batch from no samples");
    }
    if patch == 0 {
        bail!(Contract, "patch size must be positive");
    }
    let mut lows = Vec::with_capacity(indices.len());
    let mut highs = Vec::with_capacity(indices.len());
    let mut records = Vec::with_capacity(indices.len());
    for &i in indices {
        let Some(pair) = samples.get(i) else {
            bail!(Bounds, "sample index {i} out of {}", samples.len());
        };
        let (h, w) = pair.extents();
        if h < patch || w < patch {
            bail!(Contract, "{}: {h}x{w} smaller than patch {patch}; reflect-pad first", pair.name);
        }
        let top = rng.random_range(0..=h - patch);
        let left = rng.random_range(0..=w - patch);
        let transform = Dihedral(rng.random_range(0..8u8));
        records.push(PatchRecord { sample: i, top, left, transform });
        lows.push(transform.apply(&pair.low.crop(top, left, patch, patch)?));
        highs.push(transform.apply(&pair.high.crop(top, left, patch, patch)?));
    }
    Ok(PatchBatch { low: Tensor::stack(&lows)?, high: Tensor::stack(&highs)?, records })
}

/// Seeded batch of `batch` items drawn uniformly with replacement.
pub fn sample_batch(samples: &[ImagePair], patch: usize, batch: usize, seed: u64) -> Result<PatchBatch> {
    if samples.is_empty() {
        bail!(Contract, "cannot sample a batch from no samples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..batch).map(|_| rng.random_range(0..samples.len())).collect();
    sample_patches(samples, &indices, patch, &mut rng)
}

/// Epoch-wise sampler: each epoch visits a fresh permutation of the pairs,
/// so `ceil(pairs / batch)` batches cover every pair at least once.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    count: usize,
}

impl EpochSampler {
    pub fn new(count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            bail!(Contract, "epoch sampler over an empty dataset");
        }
        let mut s = EpochSampler { rng: ChaCha8Rng::seed_from_u64(seed), order: Vec::new(), pos: 0, count };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.count).collect();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn steps_per_epoch(&self, batch: usize) -> usize {
        self.count.div_ceil(batch.max(1))
    }

    /// Starts a new epoch at the next call regardless of position.
    pub fn start_epoch(&mut self) {
        self.reshuffle();
    }

    fn next_indices(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn next_batch(&mut self, samples: &[ImagePair], patch: usize, batch: usize) -> Result<PatchBatch> {
        if samples.len() != self.count {
            bail!(Contract, "sampler built for {} pairs, given {}", self.count, samples.len());
        }
        let idx = self.next_indices(batch);
        sample_patches(samples, &idx, patch, &mut self.rng)
    }
}

/// Stable digest of a batch's transformation records.
pub fn records_checksum(records: &[PatchRecord]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for r in records {
        h.update(format!("{}:{}:{}:{};", r.sample, r.top, r.left, r.transform.code()).as_bytes());
    }
    h.finalize()
}
