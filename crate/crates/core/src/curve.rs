//! The stage-one enhancement primitive: the pixel-wise power mapping
//! `out = clamp(in, eps, 1) ^ G`.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{eval_with, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Inputs are clamped to `[CURVE_EPS, 1]` before exponentiation so that
/// `ln(x)` in the exponent gradient stays bounded.
pub const CURVE_EPS: f64 = 1e-4;

/// Conventional display gamma.
pub const DISPLAY_GAMMA: f64 = 1.0 / 2.2;

/// Uniform exponents compared against the learned map.
pub const DEFAULT_GAMMAS: [f64; 4] = [1.0 / 1.5, 1.0 / 2.2, 1.0 / 4.0, 1.0 / 8.0];

/// Per-pixel, per-channel exponent map with every entry in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveMap<T>(Tensor<T>);

impl<T: Scalar> CurveMap<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.shape().c != 3 {
            bail!(Dimension, "curve map needs 3 channels, got {}", values.shape());
        }
        if let Some(v) = values.data().iter().find(|v| !(**v > T::zero() && **v < T::one())) {
            bail!(Contract, "curve map entry {v} outside (0, 1)");
        }
        Ok(CurveMap(values))
    }

    pub fn constant(shape: Shape, g: T) -> Result<Self> {
        Self::new(Tensor::full(shape, g))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Taped power mapping; differentiable w.r.t. both arguments.
pub fn apply_curve_var<T: Scalar>(tape: &mut Tape<T>, image: Var, g: Var) -> Result<Var> {
    let (si, sg) = (tape.shape(image), tape.shape(g));
    if si != sg {
        bail!(Dimension, "apply_curve: image {si} vs curve map {sg}");
    }
    let x = tape.clamp(image, T::from_f64(CURVE_EPS), T::one());
    tape.pow_elementwise(x, g)
}

pub fn apply_curve<T: Scalar>(image: &Tensor<T>, g: &CurveMap<T>) -> Result<Tensor<T>> {
    eval_with(&[image, g.tensor()], |t, v| apply_curve_var(t, v[0], v[1]))
}

/// Power mapping with one exponent for every pixel.
pub fn apply_uniform_gamma<T: Scalar>(image: &Tensor<T>, g: T) -> Result<Tensor<T>> {
    if !(g > T::zero() && g <= T::one()) {
        bail!(Contract, "uniform gamma must lie in (0, 1], got {g}");
    }
    let eps = T::from_f64(CURVE_EPS);
    Ok(image.map(|x| x.max(eps).min(T::one()).powf(g)))
}

/// Luminance (mean of RGB) along `row` of the first batch item.
pub fn extract_profile<T: Scalar>(image: &Tensor<T>, row: usize) -> Result<Vec<T>> {
    let s = image.shape();
    if row >= s.h {
        bail!(Bounds, "profile row {row} outside height {}", s.h);
    }
    let inv = T::from_f64(1.0 / s.c as f64);
    Ok((0..s.w)
        .map(|x| (0..s.c).map(|c| image.at(0, c, row, x)).sum::<T>() * inv)
        .collect())
}

/// `max - min` of a profile.
pub fn profile_contrast<T: Scalar>(profile: &[T]) -> T {
    let (lo, hi) = profile
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if profile.is_empty() {
        T::zero()
    } else {
        hi - lo
    }
}
