//! Layer helpers shared by the networks. Parameters are looked up by name
//! in a [`Bound`] store.

use alloc::format;

use crate::error::Result;
use crate::params::Bound;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Negative slope of every LReLU in the networks.
pub const LRELU_SLOPE: f64 = 0.2;

/// Stride-1 convolution with "same" padding using `{prefix}/kernel` and
/// `{prefix}/bias`.
pub fn conv<T: Scalar>(tape: &mut Tape<T>, p: &Bound<'_, T>, prefix: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}/kernel"))?;
    let b = p.var(&format!("{prefix}/bias"))?;
    let k = tape.shape(w).h;
    tape.conv2d(x, w, Some(b), 1, k / 2)
}

pub fn layer_norm<T: Scalar>(tape: &mut Tape<T>, p: &Bound<'_, T>, prefix: &str, x: Var) -> Result<Var> {
    let g = p.var(&format!("{prefix}/scale"))?;
    let b = p.var(&format!("{prefix}/shift"))?;
    tape.layer_norm(x, g, b)
}

pub fn lrelu<T: Scalar>(tape: &mut Tape<T>, x: Var, slope: f64) -> Var {
    tape.lrelu(x, T::from_f64(slope))
}

/// Nearest 2x upsampling followed by a 3x3 convolution `{prefix}`.
pub fn upsample_conv<T: Scalar>(tape: &mut Tape<T>, p: &Bound<'_, T>, prefix: &str, x: Var) -> Result<Var> {
    let up = tape.resize_nearest2x(x);
    conv(tape, p, prefix, up)
}
