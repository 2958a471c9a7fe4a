//! Training objectives of both stages. Every reduction is a mean over
//! elements.

use crate::curve::apply_curve_var;
use crate::error::Result;
use crate::psi::FeatureExtractor;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub fn mse<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Lightness reconstruction: MSE between `image^G` and the target.
pub fn loss_r1<T: Scalar>(tape: &mut Tape<T>, image: Var, g: Var, target: Var) -> Result<Var> {
    let enhanced = apply_curve_var(tape, image, g)?;
    mse(tape, enhanced, target)
}

/// Local smoothness of `G`: mean of `(|dx G| + |dy G|)^2` with forward
/// differences, zero at the far boundary.
pub fn loss_smooth<T: Scalar>(tape: &mut Tape<T>, g: Var) -> Result<Var> {
    let dx = tape.diff_x(g);
    let dy = tape.diff_y(g);
    let ax = tape.abs(dx);
    let ay = tape.abs(dy);
    let s = tape.add(ax, ay)?;
    let sq = tape.square(s);
    Ok(tape.mean(sq))
}

#[derive(Clone, Copy, Debug)]
pub struct Stage1Loss {
    pub total: Var,
    pub r1: Var,
    pub smooth: Var,
}

pub fn loss_total1<T: Scalar>(tape: &mut Tape<T>, image: Var, g: Var, target: Var, w_s: f64) -> Result<Stage1Loss> {
    let r1 = loss_r1(tape, image, g, target)?;
    let smooth = loss_smooth(tape, g)?;
    let weighted = tape.mul_scalar(smooth, T::from_f64(w_s));
    let total = tape.add(r1, weighted)?;
    Ok(Stage1Loss { total, r1, smooth })
}

/// Mean per-pixel angle (degrees) between RGB vectors.
pub fn loss_color<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let angles = tape.color_angle(a, b)?;
    Ok(tape.mean(angles))
}

/// Mean absolute difference of tap features.
pub fn loss_vgg<T: Scalar>(tape: &mut Tape<T>, psi: &FeatureExtractor<T>, a: Var, b: Var) -> Result<Var> {
    let fa = psi.extract_var(tape, a)?;
    let fb = psi.extract_var(tape, b)?;
    let d = tape.sub(fa, fb)?;
    let ad = tape.abs(d);
    Ok(tape.mean(ad))
}

/// Weights of the stage-two objective. A zero weight removes the term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Weights {
    pub r2: f64,
    pub vgg: f64,
    pub color: f64,
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Stage2Weights { r2: 1.0, vgg: 1.0, color: 0.2 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Stage2Loss {
    pub total: Var,
    pub r2: Option<Var>,
    pub vgg: Option<Var>,
    pub color: Option<Var>,
}

pub fn loss_total2<T: Scalar>(
    tape: &mut Tape<T>,
    psi: &FeatureExtractor<T>,
    ie2: Var,
    target: Var,
    w: Stage2Weights,
) -> Result<Stage2Loss> {
    let r2 = if w.r2 != 0.0 { Some(mse(tape, ie2, target)?) } else { None };
    let vgg = if w.vgg != 0.0 { Some(loss_vgg(tape, psi, ie2, target)?) } else { None };
    let color = if w.color != 0.0 { Some(loss_color(tape, ie2, target)?) } else { None };
    let mut total: Option<Var> = None;
    for (term, weight) in [(r2, w.r2), (vgg, w.vgg), (color, w.color)] {
        let Some(term) = term else { continue };
        let scaled = if weight == 1.0 { term } else { tape.mul_scalar(term, T::from_f64(weight)) };
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero())),
    };
    Ok(Stage2Loss { total, r2, vgg, color })
}

/// Plain-value evaluation of the losses.
pub mod value {
    use super::*;
    use crate::tape::eval_with;

    fn scalar<T: Scalar>(t: Result<Tensor<T>>) -> Result<T> {
        t?.item()
    }

    pub fn r1<T: Scalar>(image: &Tensor<T>, g: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        scalar(eval_with(&[image, g, target], |t, v| loss_r1(t, v[0], v[1], v[2])))
    }

    pub fn smooth<T: Scalar>(g: &Tensor<T>) -> Result<T> {
        scalar(eval_with(&[g], |t, v| loss_smooth(t, v[0])))
    }

    pub fn total1<T: Scalar>(image: &Tensor<T>, g: &Tensor<T>, target: &Tensor<T>, w_s: f64) -> Result<T> {
        scalar(eval_with(&[image, g, target], |t, v| Ok(loss_total1(t, v[0], v[1], v[2], w_s)?.total)))
    }

    pub fn r2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
        scalar(eval_with(&[a, b], |t, v| mse(t, v[0], v[1])))
    }

    pub fn color<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
        scalar(eval_with(&[a, b], |t, v| loss_color(t, v[0], v[1])))
    }

    pub fn vgg<T: Scalar>(psi: &FeatureExtractor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
        scalar(eval_with(&[a, b], |t, v| loss_vgg(t, psi, v[0], v[1])))
    }

    pub fn total2<T: Scalar>(psi: &FeatureExtractor<T>, a: &Tensor<T>, b: &Tensor<T>, w: Stage2Weights) -> Result<T> {
        scalar(eval_with(&[a, b], |t, v| Ok(loss_total2(t, psi, v[0], v[1], w)?.total)))
    }
}
