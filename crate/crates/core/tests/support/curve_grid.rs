//! Exhaustive curve-map property checks over the 8-bit grid: every input level
//! k/255 against every exponent (j+0.5)/256.

#![allow(dead_code)]

use lumidec_core::curve::{apply_curve, apply_uniform_gamma, CurveMap};
use lumidec_core::{Scalar, Tensor};

pub const LEVELS: usize = 256;

#[derive(Debug, Default)]
pub struct GridReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

fn exponent(j: usize) -> f64 {
    (j as f64 + 0.5) / LEVELS as f64
}

fn verify<T: Scalar>(report: &mut GridReport) {
    let label = core::any::type_name::<T>();
    // rows index the exponent, columns the input level
    let x = Tensor::<T>::from_fn([1, 3, LEVELS, LEVELS], |_, _, _, k| T::from_f64(k as f64 / 255.0));
    let g = CurveMap::new(Tensor::<T>::from_fn([1, 3, LEVELS, LEVELS], |_, _, j, _| T::from_f64(exponent(j)))).unwrap();
    let out = apply_curve(&x, &g).unwrap();
    let at = |j: usize, k: usize| out.at(0, 0, j, k).as_f64();
    let mut fail = |msg: String| report.violations.push(format!("{label}: {msg}"));
    for j in 0..LEVELS {
        for k in 0..LEVELS {
            let xv = k as f64 / 255.0;
            let y = at(j, k);
            if k > 0 && k < 255 && y <= xv {
                fail(format!("no brightening at x={xv}, g={}", exponent(j)));
            }
            if k == 255 && y != 1.0 {
                fail(format!("x=1 not fixed under g={}: {y}", exponent(j)));
            }
            if k > 1 && y <= at(j, k - 1) {
                fail(format!("not increasing in x at x={xv}, g={}", exponent(j)));
            }
            if j > 0 && k > 0 && k < 255 && y >= at(j - 1, k) {
                fail(format!("not decreasing in g at x={xv}, g={}", exponent(j)));
            }
        }
    }
    // uniform exponents agree with constant maps; the unit exponent is the
    // identity on every level above the clamp
    for j in (0..LEVELS).step_by(17) {
        let row = x.crop(0, 0, 1, LEVELS).unwrap();
        let constant = CurveMap::constant(row.shape(), T::from_f64(exponent(j))).unwrap();
        if apply_uniform_gamma(&row, T::from_f64(exponent(j))).unwrap() != apply_curve(&row, &constant).unwrap() {
            fail(format!("uniform gamma {} disagrees with a constant map", exponent(j)));
        }
    }
    let unit = apply_uniform_gamma(&x, T::one()).unwrap();
    for k in 1..LEVELS {
        if unit.at(0, 0, 0, k) != x.at(0, 0, 0, k) {
            fail(format!("g=1 changes x={}", k as f64 / 255.0));
        }
    }
    report.checked += LEVELS * LEVELS;
}

pub fn run() -> GridReport {
    let mut r = GridReport::default();
    verify::<f32>(&mut r);
    verify::<f64>(&mut r);
    r
}
