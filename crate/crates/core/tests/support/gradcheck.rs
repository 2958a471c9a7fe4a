//! Central finite-difference checks of taped gradients in f64.

#![allow(dead_code)]

use lumidec_core::losses::{loss_total1, loss_total2, Stage2Weights};
use lumidec_core::psi::{FeatureExtractor, FeatureExtractorSpec, StageSpec, WeightSource};
use lumidec_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    build: Build,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    /// Worst norm-wise relative error over the inputs.
    pub rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Values bounded away from zero: magnitude in `[lo, hi)`, random sign.
fn signed_away(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(lo..hi);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn case(name: &str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name: name.to_string(), inputs, build: Box::new(build) }
}

impl Case {
    /// Scalarises the output as `sum(out * r)` with a fixed random `r`.
    fn loss(&self, tape: &mut Tape<f64>, vars: &[Var], r: &Tensor<f64>) -> Result<Var> {
        let out = (self.build)(tape, vars)?;
        let rv = tape.constant(r.clone());
        let prod = tape.mul(out, rv)?;
        Ok(tape.sum(prod))
    }

    fn probe(&self, seed: u64) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Ok(uniform(&mut rng, tape.shape(out).dims(), 0.5, 1.5))
    }

    fn value_at(&self, inputs: &[Tensor<f64>], r: &Tensor<f64>) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let l = self.loss(&mut tape, &vars, r)?;
        tape.item(l)
    }

    /// Compares analytic and central-difference gradients for every input.
    /// `max_coords` bounds how many entries per input are probed.
    pub fn check(&self, seed: u64, max_coords: usize) -> Result<Outcome> {
        let r = self.probe(seed)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.param(t.clone())).collect();
        let l = self.loss(&mut tape, &vars, &r)?;
        let grads = tape.backward(l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 7);
        let mut worst: f64 = 0.0;
        for (i, &v) in vars.iter().enumerate() {
            let analytic = grads.wrt(v);
            let n = self.inputs[i].numel();
            let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { (0..max_coords).map(|_| rng.random_range(0..n)).collect() };
            let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
            for &k in &coords {
                let mut plus = self.inputs.clone();
                plus[i].data_mut()[k] += STEP;
                let mut minus = self.inputs.clone();
                minus[i].data_mut()[k] -= STEP;
                let numeric = (self.value_at(&plus, &r)? - self.value_at(&minus, &r)?) / (2.0 * STEP);
                let a = analytic.data()[k];
                diff += (a - numeric).powi(2);
                na += a * a;
                nn += numeric * numeric;
            }
            let denom = na.sqrt().max(nn.sqrt());
            let rel = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
            worst = worst.max(rel);
        }
        Ok(Outcome { name: self.name.clone(), rel_err: worst })
    }
}

/// One case per differentiable primitive, inputs drawn away from kinks.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = [2, 3, 4, 4];
    let mut u = |lo: f64, hi: f64| uniform(&mut rng, s, lo, hi);
    let (a, b, pos, unit, base, expo) = (u(-1.0, 1.0), u(-1.0, 1.0), u(0.5, 2.0), u(0.1, 0.9), u(0.1, 1.0), u(0.1, 1.0));
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed + 1000);
    let away = signed_away(&mut rng2, s, 0.05, 1.0);
    let clampable = Tensor::from_fn(s, |_, _, _, _| {
        // keep clear of the bounds -0.5 and 0.5
        let v: f64 = rng2.random_range(-1.0..1.0);
        if (v.abs() - 0.5).abs() < 0.05 { v * 0.5 } else { v }
    });
    let other = uniform(&mut rng2, [2, 2, 4, 4], -1.0, 1.0);
    let img = uniform(&mut rng2, [1, 3, 8, 8], -1.0, 1.0);
    let kernel3 = uniform(&mut rng2, [4, 3, 3, 3], -0.5, 0.5);
    let kernel1 = uniform(&mut rng2, [5, 3, 1, 1], -0.5, 0.5);
    let bias4 = uniform(&mut rng2, [1, 4, 1, 1], -0.5, 0.5);
    let bias5 = uniform(&mut rng2, [1, 5, 1, 1], -0.5, 0.5);
    let scale = uniform(&mut rng2, [1, 3, 1, 1], 0.5, 1.5);
    let shift = uniform(&mut rng2, [1, 3, 1, 1], -0.5, 0.5);
    let rgb_a = uniform(&mut rng2, [1, 3, 4, 4], 0.05, 1.0);
    let rgb_b = uniform(&mut rng2, [1, 3, 4, 4], 0.05, 1.0);
    let odd = uniform(&mut rng2, [1, 2, 5, 7], -1.0, 1.0);
    vec![
        case("add", vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1])),
        case("sub", vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1])),
        case("div", vec![a.clone(), pos.clone()], |t, v| t.div(v[0], v[1])),
        case("add_scalar", vec![a.clone()], |t, v| Ok(t.add_scalar(v[0], 0.7))),
        case("mul_scalar", vec![a.clone()], |t, v| Ok(t.mul_scalar(v[0], -1.3))),
        case("pow_elementwise", vec![base, expo], |t, v| t.pow_elementwise(v[0], v[1])),
        case("clamp", vec![clampable], |t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        case("sigmoid", vec![a.clone()], |t, v| Ok(t.sigmoid(v[0]))),
        case("logit", vec![unit], |t, v| Ok(t.logit(v[0]))),
        case("lrelu", vec![away.clone()], |t, v| Ok(t.lrelu(v[0], 0.2))),
        case("relu", vec![away.clone()], |t, v| Ok(t.relu(v[0]))),
        case("abs", vec![away], |t, v| Ok(t.abs(v[0]))),
        case("square", vec![a.clone()], |t, v| Ok(t.square(v[0]))),
        case("sqrt", vec![pos], |t, v| Ok(t.sqrt(v[0]))),
        case("mean", vec![a.clone()], |t, v| Ok(t.mean(v[0]))),
        case("sum", vec![a.clone()], |t, v| Ok(t.sum(v[0]))),
        case("sum_sq_norm", vec![a.clone()], |t, v| Ok(t.sum_sq_norm(v[0]))),
        case("concat_channels", vec![a.clone(), other], |t, v| t.concat_channels(&[v[0], v[1]])),
        case("avgpool2", vec![odd.clone()], |t, v| t.avgpool2(v[0])),
        case("resize_nearest2x", vec![a.clone()], |t, v| Ok(t.resize_nearest2x(v[0]))),
        case("conv2d_3x3_pad1", vec![img.clone(), kernel3.clone(), bias4.clone()], |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        case("conv2d_3x3_stride2", vec![img.clone(), kernel3, bias4], |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 0)),
        case("conv2d_1x1", vec![img.clone(), kernel1, bias5], |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 0)),
        case("layer_norm", vec![img, scale, shift], |t, v| t.layer_norm(v[0], v[1], v[2])),
        case("diff_x", vec![a.clone()], |t, v| Ok(t.diff_x(v[0]))),
        case("diff_y", vec![a.clone()], |t, v| Ok(t.diff_y(v[0]))),
        case("color_angle", vec![rgb_a, rgb_b], |t, v| t.color_angle(v[0], v[1])),
        case("crop", vec![odd], |t, v| t.crop(v[0], 1, 2, 3, 4)),
    ]
}

/// Uniform draw in raster order, re-drawing any entry closer than `gap` to
/// its left or upper neighbour so finite differences never straddle the kink
/// of `|dx|` or `|dy|`.
fn kink_free(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64, gap: f64) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(shape);
    let [n, c, h, w] = shape;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = loop {
                        let v: f64 = rng.random_range(lo..hi);
                        let far_left = x == 0 || (v - t.at(ni, ci, y, x - 1)).abs() >= gap;
                        let far_up = y == 0 || (v - t.at(ni, ci, y - 1, x)).abs() >= gap;
                        if far_left && far_up {
                            break v;
                        }
                    };
                    t.set(ni, ci, y, x, v);
                }
            }
        }
    }
    t
}

/// A small frozen extractor; the full default needs inputs of at least 16.
pub fn small_psi() -> FeatureExtractor<f64> {
    let st = |out_channels, convs, downsample| StageSpec { out_channels, convs, downsample };
    FeatureExtractor::new(FeatureExtractorSpec {
        stages: vec![st(4, 1, true), st(6, 2, true), st(8, 1, false)],
        tap_stage: 2,
        weight_source: WeightSource::Seeded(7),
    })
    .expect("valid spec")
}

/// Both composite objectives on 1x3x8x8 inputs.
pub fn composite_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
    let s = [1, 3, 8, 8];
    let image = uniform(&mut rng, s, 0.05, 0.6);
    let g = kink_free(&mut rng, s, 0.2, 0.9, 1e-3);
    let target = uniform(&mut rng, s, 0.1, 0.9);
    let ie2 = uniform(&mut rng, s, 0.05, 0.95);
    let psi = small_psi();
    let default_psi = FeatureExtractor::<f64>::new(FeatureExtractorSpec::default()).expect("default spec");
    let ie2_16 = uniform(&mut rng, [1, 3, 16, 16], 0.05, 0.95);
    let t16 = uniform(&mut rng, [1, 3, 16, 16], 0.05, 0.95);
    let tgt = target.clone();
    let tgt2 = target.clone();
    vec![
        case("loss_total1", vec![image, g], move |t, v| {
            let tv = t.constant(tgt.clone());
            Ok(loss_total1(t, v[0], v[1], tv, 20.0)?.total)
        }),
        case("loss_total2", vec![ie2], move |t, v| {
            let tv = t.constant(tgt2.clone());
            Ok(loss_total2(t, &psi, v[0], tv, Stage2Weights::default())?.total)
        }),
        case("loss_total2_default_extractor", vec![ie2_16], move |t, v| {
            let tv = t.constant(t16.clone());
            Ok(loss_total2(t, &default_psi, v[0], tv, Stage2Weights::default())?.total)
        }),
    ]
}

/// Runs every case for each seed; returns all outcomes.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for c in primitive_cases(seed).into_iter().chain(composite_cases(seed)) {
            let mut o = c.check(seed, 96)?;
            o.name = format!("{} (seed {seed})", o.name);
            out.push(o);
        }
    }
    Ok(out)
}
