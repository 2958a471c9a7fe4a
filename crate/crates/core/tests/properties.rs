use lumidec_core::augment::{Dihedral, ImagePair};
use lumidec_core::losses::{loss_r1, loss_smooth, value, Stage2Weights};
use lumidec_core::metrics::{evaluate_dataset, ms_ssim, psnr, ssim, SsimMode, PSNR_CAP_DB};
use lumidec_core::net1::Net1Config;
use lumidec_core::net2::Net2Config;
use lumidec_core::psi::{FeatureExtractor, FeatureExtractorSpec};
use lumidec_core::{Result, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn box_blur(t: &Tensor<f64>) -> Tensor<f64> {
    let [_, _, h, w] = t.shape().dims();
    Tensor::from_fn(t.shape(), |n, c, y, x| {
        let mut s = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                s += t.at(n, c, yy, xx);
            }
        }
        s / 9.0
    })
}

#[test]
fn smooth_loss_of_ramp_has_closed_form() {
    for (d, w) in [(0.01, 8usize), (0.003, 20), (0.05, 5)] {
        let g = Tensor::<f64>::from_fn([1, 3, 6, w], |_, _, _, x| 0.2 + d * x as f64);
        let expected = d * d * (w - 1) as f64 / w as f64;
        assert!((value::smooth(&g).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn checkerboard_is_rougher_than_its_blur() {
    let board = Tensor::<f64>::from_fn([1, 3, 12, 12], |_, _, y, x| ((x + y) % 2) as f64);
    let rough = value::smooth(&board).unwrap();
    let mut blurred = board.clone();
    for _ in 0..4 {
        blurred = box_blur(&blurred);
        assert!(value::smooth(&blurred).unwrap() < rough);
    }
}

#[test]
fn total_losses_recompose_from_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let psi = FeatureExtractor::<f64>::new(FeatureExtractorSpec::default()).unwrap();
    for _ in 0..3 {
        let s = [1, 3, 16, 16];
        let (x, t) = (uniform(&mut rng, s, 0.0, 1.0), uniform(&mut rng, s, 0.0, 1.0));
        let g = uniform(&mut rng, s, 0.05, 0.95);
        let r1 = value::r1(&x, &g, &t).unwrap();
        let sm = value::smooth(&g).unwrap();
        assert!((value::total1(&x, &g, &t, 20.0).unwrap() - (r1 + 20.0 * sm)).abs() < 1e-6);
        assert_eq!(value::total1(&x, &g, &t, 0.0).unwrap(), r1);

        let w = Stage2Weights::default();
        let r2 = value::r2(&x, &t).unwrap();
        let parts = r2 + w.vgg * value::vgg(&psi, &x, &t).unwrap() + w.color * value::color(&x, &t).unwrap();
        assert!((value::total2(&psi, &x, &t, w).unwrap() - parts).abs() < 1e-6);
        let mse_only = Stage2Weights { vgg: 0.0, color: 0.0, ..w };
        assert_eq!(value::total2(&psi, &x, &t, mse_only).unwrap(), r2);
        assert_eq!(value::total2(&psi, &t, &t, w).unwrap(), 0.0);
    }
}

#[test]
fn color_angle_bounds_symmetry_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let (a, b) = (uniform(&mut rng, [1, 3, 5, 7], 0.0, 1.0), uniform(&mut rng, [1, 3, 5, 7], 0.0, 1.0));
        let ab = value::color(&a, &b).unwrap();
        assert!((0.0..=180.0).contains(&ab));
        assert!((ab - value::color(&b, &a).unwrap()).abs() < 1e-12);
    }
    let dim = Tensor::<f64>::full([1, 3, 2, 2], 0.2);
    let bright = Tensor::<f64>::full([1, 3, 2, 2], 0.9);
    assert!(value::color(&dim, &bright).unwrap().abs() < 1e-5);
}

#[test]
fn perceptual_loss_properties() {
    let psi = FeatureExtractor::<f64>::new(FeatureExtractorSpec::default()).unwrap();
    let target = Tensor::<f64>::from_fn([1, 3, 32, 32], |_, c, y, x| 0.5 + 0.4 * ((x as f64 * 0.4 + c as f64).sin() * (y as f64 * 0.3).cos()));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let jitter = uniform(&mut rng, [1, 3, 32, 32], -0.05, 0.05);
    let noisy = target.zip_map(&jitter, |v, j| v + j).unwrap();
    let blurred = box_blur(&target);
    assert_eq!(value::vgg(&psi, &target, &target).unwrap(), 0.0);
    assert!(value::vgg(&psi, &blurred, &target).unwrap() > 0.0);
    assert!(value::vgg(&psi, &noisy, &target).unwrap() > 0.0);
    assert!((value::vgg(&psi, &noisy, &target).unwrap() - value::vgg(&psi, &target, &noisy).unwrap()).abs() < 1e-15);

    let mut tape = Tape::new();
    let a = tape.param(noisy.clone());
    let b = tape.constant(target.clone());
    let l = lumidec_core::losses::loss_vgg(&mut tape, &psi, a, b).unwrap();
    assert!(tape.backward(l).unwrap().wrt(a).sq_norm() > 0.0);
    // same seed, same features
    assert_eq!(psi.extract(&target).unwrap(), FeatureExtractor::<f64>::new(FeatureExtractorSpec::default()).unwrap().extract(&target).unwrap());
}

#[test]
fn stage1_loss_is_shift_equivariant_on_periodic_images() {
    let (h, w) = (32usize, 32usize);
    let tau = std::f64::consts::TAU;
    let field = |phase: f64| {
        move |dy: usize| {
            Tensor::<f64>::from_fn([1, 3, h, w], move |_, c, y, x| {
                let (u, v) = (((x + dy) % w) as f64 / w as f64, (y % h) as f64 / h as f64);
                0.5 + 0.3 * (tau * u + phase + c as f64).sin() * (tau * v).cos()
            })
        }
    };
    let (img, tgt) = (field(0.0), field(1.3));
    let g = |s: usize| img(s).map(|v| 0.45 + 0.02 * (v - 0.5));
    let base = value::total1(&img(0), &g(0), &tgt(0), 20.0).unwrap();
    let moved = value::total1(&img(8), &g(8), &tgt(8), 20.0).unwrap();
    assert!((base - moved).abs() < 1e-4, "{base} vs {moved}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = [2, 3, 8, 8];
    let (x, t) = (uniform(&mut rng, s, 0.05, 1.0), uniform(&mut rng, s, 0.0, 1.0));
    let g = uniform(&mut rng, s, 0.1, 0.9);
    let grad = |a: f64, b: f64| -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let (xv, tv, gv) = (tape.constant(x.clone()), tape.constant(t.clone()), tape.param(g.clone()));
        let l1 = loss_r1(&mut tape, xv, gv, tv)?;
        let l2 = loss_smooth(&mut tape, gv)?;
        let (l1, l2) = (tape.mul_scalar(l1, a), tape.mul_scalar(l2, b));
        let l = tape.add(l1, l2)?;
        Ok(tape.backward(l)?.wrt(gv))
    };
    let (a, b) = (0.7, -2.5);
    let combined = grad(a, b).unwrap();
    let (g1, g2) = (grad(1.0, 0.0).unwrap(), grad(0.0, 1.0).unwrap());
    let sum = g1.zip_map(&g2, |p, q| a * p + b * q).unwrap();
    assert!(combined.max_abs_diff(&sum).unwrap() < 1e-6);
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let cfg = Net1Config::with_base(4);
    let weights = cfg.init_weights::<f32>(9).unwrap();
    let x = Tensor::<f32>::from_fn([2, 3, 32, 32], |n, c, y, x| ((n + 3 * c + y * x) % 17) as f32 / 17.0);
    let run = || {
        let mut tape = Tape::new();
        let p = weights.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let g = cfg.forward(&mut tape, &p, xv).unwrap();
        let l = loss_smooth(&mut tape, g).unwrap();
        let grads = tape.backward(l).unwrap();
        (tape.value(g).clone(), p.gradients(&grads))
    };
    assert_eq!(run(), run());
}

#[test]
fn net1_range_over_seeds_and_size_ordering() {
    let cfg = Net1Config::with_base(4);
    let img = Tensor::<f32>::from_fn([1, 3, 16, 16], |_, c, y, x| ((c * 5 + y * 7 + x * 3) % 11) as f32 / 11.0);
    for seed in 0..20 {
        let w = cfg.init_weights::<f32>(seed).unwrap();
        let mut tape = Tape::new();
        let p = w.bind(&mut tape, false);
        let xv = tape.constant(img.map(|v| (v + seed as f32 * 0.013) % 1.0));
        let g = cfg.forward(&mut tape, &p, xv).unwrap();
        assert!(tape.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    let n1 = Net1Config::default().init_weights::<f32>(0).unwrap().count_params();
    let n2 = Net2Config::default().init_weights::<f32>(0).unwrap().count_params();
    assert!(n1 < n2, "{n1} vs {n2}");
}

fn test_image(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn([1, 3, h, w], |_, c, y, x| (0.5 + 0.4 * ((x as f32 * 0.21 + c as f32).sin() * (y as f32 * 0.17).cos())).clamp(0.0, 1.0))
}

fn noisy(t: &Tensor<f32>, sigma: f32, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, sigma).unwrap();
    let data = t.data().iter().map(|v| (v + n.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    Tensor::new(t.shape(), data).unwrap()
}

#[test]
fn psnr_slope_is_twenty_db_per_decade() {
    let zero = Tensor::<f32>::zeros([1, 3, 4, 4]);
    let mut prev: Option<(f64, f64)> = None;
    for e in [0.001f32, 0.01, 0.1] {
        let p = psnr(&zero, &Tensor::full([1, 3, 4, 4], e)).unwrap();
        if let Some((pe, pp)) = prev {
            assert!(p < pp);
            assert!(((pp - p) - 20.0 * (e as f64 / pe).log10()).abs() < 1e-6);
        }
        prev = Some((e as f64, p));
    }
}

#[test]
fn ssim_of_inverted_image_is_low() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = Tensor::<f32>::from_fn([1, 3, 32, 32], |_, _, _, _| {
        let v: f32 = rng.random_range(0.0..0.4);
        if rng.random() { v } else { 1.0 - v }
    });
    let inv = a.map(|v| 1.0 - v);
    assert!(ssim(&a, &inv, SsimMode::Luminance).unwrap() < 0.2);
    assert!(ssim(&a, &inv, SsimMode::RgbMean).unwrap() < 0.2);
}

#[test]
fn ms_ssim_falls_with_noise_and_stays_in_unit_interval() {
    let clean = test_image(192, 192);
    let scores: Vec<f64> = [0.01f32, 0.05, 0.1].iter().map(|&s| ms_ssim(&clean, &noisy(&clean, s, 1), SsimMode::Luminance).unwrap().value).collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    assert!((ms_ssim(&clean, &clean, SsimMode::Luminance).unwrap().value - 1.0).abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..50 {
        let a = Tensor::<f32>::from_fn([1, 3, 48, 48], |_, _, _, _| rng.random());
        let b = if i % 2 == 0 { noisy(&a, 0.2, i) } else { Tensor::from_fn([1, 3, 48, 48], |_, _, _, _| rng.random()) };
        let m = ms_ssim(&a, &b, SsimMode::Luminance).unwrap();
        assert!((0.0..=1.0).contains(&m.value), "{}", m.value);
    }
}

#[test]
fn structural_metrics_are_dihedral_invariant() {
    let a = test_image(64, 96);
    let b = noisy(&a, 0.05, 4);
    let (s0, m0) = (ssim(&a, &b, SsimMode::Luminance).unwrap(), ms_ssim(&a, &b, SsimMode::Luminance).unwrap().value);
    for d in Dihedral::all() {
        let (ta, tb) = (d.apply(&a), d.apply(&b));
        assert!((ssim(&ta, &tb, SsimMode::Luminance).unwrap() - s0).abs() < 1e-4);
        assert!((ms_ssim(&ta, &tb, SsimMode::Luminance).unwrap().value - m0).abs() < 1e-4);
        assert!((ssim(&tb, &ta, SsimMode::Luminance).unwrap() - s0).abs() < 1e-9);
    }
}

#[test]
fn identity_enhancer_on_clean_pairs() {
    let pairs: Vec<ImagePair> = (0..4).map(|i| ImagePair::new(format!("p{i}"), test_image(24 + i, 30), test_image(24 + i, 30)).unwrap()).collect();
    let report = evaluate_dataset(&|x: &Tensor<f32>| Ok(x.clone()), &pairs, SsimMode::Luminance);
    assert_eq!(report.rows.len(), 4);
    let m = report.means().unwrap();
    assert_eq!(m.psnr, PSNR_CAP_DB);
    assert!((m.ssim - 1.0).abs() < 1e-6);
}
