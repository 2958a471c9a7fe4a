//! Straight-from-definition reference implementations, sharing no code with
//! the library beyond tensor storage.

#![allow(dead_code)]

use lumidec_core::conv::conv2d_forward;
use lumidec_core::losses::value;
use lumidec_core::metrics::{ms_ssim, psnr, ssim, SsimMode};
use lumidec_core::psi::{FeatureExtractor, FeatureExtractorSpec};
use lumidec_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Comparison {
    pub name: &'static str,
    pub max_err: f64,
    pub tolerance: f64,
}

impl Comparison {
    pub fn ok(&self) -> bool {
        self.max_err <= self.tolerance
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Six nested loops over output pixel and kernel tap.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().dims();
    let [cout, _, k, _] = w.shape().dims();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    Tensor::from_fn([n, cout, oh, ow], |ni, co, oy, ox| {
        let mut acc = b[co];
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.at(ni, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                    }
                }
            }
        }
        acc
    })
}

pub fn conv_comparison(trials: usize, seed: u64) -> Comparison {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut shapes = vec![([2, 4, 8, 8], [6, 4, 3, 3], 1, 1)];
    for _ in 0..trials {
        let cin = rng.random_range(1..=8);
        let cout = rng.random_range(1..=8);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let h = rng.random_range(k.max(2)..=16);
        let w = rng.random_range(k.max(2)..=16);
        shapes.push(([rng.random_range(1..=2), cin, h, w], [cout, cin, k, k], rng.random_range(1..=2), rng.random_range(0..=k / 2 + 1)));
    }
    for (xs, ws, stride, pad) in shapes {
        let x = rand_t(&mut rng, xs, -1.0, 1.0);
        let w = rand_t(&mut rng, ws, -1.0, 1.0);
        let b: Vec<f64> = (0..ws[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bt = Tensor::new([1, ws[0], 1, 1], b.clone()).unwrap();
        let (_, fast) = conv2d_forward(&x, &w, Some(&bt), stride, pad).unwrap();
        let slow = naive_conv(&x, &w, &b, stride, pad);
        worst = worst.max(fast.max_abs_diff(&slow).unwrap());
        // the f32 path against the same oracle
        let (_, f32_out) = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), Some(&bt.cast::<f32>()), stride, pad).unwrap();
        worst = worst.max(f32_out.cast::<f64>().max_abs_diff(&slow).unwrap());
    }
    Comparison { name: "conv2d", max_err: worst, tolerance: 1e-5 }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn r1_oracle(x: &Tensor<f64>, g: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let n = x.numel() as f64;
    (0..x.numel()).map(|i| (x.data()[i].max(1e-4).powf(g.data()[i]) - t.data()[i]).powi(2)).sum::<f64>() / n
}

pub fn smooth_oracle(g: &Tensor<f64>) -> f64 {
    let [n, c, h, w] = g.shape().dims();
    let mut s = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let dx = if x + 1 < w { g.at(ni, ci, y, x + 1) - g.at(ni, ci, y, x) } else { 0.0 };
                    let dy = if y + 1 < h { g.at(ni, ci, y + 1, x) - g.at(ni, ci, y, x) } else { 0.0 };
                    s += (dx.abs() + dy.abs()).powi(2);
                }
            }
        }
    }
    s / g.numel() as f64
}

pub fn color_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [n, _, h, w] = a.shape().dims();
    let mut s = 0.0;
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let u: Vec<f64> = (0..3).map(|c| a.at(ni, c, y, x)).collect();
                let v: Vec<f64> = (0..3).map(|c| b.at(ni, c, y, x)).collect();
                let nu = u.iter().map(|q| q * q).sum::<f64>().sqrt().max(1e-6);
                let nv = v.iter().map(|q| q * q).sum::<f64>().sqrt().max(1e-6);
                let dot: f64 = u.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>() / (nu * nv);
                s += dot.clamp(-1.0, 1.0).acos() * 180.0 / std::f64::consts::PI;
            }
        }
    }
    s / (n * h * w) as f64
}

/// Feature pyramid rebuilt from the extractor's named weights with the
/// naive convolution, ReLU and 2x2 averaging.
pub fn features_oracle(psi: &FeatureExtractor<f64>, img: &Tensor<f64>) -> Tensor<f64> {
    let spec = psi.spec();
    let mut x = img.clone();
    for (si, st) in spec.stages.iter().enumerate().take(spec.tap_stage + 1) {
        for k in 0..st.convs {
            let kernel = psi.weights().get(&format!("psi/stage{}/conv{}/kernel", si + 1, k + 1)).unwrap();
            let bias = psi.weights().get(&format!("psi/stage{}/conv{}/bias", si + 1, k + 1)).unwrap();
            let pad = kernel.shape().h / 2;
            x = naive_conv(&x, kernel, bias.data(), 1, pad).map(|v| v.max(0.0));
        }
        if st.downsample && si < spec.tap_stage {
            let [n, c, h, w] = x.shape().dims();
            let src = x.clone();
            x = Tensor::from_fn([n, c, h / 2, w / 2], |a, b, y, xx| {
                (src.at(a, b, 2 * y, 2 * xx) + src.at(a, b, 2 * y + 1, 2 * xx) + src.at(a, b, 2 * y, 2 * xx + 1) + src.at(a, b, 2 * y + 1, 2 * xx + 1)) / 4.0
            });
        }
    }
    x
}

pub fn vgg_oracle(psi: &FeatureExtractor<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let fa = features_oracle(psi, a);
    let fb = features_oracle(psi, b);
    fa.data().iter().zip(fb.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / fa.numel() as f64
}

pub fn loss_comparisons(trials: usize, seed: u64) -> Vec<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi = FeatureExtractor::<f64>::new(FeatureExtractorSpec::default()).unwrap();
    let (mut r1, mut sm, mut col, mut vgg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..trials {
        let side = [4, 8, 16][i % 3];
        let s = [1 + i % 2, 3, side, side];
        let x = rand_t(&mut rng, s, 0.0, 1.0);
        let g = rand_t(&mut rng, s, 0.01, 0.99);
        let t = rand_t(&mut rng, s, 0.0, 1.0);
        r1 = r1.max(rel(value::r1(&x, &g, &t).unwrap(), r1_oracle(&x, &g, &t)));
        sm = sm.max(rel(value::smooth(&g).unwrap(), smooth_oracle(&g)));
        col = col.max(rel(value::color(&x, &t).unwrap(), color_oracle(&x, &t)));
        if side == 16 {
            vgg = vgg.max(rel(value::vgg(&psi, &x, &t).unwrap(), vgg_oracle(&psi, &x, &t)));
        }
    }
    vec![
        Comparison { name: "loss_r1", max_err: r1, tolerance: 1e-6 },
        Comparison { name: "loss_smooth", max_err: sm, tolerance: 1e-6 },
        Comparison { name: "loss_color", max_err: col, tolerance: 1e-6 },
        Comparison { name: "loss_vgg", max_err: vgg, tolerance: 1e-6 },
    ]
}

pub fn psnr_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>() / a.numel() as f64;
    if mse < 1e-10 {
        100.0
    } else {
        -10.0 * mse.log10()
    }
}

fn gray(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let [_, c, h, w] = t.shape().dims();
    (0..h).map(|y| (0..w).map(|x| (0..c).map(|ch| t.at(0, ch, y, x) as f64).sum::<f64>() / c as f64).collect()).collect()
}

/// Direct 2-D windowed statistics at every valid position; returns the mean
/// SSIM and mean contrast-structure term.
fn ssim_cs_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let k = 11;
    let sigma: f64 = 1.5;
    let mut win = vec![vec![0.0; k]; k];
    let mut tot = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            tot += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (a.len(), a[0].len());
    let (mut ss, mut cs, mut count) = (0.0, 0.0, 0.0);
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = win[i][j] / tot;
                    let (p, q) = (a[y + i][x + j], b[y + i][x + j]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            let c = (2.0 * cov + c2) / (va + vb + c2);
            ss += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * c;
            cs += c;
            count += 1.0;
        }
    }
    (ss / count, cs / count)
}

pub fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    ssim_cs_oracle(&gray(a), &gray(b)).0
}

fn halve(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..p.len() / 2).map(|y| (0..p[0].len() / 2).map(|x| (p[2 * y][2 * x] + p[2 * y + 1][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x + 1]) / 4.0).collect()).collect()
}

pub fn ms_ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (mut pa, mut pb) = (gray(a), gray(b));
    let mut scales = 0;
    let (mut h, mut w) = (pa.len(), pa[0].len());
    while scales < 5 && h >= 11 && w >= 11 {
        scales += 1;
        h /= 2;
        w /= 2;
    }
    assert!(scales >= 2, "oracle only covers the multi-scale case");
    let total: f64 = weights[..scales].iter().sum();
    let mut v = 1.0;
    for (j, wj) in weights[..scales].iter().enumerate() {
        let (s, c) = ssim_cs_oracle(&pa, &pb);
        let term = if j + 1 == scales { s } else { c };
        v *= term.max(0.0).powf(wj / total);
        pa = halve(&pa);
        pb = halve(&pb);
    }
    v
}

pub fn metric_comparisons(images: usize, seed: u64) -> Vec<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut p, mut s, mut m) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..images {
        let (h, w) = [(24, 24), (48, 40), (64, 96), (180, 176), (33, 57)][i % 5];
        let a = Tensor::<f32>::from_fn([1, 3, h, w], |_, _, y, x| ((y as f32 * 0.13 + x as f32 * 0.07).sin() * 0.4 + 0.5).clamp(0.0, 1.0));
        let noise: f32 = rng.random_range(0.02..0.3);
        let jitter: Vec<f32> = (0..a.numel()).map(|_| rng.random::<f32>() - 0.5).collect();
        let b = Tensor::new(a.shape(), a.data().iter().zip(&jitter).map(|(v, j)| (v + noise * j).clamp(0.0, 1.0)).collect()).unwrap();
        p = p.max((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs());
        s = s.max((ssim(&a, &b, SsimMode::Luminance).unwrap() - ssim_oracle(&a, &b)).abs());
        m = m.max((ms_ssim(&a, &b, SsimMode::Luminance).unwrap().value - ms_ssim_oracle(&a, &b)).abs());
    }
    vec![
        Comparison { name: "psnr", max_err: p, tolerance: 1e-4 },
        Comparison { name: "ssim", max_err: s, tolerance: 1e-4 },
        Comparison { name: "ms_ssim", max_err: m, tolerance: 1e-4 },
    ]
}
