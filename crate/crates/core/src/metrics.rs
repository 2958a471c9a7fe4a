//! Full-reference quality metrics on `[0,1]` RGB tensors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

use num_traits::Float;

use crate::augment::ImagePair;
use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const CSV_HEADER: &str = "filename,psnr_db,ssim,ms_ssim,color_angle_deg,flags";

/// How colour images are reduced before the structural metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// Mean of R, G and B, then a single grayscale evaluation.
    #[default]
    Luminance,
    /// Independent evaluation per channel, averaged.
    RgbMean,
}

impl SsimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SsimMode::Luminance => "luminance",
            SsimMode::RgbMean => "rgb-mean",
        }
    }
}

impl FromStr for SsimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "luminance" => Ok(SsimMode::Luminance),
            "rgb-mean" => Ok(SsimMode::RgbMean),
            _ => bail!(Config, "unknown ssim mode {s:?} (expected luminance or rgb-mean)"),
        }
    }
}

fn check_pair(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(Dimension, "metric inputs differ: {} vs {}", a.shape(), b.shape());
    }
    Ok(())
}

pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.numel().max(1) as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at 100 dB.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    let m = mse(a, b)?;
    if m < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// A single-channel f64 plane.
#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn pool2(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                data.push(0.25 * (self.data[i] + self.data[i + 1] + self.data[i + self.w] + self.data[i + self.w + 1]));
            }
        }
        Plane { h, w, data }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().zip(&o.data).map(|(a, b)| a * b).collect() }
    }
}

fn planes(t: &Tensor<f32>, mode: SsimMode) -> Vec<Plane> {
    let s = t.shape();
    let mut out = Vec::new();
    for n in 0..s.n {
        match mode {
            SsimMode::Luminance => {
                let data = (0..s.h * s.w)
                    .map(|i| (0..s.c).map(|c| t.data()[(n * s.c + c) * s.h * s.w + i] as f64).sum::<f64>() / s.c as f64)
                    .collect();
                out.push(Plane { h: s.h, w: s.w, data });
            }
            SsimMode::RgbMean => {
                for c in 0..s.c {
                    let o = (n * s.c + c) * s.h * s.w;
                    out.push(Plane { h: s.h, w: s.w, data: t.data()[o..o + s.h * s.w].iter().map(|&v| v as f64).collect() });
                }
            }
        }
    }
    out
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(p: &Plane, g: &[f64; SSIM_WINDOW]) -> Plane {
    let k = SSIM_WINDOW;
    let ow = p.w - k + 1;
    let oh = p.h - k + 1;
    let mut tmp = vec![0.0; p.h * ow];
    for y in 0..p.h {
        let row = &p.data[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * row[x + i]).sum();
        }
    }
    let mut data = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            data[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    Plane { h: oh, w: ow, data }
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let aa = filter_valid(&a.mul(a), &g);
    let bb = filter_valid(&b.mul(b), &g);
    let ab = filter_valid(&a.mul(b), &g);
    let n = mu_a.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * cov + c2) / (va + vb + c2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

/// Mean structural similarity, 11x11 Gaussian window, valid region.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, mode: SsimMode) -> Result<f64> {
    check_pair(a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        bail!(Contract, "ssim needs extents >= {SSIM_WINDOW}, got {}x{}", s.h, s.w);
    }
    let pa = planes(a, mode);
    let pb = planes(b, mode);
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_terms(x, y).0).sum();
    Ok(total / pa.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Scales actually evaluated; 1 means the single-scale fallback.
    pub scales: usize,
}

impl MsSsim {
    pub fn fell_back(&self) -> bool {
        self.scales < 2
    }
}

/// Number of dyadic scales that keep the coarsest extent at least one window.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let mut m = 0;
    let (mut h, mut w) = (h, w);
    while m < MS_SSIM_WEIGHTS.len() && h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        m += 1;
        h /= 2;
        w /= 2;
    }
    m
}

/// Multi-scale SSIM. Fewer than five scales renormalise the leading weights;
/// fewer than two fall back to single-scale SSIM.
pub fn ms_ssim(a: &Tensor<f32>, b: &Tensor<f32>, mode: SsimMode) -> Result<MsSsim> {
    check_pair(a, b)?;
    let s = a.shape();
    let m = ms_ssim_scales(s.h, s.w);
    if m < 2 {
        let v = ssim(a, b, mode)?;
        return Ok(MsSsim { value: v.clamp(0.0, 1.0), scales: 1 });
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..m].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..m].iter().map(|w| w / wsum).collect();
    let pa = planes(a, mode);
    let pb = planes(b, mode);
    let count = pa.len();
    let mut total = 0.0;
    for (x, y) in pa.into_iter().zip(pb) {
        let (mut x, mut y) = (x, y);
        let mut value = 1.0;
        for (j, &wj) in weights.iter().enumerate() {
            let (ss, cs) = ssim_terms(&x, &y);
            let term = if j + 1 == m { ss } else { cs };
            value *= term.max(0.0).powf(wj);
            if j + 1 < m {
                x = x.pool2();
                y = y.pool2();
            }
        }
        total += value;
    }
    Ok(MsSsim { value: total / count as f64, scales: m })
}

/// Mean angle in degrees between RGB vectors; norms floored at 1e-6.
pub fn mean_color_angle(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let s = a.shape();
    if s.c != 3 {
        bail!(Dimension, "colour angle needs 3 channels, got {s}");
    }
    let floor = crate::tape::COLOR_NORM_FLOOR;
    let mut total = 0.0;
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
                let mut same = true;
                for c in 0..3 {
                    let (p, q) = (a.at(n, c, y, x) as f64, b.at(n, c, y, x) as f64);
                    same &= p == q;
                    dot += p * q;
                    na += p * p;
                    nb += q * q;
                }
                if same {
                    continue;
                }
                let cos = dot / (na.sqrt().max(floor) * nb.sqrt().max(floor));
                total += cos.clamp(-1.0, 1.0).acos().to_degrees();
            }
        }
    }
    Ok(total / (s.n * s.h * s.w).max(1) as f64)
}

/// Anything that maps a low-light `(1,3,H,W)` image to an enhanced one.
pub trait Enhancer {
    fn enhance(&self, low: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl<F: Fn(&Tensor<f32>) -> Result<Tensor<f32>>> Enhancer for F {
    fn enhance(&self, low: &Tensor<f32>) -> Result<Tensor<f32>> {
        self(low)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub filename: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub color_angle: f64,
    pub flags: Vec<String>,
    /// Set when inference or scoring failed; the numeric fields are NaN.
    pub failure: Option<String>,
}

impl MetricRow {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricMeans {
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub color_angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mode: SsimMode,
    pub rows: Vec<MetricRow>,
}

/// Scores one enhanced image against its reference.
pub fn score(filename: &str, out: &Tensor<f32>, reference: &Tensor<f32>, mode: SsimMode) -> Result<MetricRow> {
    let ms = ms_ssim(out, reference, mode)?;
    let mut flags = Vec::new();
    if ms.fell_back() {
        flags.push("ms_ssim_fallback".to_string());
    } else if ms.scales < MS_SSIM_WEIGHTS.len() {
        flags.push(format!("ms_ssim_scales={}", ms.scales));
    }
    Ok(MetricRow {
        filename: filename.to_string(),
        psnr: psnr(out, reference)?,
        ssim: ssim(out, reference, mode)?,
        ms_ssim: ms.value,
        color_angle: mean_color_angle(out, reference)?,
        flags,
        failure: None,
    })
}

impl MetricReport {
    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }

    /// Means over successful rows; `None` if every row failed.
    pub fn means(&self) -> Option<MetricMeans> {
        let ok: Vec<&MetricRow> = self.rows.iter().filter(|r| r.ok()).collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        let avg = |f: fn(&MetricRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(MetricMeans {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            ms_ssim: avg(|r| r.ms_ssim),
            color_angle: avg(|r| r.color_angle),
        })
    }

    /// Header comment, column row, then one row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ssim_mode={}", self.mode.as_str());
        let _ = writeln!(s, "{CSV_HEADER}");
        for r in &self.rows {
            let name = csv_field(&r.filename);
            match &r.failure {
                Some(msg) => {
                    let _ = writeln!(s, "{name},,,,,{}", csv_field(&format!("failed: {msg}")));
                }
                None => {
                    let _ = writeln!(
                        s,
                        "{name},{:.4},{:.6},{:.6},{:.4},{}",
                        r.psnr,
                        r.ssim,
                        r.ms_ssim,
                        r.color_angle,
                        csv_field(&r.flags.join(";"))
                    );
                }
            }
        }
        s
    }

    pub fn summary_line(&self) -> String {
        match self.means() {
            Some(m) => format!(
                "mean over {} images ({} failed): PSNR {:.4} dB, SSIM {:.4}, MS-SSIM {:.4}, colour angle {:.3} deg",
                self.rows.len() - self.failed_count(),
                self.failed_count(),
                m.psnr,
                m.ssim,
                m.ms_ssim,
                m.color_angle
            ),
            None => format!("all {} images failed", self.rows.len()),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs `enhancer` over every pair in order; a failing image yields a failed
/// row and evaluation continues.
pub fn evaluate_dataset(enhancer: &impl Enhancer, pairs: &[ImagePair], mode: SsimMode) -> MetricReport {
    let rows = pairs
        .iter()
        .map(|p| {
            let res = enhancer.enhance(&p.low).and_then(|out| score(&p.name, &out, &p.high, mode));
            res.unwrap_or_else(|e| {
                log::warn!("{}: {e}", p.name);
                MetricRow {
                    filename: p.name.clone(),
                    psnr: f64::nan(),
                    ssim: f64::nan(),
                    ms_ssim: f64::nan(),
                    color_angle: f64::nan(),
                    flags: Vec::new(),
                    failure: Some(e.to_string()),
                }
            })
        })
        .collect();
    MetricReport { mode, rows }
}
