//! Stage two: a residual Unet that restores appearance fidelity of the
//! stage-one output, guided by an encoder over the curve map `G`.
//!
//! Main and guidance encoders share the channel schedule, so their outputs
//! have identical extents at every scale. At each scale the two are
//! concatenated and mixed back to the scheduled width by a 1x1 convolution;
//! the mixed features feed both the next scale and the decoder skip. Four
//! residual blocks sit at the bottleneck. The output is
//! `sigmoid(head + logit(input))`, so an all-zero head reproduces the input.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::nn::{conv, layer_norm, lrelu, upsample_conv, LRELU_SLOPE};
use crate::params::{Bound, Init, ParamStore, StoreBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Inputs are clamped to `[SKIP_EPS, 1 - SKIP_EPS]` before the logit skip.
pub const SKIP_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Net2Config {
    pub base_channels: usize,
    pub scales: usize,
    pub residual_blocks: usize,
    pub lrelu_slope: f64,
    pub use_layer_norm: bool,
    pub use_guidance: bool,
}

impl Default for Net2Config {
    fn default() -> Self {
        Net2Config {
            base_channels: 32,
            scales: 4,
            residual_blocks: 4,
            lrelu_slope: LRELU_SLOPE,
            use_layer_norm: true,
            use_guidance: true,
        }
    }
}

/// Outputs of one forward pass. Feature lists are indexed by scale.
pub struct Net2Output {
    pub image: Var,
    pub main_features: Vec<Var>,
    pub guide_features: Vec<Var>,
}

impl Net2Config {
    pub fn with_base(base_channels: usize) -> Self {
        Net2Config { base_channels, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 1 || self.scales > 8 {
            bail!(Config, "network two scales must be in 1..=8, got {}", self.scales);
        }
        if self.base_channels < 1 {
            bail!(Config, "network two needs base_channels >= 1");
        }
        Ok(())
    }

    pub fn multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    fn channels(&self, scale: usize) -> usize {
        self.base_channels << (scale - 1)
    }

    fn block(&self, b: &mut StoreBuilder<impl Scalar>, prefix: &str, cin: usize, cout: usize, last_gain: f64, last_ln_scale: f64) -> Result<()> {
        b.conv(&format!("{prefix}/conv1"), cin, cout, 3, 1.0)?;
        if self.use_layer_norm {
            b.layer_norm(&format!("{prefix}/ln1"), cout, 1.0)?;
        }
        b.conv(&format!("{prefix}/conv2"), cout, cout, 3, last_gain)?;
        if self.use_layer_norm {
            b.layer_norm(&format!("{prefix}/ln2"), cout, last_ln_scale)?;
        }
        Ok(())
    }

    pub fn init_weights<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut b = StoreBuilder::new(seed);
        let branches: &[&str] = if self.use_guidance { &["main", "guide"] } else { &["main"] };
        for branch in branches {
            let mut cin = 3;
            for s in 1..=self.scales {
                let c = self.channels(s);
                self.block(&mut b, &format!("net2/{branch}/enc{s}"), cin, c, 1.0, 1.0)?;
                cin = c;
            }
        }
        if self.use_guidance {
            for s in 1..=self.scales {
                let c = self.channels(s);
                b.add(&format!("net2/main/enc{s}/mix/kernel"), &[c, 2 * c, 1, 1], Init::IdentityPlus { gain: 0.1 })?;
                b.add(&format!("net2/main/enc{s}/mix/bias"), &[c], Init::Zeros)?;
            }
        }
        let cb = self.channels(self.scales);
        for i in 1..=self.residual_blocks {
            // The block's last affine (or conv, without normalization) starts
            // at zero so each block begins as the identity.
            if self.use_layer_norm {
                self.block(&mut b, &format!("net2/res{i}"), cb, cb, 1.0, 0.0)?;
            } else {
                self.block(&mut b, &format!("net2/res{i}"), cb, cb, 0.0, 1.0)?;
            }
        }
        for s in (1..self.scales).rev() {
            let c = self.channels(s);
            b.conv(&format!("net2/dec{s}/up"), self.channels(s + 1), c, 3, 1.0)?;
            self.block(&mut b, &format!("net2/dec{s}"), 2 * c, c, 1.0, 1.0)?;
        }
        b.conv("net2/out", self.base_channels, 3, 3, 0.01)?;
        Ok(b.finish())
    }

    fn run_block<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound<'_, T>, prefix: &str, x: Var, final_act: bool) -> Result<Var> {
        let mut h = conv(tape, p, &format!("{prefix}/conv1"), x)?;
        if self.use_layer_norm {
            h = layer_norm(tape, p, &format!("{prefix}/ln1"), h)?;
        }
        h = lrelu(tape, h, self.lrelu_slope);
        h = conv(tape, p, &format!("{prefix}/conv2"), h)?;
        if self.use_layer_norm {
            h = layer_norm(tape, p, &format!("{prefix}/ln2"), h)?;
        }
        Ok(if final_act { lrelu(tape, h, self.lrelu_slope) } else { h })
    }

    /// `input` is the stage-one output (or the raw low-light image for the
    /// un-decoupled variant); `guide` is `G` and is ignored without guidance.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound<'_, T>, input: Var, guide: Option<Var>) -> Result<Net2Output> {
        self.validate()?;
        let s = tape.shape(input);
        let m = self.multiple();
        if s.c != 3 || !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) || s.h == 0 || s.w == 0 {
            bail!(Dimension, "network two needs 3 channels and extents divisible by {m}, got {s}");
        }
        let guide = if self.use_guidance {
            let Some(g) = guide else {
                bail!(Contract, "guided network two needs the curve map");
            };
            if tape.shape(g) != s {
                bail!(Dimension, "curve map {} vs image {s}", tape.shape(g));
            }
            Some(g)
        } else {
            None
        };

        let mut main_features = Vec::with_capacity(self.scales);
        let mut guide_features = Vec::new();
        let mut skips = Vec::with_capacity(self.scales);
        let mut x = input;
        let mut gx = guide;
        for sc in 1..=self.scales {
            if sc > 1 {
                x = tape.avgpool2(x)?;
                if let Some(g) = gx.as_mut() {
                    *g = tape.avgpool2(*g)?;
                }
            }
            x = self.run_block(tape, p, &format!("net2/main/enc{sc}"), x, true)?;
            main_features.push(x);
            if let Some(g) = gx.as_mut() {
                *g = self.run_block(tape, p, &format!("net2/guide/enc{sc}"), *g, true)?;
                guide_features.push(*g);
                let cat = tape.concat_channels(&[x, *g])?;
                x = conv(tape, p, &format!("net2/main/enc{sc}/mix"), cat)?;
            }
            skips.push(x);
        }
        for i in 1..=self.residual_blocks {
            let r = self.run_block(tape, p, &format!("net2/res{i}"), x, false)?;
            x = tape.add(x, r)?;
        }
        for sc in (1..self.scales).rev() {
            let up = upsample_conv(tape, p, &format!("net2/dec{sc}/up"), x)?;
            let up = lrelu(tape, up, self.lrelu_slope);
            let cat = tape.concat_channels(&[up, skips[sc - 1]])?;
            x = self.run_block(tape, p, &format!("net2/dec{sc}"), cat, true)?;
        }
        let head = conv(tape, p, "net2/out", x)?;
        let clamped = tape.clamp(input, T::from_f64(SKIP_EPS), T::from_f64(1.0 - SKIP_EPS));
        let skip = tape.logit(clamped);
        let pre = tape.add(head, skip)?;
        let image = tape.sigmoid(pre);
        Ok(Net2Output { image, main_features, guide_features })
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        alloc::vec![
            kv("net2.base_channels", self.base_channels.to_string()),
            kv("net2.scales", self.scales.to_string()),
            kv("net2.residual_blocks", self.residual_blocks.to_string()),
            kv("net2.lrelu_slope", format!("{}", self.lrelu_slope)),
            kv("net2.use_layer_norm", self.use_layer_norm.to_string()),
            kv("net2.use_guidance", self.use_guidance.to_string()),
        ]
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        use crate::checkpoint::meta_parse;
        let d = Self::default();
        let cfg = Net2Config {
            base_channels: meta_parse(meta, "net2.base_channels")?.unwrap_or(d.base_channels),
            scales: meta_parse(meta, "net2.scales")?.unwrap_or(d.scales),
            residual_blocks: meta_parse(meta, "net2.residual_blocks")?.unwrap_or(d.residual_blocks),
            lrelu_slope: meta_parse(meta, "net2.lrelu_slope")?.unwrap_or(d.lrelu_slope),
            use_layer_norm: meta_parse(meta, "net2.use_layer_norm")?.unwrap_or(d.use_layer_norm),
            use_guidance: meta_parse(meta, "net2.use_guidance")?.unwrap_or(d.use_guidance),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn img(side: usize, phase: usize) -> Tensor<f32> {
        Tensor::from_fn([1, 3, side, side], |_, c, y, x| 0.05 + 0.9 * ((c * 5 + y * 3 + x + phase) % 17) as f32 / 17.0)
    }

    fn run(cfg: &Net2Config, w: &ParamStore<f32>, x: &Tensor<f32>, g: &Tensor<f32>) -> Tensor<f32> {
        let mut tape = Tape::new();
        let p = w.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let gv = tape.constant(g.clone());
        let out = cfg.forward(&mut tape, &p, xv, Some(gv)).unwrap();
        tape.value(out.image).clone()
    }

    #[test]
    fn shape_and_range() {
        let cfg = Net2Config::with_base(4);
        let w = cfg.init_weights::<f32>(2).unwrap();
        let out = run(&cfg, &w, &img(32, 0), &img(32, 3));
        assert_eq!(out.shape(), Shape::new(1, 3, 32, 32));
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn residual_blocks_start_as_identity() {
        for use_layer_norm in [true, false] {
            let cfg = Net2Config { use_layer_norm, ..Net2Config::with_base(4) };
            let w = cfg.init_weights::<f64>(5).unwrap();
            let mut tape = Tape::<f64>::new();
            let p = w.bind(&mut tape, false);
            let x = tape.constant(Tensor::from_fn([1, 32, 4, 4], |_, c, y, x| (c as f64 - 3.0 * y as f64 + x as f64) * 0.1));
            let r = cfg.run_block(&mut tape, &p, "net2/res1", x, false).unwrap();
            let sum = tape.add(x, r).unwrap();
            assert_eq!(tape.value(sum), tape.value(x));
        }
    }

    #[test]
    fn guidance_toggle_changes_output() {
        let on = Net2Config::with_base(4);
        let off = Net2Config { use_guidance: false, ..on };
        let (x, g) = (img(16, 1), img(16, 7));
        let a = run(&on, &on.init_weights(3).unwrap(), &x, &g);
        let b = run(&off, &off.init_weights(3).unwrap(), &x, &g);
        assert_ne!(a, b);
        assert!(off.init_weights::<f32>(0).unwrap().iter().all(|e| !e.name.contains("guide") && !e.name.contains("mix")));
    }

    #[test]
    fn guidance_extents_match_main() {
        let cfg = Net2Config::with_base(4);
        let w = cfg.init_weights::<f32>(2).unwrap();
        let mut tape = Tape::new();
        let p = w.bind(&mut tape, false);
        let xv = tape.constant(img(32, 0));
        let gv = tape.constant(img(32, 2));
        let out = cfg.forward(&mut tape, &p, xv, Some(gv)).unwrap();
        assert_eq!(out.main_features.len(), cfg.scales);
        for (m, g) in out.main_features.iter().zip(&out.guide_features) {
            assert_eq!(tape.shape(*m), tape.shape(*g));
        }
    }

    #[test]
    fn extent_mismatch_rejected() {
        let cfg = Net2Config::with_base(4);
        let w = cfg.init_weights::<f32>(2).unwrap();
        let mut tape = Tape::new();
        let p = w.bind(&mut tape, false);
        let xv = tape.constant(img(16, 0));
        let gv = tape.constant(img(24, 0));
        assert!(cfg.forward(&mut tape, &p, xv, Some(gv)).is_err());
    }

    #[test]
    fn meta_round_trip() {
        let cfg = Net2Config { use_layer_norm: false, use_guidance: false, ..Net2Config::with_base(8) };
        assert_eq!(Net2Config::from_meta(&cfg.to_meta()).unwrap(), cfg);
    }
}
