//! Stage one: a five-level Unet that maps a low-light image to its curve
//! map `G`.
//!
//! Each level runs two 3x3 convolutions with LReLU. The encoder halves the
//! resolution with average pooling; the decoder upsamples (nearest 2x plus a
//! 3x3 conv), concatenates the matching encoder output and refines. A final
//! 3x3 conv to three channels and a sigmoid produce `G`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::nn::{conv, lrelu, upsample_conv, LRELU_SLOPE};
use crate::params::{Bound, ParamStore, StoreBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const NET1_LEVELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Net1Config {
    pub base_channels: usize,
    pub levels: usize,
    pub lrelu_slope: f64,
}

impl Default for Net1Config {
    fn default() -> Self {
        Net1Config { base_channels: 16, levels: NET1_LEVELS, lrelu_slope: LRELU_SLOPE }
    }
}

impl Net1Config {
    pub fn with_base(base_channels: usize) -> Self {
        Net1Config { base_channels, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels != NET1_LEVELS {
            bail!(Config, "network one has exactly {NET1_LEVELS} levels, got {}", self.levels);
        }
        if self.base_channels < 4 {
            bail!(Config, "network one needs base_channels >= 4, got {}", self.base_channels);
        }
        Ok(())
    }

    /// Required divisor of input height and width.
    pub fn multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn init_weights<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut b = StoreBuilder::new(seed);
        let mut cin = 3;
        for l in 1..=self.levels {
            let c = self.channels(l);
            b.conv(&format!("net1/enc{l}/conv1"), cin, c, 3, 1.0)?;
            b.conv(&format!("net1/enc{l}/conv2"), c, c, 3, 1.0)?;
            cin = c;
        }
        for l in (1..self.levels).rev() {
            let c = self.channels(l);
            b.conv(&format!("net1/dec{l}/up"), self.channels(l + 1), c, 3, 1.0)?;
            b.conv(&format!("net1/dec{l}/conv1"), 2 * c, c, 3, 1.0)?;
            b.conv(&format!("net1/dec{l}/conv2"), c, c, 3, 1.0)?;
        }
        b.conv("net1/out", self.base_channels, 3, 3, 0.1)?;
        Ok(b.finish())
    }

    /// Pre-sigmoid logits and the curve map for `image`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound<'_, T>, image: Var) -> Result<Var> {
        self.validate()?;
        let s = tape.shape(image);
        let m = self.multiple();
        if s.c != 3 || !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) || s.h == 0 || s.w == 0 {
            bail!(Dimension, "network one needs 3 channels and extents divisible by {m}, got {s}; reflect-pad first");
        }
        let slope = self.lrelu_slope;
        let mut skips = Vec::with_capacity(self.levels);
        let mut x = image;
        for l in 1..=self.levels {
            if l > 1 {
                x = tape.avgpool2(x)?;
            }
            x = conv(tape, p, &format!("net1/enc{l}/conv1"), x)?;
            x = lrelu(tape, x, slope);
            x = conv(tape, p, &format!("net1/enc{l}/conv2"), x)?;
            x = lrelu(tape, x, slope);
            skips.push(x);
        }
        for l in (1..self.levels).rev() {
            let up = upsample_conv(tape, p, &format!("net1/dec{l}/up"), x)?;
            let up = lrelu(tape, up, slope);
            let cat = tape.concat_channels(&[up, skips[l - 1]])?;
            x = conv(tape, p, &format!("net1/dec{l}/conv1"), cat)?;
            x = lrelu(tape, x, slope);
            x = conv(tape, p, &format!("net1/dec{l}/conv2"), x)?;
            x = lrelu(tape, x, slope);
        }
        let logits = conv(tape, p, "net1/out", x)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        alloc::vec![
            ("net1.base_channels".to_string(), self.base_channels.to_string()),
            ("net1.levels".to_string(), self.levels.to_string()),
            ("net1.lrelu_slope".to_string(), format!("{}", self.lrelu_slope)),
        ]
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.base_channels = crate::checkpoint::meta_parse(meta, "net1.base_channels")?.unwrap_or(cfg.base_channels);
        cfg.levels = crate::checkpoint::meta_parse(meta, "net1.levels")?.unwrap_or(cfg.levels);
        cfg.lrelu_slope = crate::checkpoint::meta_parse(meta, "net1.lrelu_slope")?.unwrap_or(cfg.lrelu_slope);
        cfg.validate()?;
        Ok(cfg)
    }
}
