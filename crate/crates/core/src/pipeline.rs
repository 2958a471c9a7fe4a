//! Trained models and end-to-end inference with transparent padding.

use alloc::string::ToString;

use crate::augment::{crop_to, reflect_pad};
use crate::checkpoint::{Checkpoint, Meta};
use crate::curve::{apply_curve_var, CurveMap};
use crate::error::{bail, Result};
use crate::metrics::Enhancer;
use crate::net1::Net1Config;
use crate::net2::Net2Config;
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const NET1_KIND: &str = "net1";
pub const NET2_KIND: &str = "net2";

#[derive(Clone, Debug, PartialEq)]
pub struct Net1Model {
    pub config: Net1Config,
    pub weights: ParamStore<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net2Model {
    pub config: Net2Config,
    pub weights: ParamStore<f32>,
}

fn check_kind(ck: &Checkpoint, want: &str) -> Result<()> {
    match ck.meta("kind") {
        Some(k) if k != want => bail!(Shape, "checkpoint holds {k} weights, expected {want}"),
        _ => Ok(()),
    }
}

impl Net1Model {
    pub fn init(config: Net1Config, seed: u64) -> Result<Self> {
        Ok(Net1Model { config, weights: config.init_weights(seed)? })
    }

    /// Checks every expected tensor is present with the right extents.
    pub fn new(config: Net1Config, weights: &ParamStore<f32>) -> Result<Self> {
        let template = config.init_weights::<f32>(0)?;
        Ok(Net1Model { config, weights: weights.conform_to(&template)? })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        check_kind(ck, NET1_KIND)?;
        Self::new(Net1Config::from_meta(&ck.meta)?, &ck.tensors)
    }

    pub fn to_checkpoint(&self, extra: Meta) -> Checkpoint {
        let mut meta = Meta::new();
        meta.push(("kind".to_string(), NET1_KIND.to_string()));
        meta.extend(self.config.to_meta());
        meta.extend(extra);
        Checkpoint::new(self.weights.clone(), meta)
    }

    /// Curve map for an image whose extents are already a multiple of 16.
    pub fn curve_map_padded(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.weights.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let g = self.config.forward(&mut tape, &p, x)?;
        Ok(tape.value(g).clone())
    }

    /// Curve map for arbitrary extents.
    pub fn curve_map(&self, image: &Tensor<f32>) -> Result<CurveMap<f32>> {
        let (padded, ext) = reflect_pad(image, self.config.multiple())?;
        CurveMap::new(crop_to(&self.curve_map_padded(&padded)?, ext)?)
    }
}

impl Net2Model {
    pub fn init(config: Net2Config, seed: u64) -> Result<Self> {
        Ok(Net2Model { config, weights: config.init_weights(seed)? })
    }

    pub fn new(config: Net2Config, weights: &ParamStore<f32>) -> Result<Self> {
        let template = config.init_weights::<f32>(0)?;
        Ok(Net2Model { config, weights: weights.conform_to(&template)? })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        check_kind(ck, NET2_KIND)?;
        Self::new(Net2Config::from_meta(&ck.meta)?, &ck.tensors)
    }

    pub fn to_checkpoint(&self, extra: Meta) -> Checkpoint {
        let mut meta = Meta::new();
        meta.push(("kind".to_string(), NET2_KIND.to_string()));
        meta.extend(self.config.to_meta());
        meta.extend(extra);
        Checkpoint::new(self.weights.clone(), meta)
    }

    /// Restores `input`, guided by `guide` when the model uses guidance.
    /// Extents must already be a multiple of [`Net2Config::multiple`].
    pub fn restore_padded(&self, input: &Tensor<f32>, guide: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.weights.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let g = guide.map(|g| tape.constant(g.clone()));
        let out = self.config.forward(&mut tape, &p, x, g)?;
        Ok(tape.value(out.image).clone())
    }
}

/// Everything one inference pass produces, cropped to the input extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Intermediates {
    pub g: Option<Tensor<f32>>,
    pub ie1: Option<Tensor<f32>>,
    pub output: Tensor<f32>,
}

/// The composed enhancer in one of its structural variants.
#[derive(Clone, Debug, PartialEq)]
pub enum Pipeline {
    /// Network one and the curve mapping only.
    Stage1(Net1Model),
    /// Network one, curve mapping, then network two (guided or not).
    Decoupled(Net1Model, Net2Model),
    /// Network two applied straight to the low-light input.
    Direct(Net2Model),
}

impl Pipeline {
    fn multiple(&self) -> usize {
        match self {
            Pipeline::Stage1(n1) => n1.config.multiple(),
            Pipeline::Decoupled(n1, n2) => n1.config.multiple().max(n2.config.multiple()),
            Pipeline::Direct(n2) => n2.config.multiple(),
        }
    }

    /// Intermediates on an already padded image.
    pub fn run_padded(&self, low: &Tensor<f32>) -> Result<Intermediates> {
        let stage1 = |n1: &Net1Model| -> Result<(Tensor<f32>, Tensor<f32>)> {
            let mut tape = Tape::new();
            let p = n1.weights.bind(&mut tape, false);
            let x = tape.constant(low.clone());
            let g = n1.config.forward(&mut tape, &p, x)?;
            let ie1 = apply_curve_var(&mut tape, x, g)?;
            Ok((tape.value(g).clone(), tape.value(ie1).clone()))
        };
        match self {
            Pipeline::Stage1(n1) => {
                let (g, ie1) = stage1(n1)?;
                Ok(Intermediates { g: Some(g), ie1: Some(ie1.clone()), output: ie1 })
            }
            Pipeline::Decoupled(n1, n2) => {
                let (g, ie1) = stage1(n1)?;
                let output = n2.restore_padded(&ie1, Some(&g))?;
                Ok(Intermediates { g: Some(g), ie1: Some(ie1), output })
            }
            Pipeline::Direct(n2) if n2.config.use_guidance => {
                bail!(Config, "network two applied directly has no curve map to be guided by")
            }
            Pipeline::Direct(n2) => Ok(Intermediates { g: None, ie1: None, output: n2.restore_padded(low, None)? }),
        }
    }

    /// Reflect-pads to the required multiple, runs, and crops back.
    pub fn run(&self, low: &Tensor<f32>) -> Result<Intermediates> {
        let s = low.shape();
        if s.n != 1 || s.c != 3 {
            bail!(Dimension, "expected one RGB image, got {s}");
        }
        let (padded, ext) = reflect_pad(low, self.multiple())?;
        let r = self.run_padded(&padded)?;
        let crop = |t: Option<Tensor<f32>>| t.map(|t| crop_to(&t, ext)).transpose();
        let out = Intermediates { g: crop(r.g)?, ie1: crop(r.ie1)?, output: crop_to(&r.output, ext)? };
        out.output.ensure_finite("enhanced image")?;
        Ok(out)
    }
}

impl Enhancer for Pipeline {
    fn enhance(&self, low: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.run(low)?.output)
    }
}
