//! Frozen convolutional feature pyramid behind the perceptual loss.
//!
//! The default layout follows the depth-to-tap shape of VGG-19 (five stages
//! of 2, 2, 4, 4, 4 convolutions, tapped after the last ReLU of stage five)
//! at reduced widths. Weights come either from a checkpoint with names
//! `psi/stage{s}/conv{k}/{kernel|bias}` or from a seeded He-uniform draw.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::params::{ParamStore, StoreBuilder};
use crate::scalar::Scalar;
use crate::tape::{eval_with, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub out_channels: usize,
    pub convs: usize,
    /// 2x2 average pooling after the stage.
    pub downsample: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WeightSource {
    Seeded(u64),
    File(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureExtractorSpec {
    pub stages: Vec<StageSpec>,
    pub tap_stage: usize,
    pub weight_source: WeightSource,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        let st = |out_channels, convs, downsample| StageSpec { out_channels, convs, downsample };
        FeatureExtractorSpec {
            stages: vec![st(16, 2, true), st(32, 2, true), st(64, 4, true), st(128, 4, true), st(128, 4, false)],
            tap_stage: 4,
            weight_source: WeightSource::Seeded(7),
        }
    }
}

impl FeatureExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tap_stage >= self.stages.len() {
            bail!(Config, "tap stage {} but only {} stages", self.tap_stage, self.stages.len());
        }
        if self.stages.iter().any(|s| s.convs == 0 || s.out_channels == 0) {
            bail!(Config, "every feature stage needs at least one conv and one channel");
        }
        Ok(())
    }

    /// Downsamplings applied before the tap output.
    /// Reads the stage layout off a weight set named
    /// `psi/stage{s}/conv{k}/{kernel|bias}`: every stage present is used, the
    /// last is tapped, and all earlier stages downsample.
    pub fn infer<T: Scalar>(weights: &ParamStore<T>, weight_source: WeightSource) -> Result<Self> {
        let mut stages = Vec::new();
        loop {
            let s = stages.len() + 1;
            let mut convs = 0;
            let mut out_channels = 0;
            while let Some(k) = weights.get(&format!("psi/stage{s}/conv{}/kernel", convs + 1)) {
                out_channels = k.shape().n;
                convs += 1;
            }
            if convs == 0 {
                break;
            }
            stages.push(StageSpec { out_channels, convs, downsample: true });
        }
        let Some(last) = stages.last_mut() else {
            bail!(Config, "no psi/stage1/conv1/kernel tensor in the feature weights");
        };
        last.downsample = false;
        let spec = FeatureExtractorSpec { tap_stage: stages.len() - 1, stages, weight_source };
        spec.validate()?;
        Ok(spec)
    }

    pub fn downsamples(&self) -> usize {
        self.stages[..self.tap_stage].iter().filter(|s| s.downsample).count()
    }

    fn template<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut b = StoreBuilder::new(seed);
        let mut cin = 3;
        for (s, stage) in self.stages.iter().enumerate().take(self.tap_stage + 1) {
            for k in 0..stage.convs {
                b.conv(&format!("psi/stage{}/conv{}", s + 1, k + 1), cin, stage.out_channels, 3, 1.0)?;
                cin = stage.out_channels;
            }
        }
        Ok(b.finish())
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    spec: FeatureExtractorSpec,
    weights: ParamStore<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Builds from a seeded source. A file source must go through
    /// [`FeatureExtractor::from_weights`].
    pub fn new(spec: FeatureExtractorSpec) -> Result<Self> {
        match spec.weight_source {
            WeightSource::Seeded(seed) => {
                let weights = spec.template(seed)?;
                Ok(FeatureExtractor { spec, weights })
            }
            WeightSource::File(ref path) => {
                bail!(Config, "feature weights at {path} must be loaded from the checkpoint file")
            }
        }
    }

    /// Uses externally supplied weights; every name and extent the spec needs
    /// must be present.
    pub fn from_weights(spec: FeatureExtractorSpec, weights: &ParamStore<T>) -> Result<Self> {
        let template = spec.template::<T>(0)?;
        let weights = weights.conform_to(&template)?;
        Ok(FeatureExtractor { spec, weights })
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn weights(&self) -> &ParamStore<T> {
        &self.weights
    }

    /// Tap features of `image`; the extractor's own weights are constants.
    pub fn extract_var(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let s = tape.shape(image);
        let m = 1usize << self.spec.downsamples();
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            bail!(Dimension, "feature extractor needs extents divisible by {m}, got {s}");
        }
        let p = self.weights.bind(tape, false);
        let mut x = image;
        for (si, stage) in self.spec.stages.iter().enumerate().take(self.spec.tap_stage + 1) {
            for k in 0..stage.convs {
                x = crate::nn::conv(tape, &p, &format!("psi/stage{}/conv{}", si + 1, k + 1), x)?;
                x = tape.relu(x);
            }
            if stage.downsample && si < self.spec.tap_stage {
                x = tape.avgpool2(x)?;
            }
        }
        Ok(x)
    }

    pub fn extract(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        eval_with(&[image], |t, v| self.extract_var(t, v[0]))
    }
}
