//! Structural and loss ablations of the two-stage model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::augment::ImagePair;
use crate::error::{bail, Error, Result};
use crate::metrics::{evaluate_dataset, MetricReport, SsimMode};
use crate::net1::Net1Config;
use crate::net2::Net2Config;
use crate::pipeline::{Net1Model, Net2Model, Pipeline};
use crate::psi::FeatureExtractor;
use crate::tensor::Tensor;
use crate::train::{train_stage1, train_stage2, Quiet, Stage2Source, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    Net1Only,
    Net2WoG,
    Net1PlusNet2WoG,
    WoLs,
    WoLr2,
    WoLvgg,
    WoLc,
    WoLn,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::Net1Only,
        Variant::Net2WoG,
        Variant::Net1PlusNet2WoG,
        Variant::WoLs,
        Variant::WoLr2,
        Variant::WoLvgg,
        Variant::WoLc,
        Variant::WoLn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Net1Only => "net1_only",
            Variant::Net2WoG => "net2_wo_G",
            Variant::Net1PlusNet2WoG => "net1_plus_net2_wo_G",
            Variant::WoLs => "wo_Ls",
            Variant::WoLr2 => "wo_Lr2",
            Variant::WoLvgg => "wo_Lvgg",
            Variant::WoLc => "wo_Lc",
            Variant::WoLn => "wo_LN",
        }
    }

    fn uses_stage1(self) -> bool {
        self != Variant::Net2WoG
    }

    fn uses_stage2(self) -> bool {
        self != Variant::Net1Only
    }

    fn stage1_w_s(self, base: f64) -> f64 {
        if self == Variant::WoLs {
            0.0
        } else {
            base
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match Variant::ALL.iter().find(|v| v.name() == s) {
            Some(v) => Ok(*v),
            None => {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                bail!(Config, "unknown ablation variant {s:?}; expected one of {}", names.join(", "))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub net1: Net1Config,
    pub net2: Net2Config,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub ssim_mode: SsimMode,
    /// Weight-initialisation seed shared by every variant.
    pub init_seed: u64,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub variant: Variant,
    pub report: MetricReport,
    /// Mean total variation of `G` over the evaluation set, when `G` exists.
    pub g_total_variation: Option<f64>,
    pub pipeline: Pipeline,
}

/// Mean of `|dG/dx| + |dG/dy|` (forward differences) over all entries.
pub fn total_variation(g: &Tensor<f32>) -> f64 {
    let s = g.shape();
    let mut acc = 0.0f64;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = g.at(n, c, y, x) as f64;
                    if x + 1 < s.w {
                        acc += (g.at(n, c, y, x + 1) as f64 - v).abs();
                    }
                    if y + 1 < s.h {
                        acc += (g.at(n, c, y + 1, x) as f64 - v).abs();
                    }
                }
            }
        }
    }
    acc / s.numel().max(1) as f64
}

/// Trains variants in order, sharing stage-one results between variants that
/// use the same stage-one objective.
pub struct AblationSuite<'a> {
    pub config: AblationConfig,
    pub psi: &'a FeatureExtractor<f32>,
    stage1_cache: Vec<(u64, Net1Model)>,
}

impl<'a> AblationSuite<'a> {
    pub fn new(config: AblationConfig, psi: &'a FeatureExtractor<f32>) -> Self {
        AblationSuite { config, psi, stage1_cache: Vec::new() }
    }

    fn stage1(&mut self, train: &[ImagePair], w_s: f64) -> Result<Net1Model> {
        let key = w_s.to_bits();
        if let Some((_, m)) = self.stage1_cache.iter().find(|(k, _)| *k == key) {
            return Ok(m.clone());
        }
        let cfg = TrainConfig { w_s, ..self.config.stage1.clone() };
        let init = Net1Model::init(self.config.net1, self.config.init_seed)?;
        log::info!("ablation: training stage one (w_s = {w_s})");
        let m = train_stage1(train, &[], init, None, &cfg, &mut Quiet)?.last;
        self.stage1_cache.push((key, m.clone()));
        Ok(m)
    }

    pub fn run(&mut self, variant: Variant, train: &[ImagePair], eval: &[ImagePair]) -> Result<AblationResult> {
        let c = self.config.clone();
        let net1 = if variant.uses_stage1() { Some(self.stage1(train, variant.stage1_w_s(c.stage1.w_s))?) } else { None };
        let pipeline = if variant.uses_stage2() {
            let mut n2cfg = c.net2;
            let mut s2 = c.stage2.clone();
            match variant {
                Variant::Net2WoG | Variant::Net1PlusNet2WoG => n2cfg.use_guidance = false,
                Variant::WoLn => n2cfg.use_layer_norm = false,
                Variant::WoLr2 => s2.w_r2 = 0.0,
                Variant::WoLvgg => s2.w_vgg = 0.0,
                Variant::WoLc => s2.w_c = 0.0,
                _ => {}
            }
            let source = match &net1 {
                Some(n1) => Stage2Source::Curve(n1),
                None => Stage2Source::Raw,
            };
            let init = Net2Model::init(n2cfg, c.init_seed)?;
            log::info!("ablation: training stage two for {variant}");
            let n2 = train_stage2(train, &[], source, init, None, self.psi, &s2, &mut Quiet)?.last;
            match net1 {
                Some(n1) => Pipeline::Decoupled(n1, n2),
                None => Pipeline::Direct(n2),
            }
        } else {
            Pipeline::Stage1(net1.expect("stage-one variants train network one"))
        };
        let report = evaluate_dataset(&pipeline, eval, c.ssim_mode);
        let g_total_variation = match &pipeline {
            Pipeline::Stage1(n1) | Pipeline::Decoupled(n1, _) => {
                let mut tv = 0.0;
                for p in eval {
                    tv += total_variation(n1.curve_map(&p.low)?.tensor());
                }
                Some(tv / eval.len().max(1) as f64)
            }
            Pipeline::Direct(_) => None,
        };
        Ok(AblationResult { variant, report, g_total_variation, pipeline })
    }
}

/// Trains and evaluates one variant from scratch.
pub fn run_ablation(
    variant: Variant,
    train: &[ImagePair],
    eval: &[ImagePair],
    config: &AblationConfig,
    psi: &FeatureExtractor<f32>,
) -> Result<AblationResult> {
    AblationSuite::new(config.clone(), psi).run(variant, train, eval)
}

/// Table of means, one line per result.
pub fn summary_table(results: &[AblationResult]) -> String {
    let mut s = String::from("variant,psnr_db,ssim,ms_ssim,color_angle_deg,g_tv\n");
    for r in results {
        let tv = r.g_total_variation.map(|v| format!("{v:.6}")).unwrap_or_default();
        match r.report.means() {
            Some(m) => s.push_str(&format!(
                "{},{:.4},{:.6},{:.6},{:.4},{tv}\n",
                r.variant, m.psnr, m.ssim, m.ms_ssim, m.color_angle
            )),
            None => s.push_str(&format!("{},,,,,{tv}\n", r.variant)),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("wo_everything".parse::<Variant>(), Err(Error::Config(_))));
    }

    #[test]
    fn total_variation_of_step() {
        let flat = Tensor::<f32>::full([1, 3, 4, 4], 0.5);
        assert_eq!(total_variation(&flat), 0.0);
        let step = Tensor::<f32>::from_fn([1, 1, 2, 2], |_, _, _, x| x as f32);
        assert!((total_variation(&step) - 0.5).abs() < 1e-12);
    }
}
