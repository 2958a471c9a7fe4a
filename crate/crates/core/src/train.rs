//! Two-phase training: curve estimation first, then fidelity restoration with
//! the curve network frozen.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::augment::{reflect_pad, EpochSampler, ImagePair, PatchBatch};
use crate::curve::apply_curve_var;
use crate::error::{bail, Error, Result};
use crate::losses::{loss_total1, loss_total2, Stage2Weights};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::pipeline::{Net1Model, Net2Model};
use crate::psi::FeatureExtractor;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "1" => Ok(Phase::One),
            "two" | "2" => Ok(Phase::Two),
            _ => bail!(Config, "unknown phase {s:?} (expected one or two)"),
        }
    }
}

impl core::fmt::Display for Phase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Phase::One => "one",
            Phase::Two => "two",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub batch: usize,
    pub patch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub w_s: f64,
    pub w_r2: f64,
    pub w_vgg: f64,
    pub w_c: f64,
    pub seed: u64,
    /// Zero means `ceil(pairs / batch)`.
    pub steps_per_epoch: usize,
}

impl TrainConfig {
    pub fn phase_one() -> Self {
        TrainConfig {
            phase: Phase::One,
            batch: 10,
            patch: 48,
            epochs: 2000,
            lr: 1e-4,
            w_s: 20.0,
            w_r2: 1.0,
            w_vgg: 1.0,
            w_c: 0.2,
            seed: 0,
            steps_per_epoch: 0,
        }
    }

    pub fn phase_two() -> Self {
        TrainConfig { phase: Phase::Two, batch: 8, patch: 256, epochs: 1000, ..Self::phase_one() }
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::One => Self::phase_one(),
            Phase::Two => Self::phase_two(),
        }
    }

    pub fn stage2_weights(&self) -> Stage2Weights {
        Stage2Weights { r2: self.w_r2, vgg: self.w_vgg, color: self.w_c }
    }

    pub fn steps_for(&self, pairs: usize) -> usize {
        if self.steps_per_epoch > 0 {
            self.steps_per_epoch
        } else {
            pairs.div_ceil(self.batch.max(1))
        }
    }

    pub const KEYS: [&'static str; 11] =
        ["phase", "batch", "patch", "epochs", "lr", "w_s", "w_r2", "w_vgg", "w_c", "seed", "steps_per_epoch"];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "phase" => self.phase = value.trim().parse()?,
            "batch" => self.batch = p(key, value)?,
            "patch" => self.patch = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "w_s" => self.w_s = p(key, value)?,
            "w_r2" => self.w_r2 = p(key, value)?,
            "w_vgg" => self.w_vgg = p(key, value)?,
            "w_c" => self.w_c = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = p(key, value)?,
            _ => bail!(Config, "unknown training key {key:?}"),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let v = |k: &str, s: String| (k.to_string(), s);
        alloc::vec![
            v("phase", self.phase.to_string()),
            v("batch", self.batch.to_string()),
            v("patch", self.patch.to_string()),
            v("epochs", self.epochs.to_string()),
            v("lr", format!("{}", self.lr)),
            v("w_s", format!("{}", self.w_s)),
            v("w_r2", format!("{}", self.w_r2)),
            v("w_vgg", format!("{}", self.w_vgg)),
            v("w_c", format!("{}", self.w_c)),
            v("seed", self.seed.to_string()),
            v("steps_per_epoch", self.steps_per_epoch.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.patch == 0 {
            bail!(Config, "batch and patch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        for (k, w) in [("w_s", self.w_s), ("w_r2", self.w_r2), ("w_vgg", self.w_vgg), ("w_c", self.w_c)] {
            if !(w >= 0.0 && w.is_finite()) {
                bail!(Config, "{k} must be a non-negative number, got {w}");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl EpochRecord {
    /// The loss used for model selection.
    pub fn selection_loss(&self) -> f64 {
        self.val_loss.unwrap_or(self.train_loss)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
}

/// State handed to the observer at the end of each epoch.
pub struct EpochSnapshot<'a> {
    pub record: &'a EpochRecord,
    pub weights: &'a ParamStore<f32>,
    pub adam: &'a AdamState<f32>,
    pub improved: bool,
}

/// Hooks for logging and persistence. Errors abort training.
pub trait TrainObserver {
    fn on_step(&mut self, _step: usize, _loss: f64) {}

    fn on_epoch(&mut self, _snapshot: &EpochSnapshot<'_>) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Quiet;

impl TrainObserver for Quiet {}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<M> {
    pub last: M,
    pub best: M,
    /// `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub adam: AdamState<f32>,
    pub history: History,
}

fn prepare(pairs: &[ImagePair], patch: usize) -> Result<Vec<ImagePair>> {
    if pairs.is_empty() {
        bail!(Dataset, "training set is empty");
    }
    pairs.iter().map(|p| p.padded_to(patch)).collect()
}

fn finite(loss: f64, step: usize) -> Result<f64> {
    if !loss.is_finite() {
        bail!(NonFinite, "training loss became {loss} at step {step}; aborted, previous checkpoint kept");
    }
    Ok(loss)
}

/// Last weights, best weights, best epoch, optimizer state and history.
type LoopResult = (ParamStore<f32>, ParamStore<f32>, Option<usize>, AdamState<f32>, History);

/// Shared epoch loop. `step` consumes one batch and returns the loss and the
/// gradients of every trainable tensor; `validate` scores held-out data.
fn run_loop(
    train: &[ImagePair],
    cfg: &TrainConfig,
    mut weights: ParamStore<f32>,
    adam: Option<AdamState<f32>>,
    observer: &mut dyn TrainObserver,
    mut step: impl FnMut(&ParamStore<f32>, &PatchBatch) -> Result<(f64, Vec<Tensor<f32>>)>,
    mut validate: impl FnMut(&ParamStore<f32>) -> Result<Option<f64>>,
) -> Result<LoopResult> {
    cfg.validate()?;
    let train = prepare(train, cfg.patch)?;
    let mut adam = adam.unwrap_or_else(|| AdamState::new(&weights, AdamConfig::with_lr(cfg.lr)));
    let mut sampler = EpochSampler::new(train.len(), cfg.seed)?;
    let steps = cfg.steps_for(train.len());
    let mut history = History::default();
    let mut best = weights.clone();
    let mut best_epoch = None;
    let mut best_loss = f64::INFINITY;
    let mut global = 0;
    for epoch in 1..=cfg.epochs {
        sampler.start_epoch();
        let mut sum = 0.0;
        for _ in 0..steps {
            let batch = sampler.next_batch(&train, cfg.patch, cfg.batch)?;
            let (loss, grads) = step(&weights, &batch)?;
            let loss = finite(loss, global)?;
            adam.step(&mut weights, &grads)?;
            history.step_losses.push(loss);
            observer.on_step(global, loss);
            global += 1;
            sum += loss;
        }
        let record = EpochRecord { epoch, train_loss: sum / steps.max(1) as f64, val_loss: validate(&weights)? };
        let sel = record.selection_loss();
        let improved = sel < best_loss;
        if improved {
            best_loss = sel;
            best = weights.clone();
            best_epoch = Some(epoch);
        }
        log::info!(
            "epoch {epoch}/{}: train {:.6}{}",
            cfg.epochs,
            record.train_loss,
            record.val_loss.map(|v| format!(", val {v:.6}")).unwrap_or_default()
        );
        observer.on_epoch(&EpochSnapshot { record: &record, weights: &weights, adam: &adam, improved })?;
        history.epochs.push(record);
    }
    Ok((weights, best, best_epoch, adam, history))
}

/// Loss and gradients of one stage-one batch.
pub fn stage1_step(model: &Net1Model, batch: &PatchBatch, w_s: f64) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let p = model.weights.bind(&mut tape, true);
    let x = tape.constant(batch.low.clone());
    let t = tape.constant(batch.high.clone());
    let g = model.config.forward(&mut tape, &p, x)?;
    let loss = loss_total1(&mut tape, x, g, t, w_s)?;
    let value = tape.item(loss.total)?.into();
    let grads = tape.backward(loss.total)?;
    Ok((value, p.gradients(&grads)))
}

/// Validation loss of one full image, reflect-padded and scored on the
/// original extents.
fn stage1_val(model: &Net1Model, pair: &ImagePair, w_s: f64) -> Result<f64> {
    let (padded, (h, w)) = reflect_pad(&pair.low, model.config.multiple())?;
    let mut tape = Tape::new();
    let p = model.weights.bind(&mut tape, false);
    let xp = tape.constant(padded);
    let g = model.config.forward(&mut tape, &p, xp)?;
    let g = tape.crop(g, 0, 0, h, w)?;
    let x = tape.constant(pair.low.clone());
    let t = tape.constant(pair.high.clone());
    let loss = loss_total1(&mut tape, x, g, t, w_s)?;
    Ok(tape.item(loss.total)?.into())
}

fn mean_over<F: FnMut(&ImagePair) -> Result<f64>>(pairs: &[ImagePair], mut f: F) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut s = 0.0;
    for p in pairs {
        s += f(p)?;
    }
    Ok(Some(s / pairs.len() as f64))
}

/// Trains network one from `model`; `val` may be empty, in which case the
/// training loss selects the best epoch.
pub fn train_stage1(
    train: &[ImagePair],
    val: &[ImagePair],
    model: Net1Model,
    adam: Option<AdamState<f32>>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<Net1Model>> {
    if cfg.phase != Phase::One {
        bail!(Config, "stage one needs phase one, got {}", cfg.phase);
    }
    let config = model.config;
    let wrap = |w: &ParamStore<f32>| Net1Model { config, weights: w.clone() };
    let (last, best, best_epoch, adam, history) = run_loop(
        train,
        cfg,
        model.weights.clone(),
        adam,
        observer,
        |w, b| stage1_step(&wrap(w), b, cfg.w_s),
        |w| {
            let m = wrap(w);
            mean_over(val, |p| stage1_val(&m, p, cfg.w_s))
        },
    )?;
    Ok(TrainOutcome { last: wrap(&last), best: wrap(&best), best_epoch, adam, history })
}

/// What network two sees as input.
#[derive(Clone, Copy, Debug)]
pub enum Stage2Source<'a> {
    /// The frozen stage-one output and its curve map.
    Curve(&'a Net1Model),
    /// The low-light image itself, with no curve map.
    Raw,
}

/// Result of one stage-two batch, including the (always zero) gradients of
/// the frozen stage-one tensors.
pub struct Stage2Step {
    pub loss: f64,
    pub net2_grads: Vec<Tensor<f32>>,
    pub net1_grads: Vec<Tensor<f32>>,
}

/// Builds stage-two inputs on `tape`. Stage-one tensors are bound as
/// constants, so no gradient reaches them.
fn stage2_inputs(tape: &mut Tape<f32>, source: Stage2Source<'_>, low: &Tensor<f32>) -> Result<(Var, Option<Var>, Vec<Var>)> {
    let x = tape.constant(low.clone());
    match source {
        Stage2Source::Raw => Ok((x, None, Vec::new())),
        Stage2Source::Curve(n1) => {
            let p1 = n1.weights.bind(tape, false);
            let g = n1.config.forward(tape, &p1, x)?;
            let ie1 = apply_curve_var(tape, x, g)?;
            Ok((ie1, Some(g), p1.vars().to_vec()))
        }
    }
}

pub fn stage2_step(
    source: Stage2Source<'_>,
    model: &Net2Model,
    psi: &FeatureExtractor<f32>,
    batch: &PatchBatch,
    w: Stage2Weights,
) -> Result<Stage2Step> {
    let mut tape = Tape::new();
    let (input, g, net1_vars) = stage2_inputs(&mut tape, source, &batch.low)?;
    let p2 = model.weights.bind(&mut tape, true);
    let out = model.config.forward(&mut tape, &p2, input, g)?;
    let t = tape.constant(batch.high.clone());
    let loss = loss_total2(&mut tape, psi, out.image, t, w)?;
    let value = tape.item(loss.total)?.into();
    let grads = tape.backward(loss.total)?;
    Ok(Stage2Step {
        loss: value,
        net2_grads: p2.gradients(&grads),
        net1_grads: net1_vars.iter().map(|&v| grads.wrt(v)).collect(),
    })
}

fn stage2_val(source: Stage2Source<'_>, model: &Net2Model, psi: &FeatureExtractor<f32>, pair: &ImagePair, w: Stage2Weights) -> Result<f64> {
    let mut m = model.config.multiple().max(1 << psi.spec().downsamples());
    if let Stage2Source::Curve(n1) = source {
        m = m.max(n1.config.multiple());
    }
    let (low, _) = reflect_pad(&pair.low, m)?;
    let (high, _) = reflect_pad(&pair.high, m)?;
    let mut tape = Tape::new();
    let (input, g, _) = stage2_inputs(&mut tape, source, &low)?;
    let p2 = model.weights.bind(&mut tape, false);
    let out = model.config.forward(&mut tape, &p2, input, g)?;
    let t = tape.constant(high);
    let loss = loss_total2(&mut tape, psi, out.image, t, w)?;
    Ok(tape.item(loss.total)?.into())
}

/// Trains network two with the stage-one network frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2(
    train: &[ImagePair],
    val: &[ImagePair],
    source: Stage2Source<'_>,
    model: Net2Model,
    adam: Option<AdamState<f32>>,
    psi: &FeatureExtractor<f32>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<Net2Model>> {
    if cfg.phase != Phase::Two {
        bail!(Config, "stage two needs phase two, got {}", cfg.phase);
    }
    if matches!(source, Stage2Source::Raw) && model.config.use_guidance {
        bail!(Config, "network two without a stage-one source cannot use guidance");
    }
    let config = model.config;
    let w = cfg.stage2_weights();
    let wrap = |p: &ParamStore<f32>| Net2Model { config, weights: p.clone() };
    let (last, best, best_epoch, adam, history) = run_loop(
        train,
        cfg,
        model.weights.clone(),
        adam,
        observer,
        |p, b| {
            let s = stage2_step(source, &wrap(p), psi, b, w)?;
            Ok((s.loss, s.net2_grads))
        },
        |p| {
            let m = wrap(p);
            mean_over(val, |pair| stage2_val(source, &m, psi, pair, w))
        },
    )?;
    Ok(TrainOutcome { last: wrap(&last), best: wrap(&best), best_epoch, adam, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net1::Net1Config;
    use crate::synthetic::two_region;

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let m = Net1Model::init(Net1Config::with_base(4), 1).unwrap();
        let cfg = TrainConfig { epochs: 0, batch: 1, patch: 16, ..TrainConfig::phase_one() };
        let out = train_stage1(&[two_region(16, 16).unwrap()], &[], m.clone(), None, &cfg, &mut Quiet).unwrap();
        assert_eq!(out.last, m);
        assert_eq!(out.best, m);
        assert!(out.history.epochs.is_empty() && out.best_epoch.is_none());
    }

    #[test]
    fn config_keys_round_trip() {
        let mut c = TrainConfig::phase_two();
        for (k, v) in TrainConfig::phase_one().entries() {
            c.set(&k, &v).unwrap();
        }
        assert_eq!(c, TrainConfig::phase_one());
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("batch", "x").is_err());
        assert_eq!(TrainConfig::KEYS.len(), c.entries().len());
        assert_eq!(TrainConfig::phase_two().patch, 256);
    }

    #[test]
    fn wrong_phase_rejected() {
        let m = Net1Model::init(Net1Config::with_base(4), 1).unwrap();
        let cfg = TrainConfig::phase_two();
        assert!(train_stage1(&[two_region(16, 16).unwrap()], &[], m, None, &cfg, &mut Quiet).is_err());
    }
}
