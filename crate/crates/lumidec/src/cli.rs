//! The `lumidec` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lumidec_core::ablation::{summary_table, AblationConfig, AblationSuite, Variant};
use lumidec_core::augment::ImagePair;
use lumidec_core::checkpoint::{Checkpoint, Meta};
use lumidec_core::curve::{apply_uniform_gamma, extract_profile, profile_contrast, DEFAULT_GAMMAS};
use lumidec_core::metrics::SsimMode;
use lumidec_core::net1::Net1Config;
use lumidec_core::net2::Net2Config;
use lumidec_core::optim::AdamState;
use lumidec_core::params::ParamStore;
use lumidec_core::pipeline::{Net1Model, Net2Model, Pipeline};
use lumidec_core::psi::{FeatureExtractor, FeatureExtractorSpec, WeightSource};
use lumidec_core::train::{
    train_stage1, train_stage2, EpochSnapshot, History, Phase, Stage2Source, TrainConfig, TrainObserver,
};

use crate::config::{render, ConfigFile};
use crate::dataset::{load_dataset, parse_size, Layout};
use crate::error::{Error, Result};
use crate::eval::{evaluate_parallel, thread_cap};
use crate::files::{load_checkpoint, save_checkpoint, write_atomic};
use crate::image_io::{curve_map_image, load_png, save_png};

#[derive(Parser, Debug)]
#[command(name = "lumidec", version, about = "Two-stage low-light image enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train network one (curve estimation).
    Train1(Train1Args),
    /// Train network two (fidelity restoration) behind a frozen network one.
    Train2(Train2Args),
    /// Enhance one image.
    Enhance(EnhanceArgs),
    /// Score a model on a paired dataset.
    Eval(EvalArgs),
    /// Train and score structural and loss ablations.
    Ablate(AblateArgs),
    /// Compare uniform gamma curves with a learned curve map on one image.
    Curves(CurvesArgs),
    /// Print the contents of a checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Training dataset root holding the low-light and normal-light directories.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Validation dataset root; when given, it selects the best epoch.
    #[arg(long)]
    pub val_dataset: Option<PathBuf>,
    /// Name of the low-light directory under each root.
    #[arg(long, default_value = "low")]
    pub low_dir: String,
    /// Name of the normal-light directory under each root.
    #[arg(long, default_value = "high")]
    pub high_dir: String,
    /// Resize both images of every pair to WxH after loading.
    #[arg(long, value_name = "WxH")]
    pub resize: Option<String>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Key = value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for checkpoints and the loss history.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run, including its optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write the latest checkpoint every N epochs.
    #[arg(long, default_value_t = 1)]
    pub save_every: usize,
    /// Seed for weight initialisation [default: 0].
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Sampling seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [default: 0.0001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Steps per epoch; 0 means ceil(pairs / batch) [default: 0].
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Train1Args {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of epochs [default: 2000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per batch [default: 10].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Square patch side [default: 48].
    #[arg(long)]
    pub patch: Option<usize>,
    /// Weight of the smoothness term [default: 20].
    #[arg(long)]
    pub w_s: Option<f64>,
    /// Channels at the first level [default: 16].
    #[arg(long)]
    pub base_channels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Train2Args {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Frozen network-one checkpoint; omit only together with --no-guidance to train on raw inputs.
    #[arg(long)]
    pub net1: Option<PathBuf>,
    /// Number of epochs [default: 1000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per batch [default: 8].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Square patch side [default: 256].
    #[arg(long)]
    pub patch: Option<usize>,
    /// Weight of the pixel MSE term [default: 1].
    #[arg(long)]
    pub w_r2: Option<f64>,
    /// Weight of the perceptual term [default: 1].
    #[arg(long)]
    pub w_vgg: Option<f64>,
    /// Weight of the colour-angle term [default: 0.2].
    #[arg(long)]
    pub w_c: Option<f64>,
    /// Channels at the first scale [default: 32].
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Encoder scales [default: 4].
    #[arg(long)]
    pub scales: Option<usize>,
    /// Residual blocks in the bottleneck [default: 4].
    #[arg(long)]
    pub residual_blocks: Option<usize>,
    /// Drop layer normalization.
    #[arg(long)]
    pub no_layer_norm: bool,
    /// Drop the curve-map guidance encoder.
    #[arg(long)]
    pub no_guidance: bool,
    /// Feature-extractor weights in checkpoint format; seeded weights are used otherwise.
    #[arg(long)]
    pub psi_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    /// Low-light 8-bit RGB PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Network-one checkpoint.
    #[arg(long)]
    pub net1: Option<PathBuf>,
    /// Network-two checkpoint; without it the stage-one result is written.
    #[arg(long)]
    pub net2: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the curve map as a grayscale PNG (darker means stronger brightening).
    #[arg(long)]
    pub emit_g: Option<PathBuf>,
    /// Also write the stage-one result as a PNG.
    #[arg(long)]
    pub emit_intermediate: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Network-one checkpoint.
    #[arg(long)]
    pub net1: Option<PathBuf>,
    /// Network-two checkpoint.
    #[arg(long)]
    pub net2: Option<PathBuf>,
    /// Test dataset root.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Name of the low-light directory.
    #[arg(long, default_value = "low")]
    pub low_dir: String,
    /// Name of the normal-light directory.
    #[arg(long, default_value = "high")]
    pub high_dir: String,
    /// Resize both images of every pair to WxH before enhancement.
    #[arg(long, value_name = "WxH")]
    pub resize: Option<String>,
    /// Grayscale conversion for SSIM and MS-SSIM: luminance or rgb-mean.
    #[arg(long, default_value = "luminance")]
    pub ssim_mode: String,
    /// Also write the per-image CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Training dataset root.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluation dataset root [default: the training dataset].
    #[arg(long)]
    pub eval_dataset: Option<PathBuf>,
    /// Name of the low-light directory.
    #[arg(long, default_value = "low")]
    pub low_dir: String,
    /// Name of the normal-light directory.
    #[arg(long, default_value = "high")]
    pub high_dir: String,
    /// Resize both images of every pair to WxH after loading.
    #[arg(long, value_name = "WxH")]
    pub resize: Option<String>,
    /// Comma-separated variants, or "all".
    #[arg(long, default_value = "all")]
    pub variants: String,
    /// Stage-one epochs.
    #[arg(long, default_value_t = 2000)]
    pub stage1_epochs: usize,
    /// Stage-two epochs.
    #[arg(long, default_value_t = 1000)]
    pub stage2_epochs: usize,
    /// Steps per epoch for both stages; 0 means ceil(pairs / batch).
    #[arg(long, default_value_t = 0)]
    pub steps_per_epoch: usize,
    /// Pairs per batch for both stages.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Square patch side for both stages.
    #[arg(long, default_value_t = 48)]
    pub patch: usize,
    /// Adam learning rate for both stages.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight-initialisation seed shared by all variants.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Network-one channels at the first level.
    #[arg(long, default_value_t = 16)]
    pub net1_base: usize,
    /// Network-two channels at the first scale.
    #[arg(long, default_value_t = 32)]
    pub net2_base: usize,
    /// Network-two encoder scales.
    #[arg(long, default_value_t = 4)]
    pub scales: usize,
    /// Network-two residual blocks.
    #[arg(long, default_value_t = 4)]
    pub residual_blocks: usize,
    /// Feature-extractor weights in checkpoint format.
    #[arg(long)]
    pub psi_weights: Option<PathBuf>,
    /// Grayscale conversion for SSIM and MS-SSIM: luminance or rgb-mean.
    #[arg(long, default_value = "luminance")]
    pub ssim_mode: String,
    /// Write the summary table here as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    /// 8-bit RGB PNG to map.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated exponents in (0, 1]; fractions like 1/2.2 are accepted.
    #[arg(long, default_value = "1/1.5,1/2.2,1/4,1/8")]
    pub gammas: String,
    /// Image row for the profiles [default: the middle row].
    #[arg(long)]
    pub row: Option<usize>,
    /// Directory for the mapped images and profiles.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Network-one checkpoint; adds a learned profile column and learned.png.
    #[arg(long)]
    pub net1: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Checkpoint file.
    pub path: PathBuf,
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train1(a) => train1(a),
        Command::Train2(a) => train2(a),
        Command::Enhance(a) => enhance(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Curves(a) => curves(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn print_config(verb: &str, entries: &[(String, String)]) {
    println!("lumidec {verb}: resolved configuration");
    print!("{}", render(entries));
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn path_kv(k: &str, p: &Option<PathBuf>) -> (String, String) {
    kv(k, p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()))
}

fn size_of(s: &Option<String>) -> Result<Option<(usize, usize)>> {
    s.as_deref().map(parse_size).transpose()
}

/// Defaults, then the config file, then flags.
fn resolve_train(phase: Phase, file: &ConfigFile, flags: &[(&str, Option<String>)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::for_phase(phase);
    for (k, v) in &file.entries {
        if TrainConfig::KEYS.contains(&k.as_str()) {
            cfg.set(k, v)?;
        }
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if cfg.phase != phase {
        return Err(Error::config(format!("configuration sets phase {} for a phase {phase} run", cfg.phase)));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick<V: std::str::FromStr + Copy>(flag: Option<V>, file: &ConfigFile, key: &str, default: V) -> Result<V> {
    Ok(match flag {
        Some(v) => v,
        None => file.parse_value(key)?.unwrap_or(default),
    })
}

fn load_file(p: &Option<PathBuf>) -> Result<ConfigFile> {
    p.as_deref().map(ConfigFile::load).transpose().map(Option::unwrap_or_default)
}

fn run_flags(r: &RunArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("seed", r.seed.map(|v| v.to_string())),
        ("lr", r.lr.map(|v| v.to_string())),
        ("steps_per_epoch", r.steps_per_epoch.map(|v| v.to_string())),
    ]
}

fn training_data(d: &DataArgs) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    let layout = Layout { low_dir: d.low_dir.clone(), high_dir: d.high_dir.clone() };
    let size = size_of(&d.resize)?;
    let train = load_dataset(&d.dataset, &layout, size)?;
    let val = match &d.val_dataset {
        Some(v) => load_dataset(v, &layout, size)?,
        None => Vec::new(),
    };
    log::info!("{} training pairs, {} validation pairs", train.len(), val.len());
    Ok((train, val))
}

fn data_entries(d: &DataArgs) -> Vec<(String, String)> {
    vec![
        kv("dataset", d.dataset.display()),
        path_kv("val_dataset", &d.val_dataset),
        kv("low_dir", &d.low_dir),
        kv("high_dir", &d.high_dir),
        kv("resize", d.resize.as_deref().unwrap_or("-")),
    ]
}

/// Writes `last` every `save_every` epochs and `best` whenever it improves.
struct CheckpointWriter<'a> {
    dir: PathBuf,
    kind: &'static str,
    save_every: usize,
    to_checkpoint: &'a dyn Fn(&ParamStore<f32>) -> Checkpoint,
    cfg: &'a TrainConfig,
    steps: usize,
    history: History,
    /// First persistence failure; training stops and this is reported.
    failure: Option<Error>,
}

impl CheckpointWriter<'_> {
    fn checkpoint(&self, weights: &ParamStore<f32>, adam: &AdamState<f32>, epoch: usize) -> Result<Checkpoint> {
        let mut ck = (self.to_checkpoint)(weights);
        for (k, v) in self.cfg.entries() {
            ck.set_meta(&format!("train.{k}"), v);
        }
        ck.set_meta("epoch", epoch);
        ck.set_meta("step", adam.t);
        ck.attach_adam(weights, adam)?;
        Ok(ck)
    }

    fn persist(&self, snap: &EpochSnapshot<'_>) -> Result<()> {
        let epoch = snap.record.epoch;
        if snap.improved {
            save_checkpoint(&self.checkpoint(snap.weights, snap.adam, epoch)?, &self.path("best"))?;
        }
        if self.save_every > 0 && epoch.is_multiple_of(self.save_every) {
            save_checkpoint(&self.checkpoint(snap.weights, snap.adam, epoch)?, &self.path("last"))?;
            self.write_history()?;
        }
        Ok(())
    }

    /// Surfaces a stored persistence failure in place of the core error it caused.
    fn take<T>(&mut self, r: lumidec_core::Result<T>) -> Result<T> {
        match (r, self.failure.take()) {
            (Err(_), Some(e)) => Err(e),
            (r, _) => Ok(r?),
        }
    }

    fn path(&self, which: &str) -> PathBuf {
        self.dir.join(format!("{}_{which}.ldle", self.kind))
    }

    fn write_history(&self) -> Result<()> {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.history.epochs {
            let val = r.val_loss.map(|v| format!("{v:.8}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.8},{val}", r.epoch, r.train_loss);
        }
        write_atomic(&self.dir.join(format!("{}_history.csv", self.kind)), s.as_bytes())
    }
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_step(&mut self, step: usize, loss: f64) {
        self.steps = step + 1;
        log::debug!("step {step}: loss {loss:.6}");
    }

    fn on_epoch(&mut self, snap: &EpochSnapshot<'_>) -> lumidec_core::Result<()> {
        self.history.epochs.push(snap.record.clone());
        match self.persist(snap) {
            Ok(()) => Ok(()),
            Err(e) => {
                let msg = e.to_string();
                self.failure = Some(e);
                Err(lumidec_core::Error::Config(msg))
            }
        }
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn resumed_adam(ck: &Checkpoint, weights: &ParamStore<f32>, lr: f64) -> Result<Option<AdamState<f32>>> {
    let mut state = ck.adam_state(weights)?;
    if let Some(s) = state.as_mut() {
        s.config.lr = lr;
    }
    Ok(state)
}

fn train1(a: Train1Args) -> Result<()> {
    let file = load_file(&a.run.config)?;
    let mut flags = run_flags(&a.run);
    flags.push(("epochs", a.epochs.map(|v| v.to_string())));
    flags.push(("batch", a.batch.map(|v| v.to_string())));
    flags.push(("patch", a.patch.map(|v| v.to_string())));
    flags.push(("w_s", a.w_s.map(|v| v.to_string())));
    let cfg = resolve_train(Phase::One, &file, &flags)?;
    let init_seed = pick(a.run.init_seed, &file, "init_seed", 0u64)?;
    let resume = a.run.resume.as_deref().map(load_checkpoint).transpose()?;
    let (model, adam) = match &resume {
        Some(ck) => {
            let m = Net1Model::from_checkpoint(ck).map_err(|e| Error::file(a.run.resume.as_deref().unwrap(), e))?;
            let adam = resumed_adam(ck, &m.weights, cfg.lr)?;
            (m, adam)
        }
        None => {
            let base = pick(a.base_channels, &file, "base_channels", 16usize)?;
            (Net1Model::init(Net1Config::with_base(base), init_seed)?, None)
        }
    };

    let mut entries = data_entries(&a.data);
    entries.extend(cfg.entries());
    entries.push(kv("base_channels", model.config.base_channels));
    entries.push(kv("init_seed", init_seed));
    entries.push(path_kv("resume", &a.run.resume));
    entries.push(kv("out_dir", a.run.out_dir.display()));
    entries.push(kv("parameters", model.weights.count_params()));
    print_config("train1", &entries);

    let (train, val) = training_data(&a.data)?;
    prepare_out_dir(&a.run.out_dir)?;
    let net_config = model.config;
    let to_ck = move |w: &ParamStore<f32>| Net1Model { config: net_config, weights: w.clone() }.to_checkpoint(Meta::new());
    let mut writer = CheckpointWriter {
        dir: a.run.out_dir.clone(),
        kind: "net1",
        save_every: a.run.save_every,
        to_checkpoint: &to_ck,
        cfg: &cfg,
        steps: 0,
        history: History::default(),
        failure: None,
    };
    let r = train_stage1(&train, &val, model, adam, &cfg, &mut writer);
    let out = writer.take(r)?;
    let epochs = out.history.epochs.len();
    let last = writer.checkpoint(&out.last.weights, &out.adam, epochs)?;
    save_checkpoint(&last, &writer.path("last"))?;
    if out.best_epoch.is_none() {
        save_checkpoint(&last, &writer.path("best"))?;
    }
    writer.write_history()?;
    report_outcome("net1", &a.run.out_dir, &out.history, out.best_epoch, writer.steps);
    Ok(())
}

fn report_outcome(kind: &str, dir: &Path, h: &History, best: Option<usize>, steps: usize) {
    match h.epochs.last() {
        Some(r) => println!(
            "trained {} epochs ({steps} steps); final train loss {:.6}; best epoch {}",
            h.epochs.len(),
            r.train_loss,
            best.map(|b| b.to_string()).unwrap_or_else(|| "-".into())
        ),
        None => println!("no epochs run; wrote the initial weights"),
    }
    println!("checkpoints: {0}/{kind}_last.ldle, {0}/{kind}_best.ldle", dir.display());
}

/// Seeded default extractor, or the layout and weights of a checkpoint.
pub fn load_psi(path: Option<&Path>) -> Result<FeatureExtractor<f32>> {
    match path {
        None => Ok(FeatureExtractor::new(FeatureExtractorSpec::default())?),
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let spec = FeatureExtractorSpec::infer(&ck.tensors, WeightSource::File(p.display().to_string()))
                .map_err(|e| Error::file(p, e))?;
            FeatureExtractor::from_weights(spec, &ck.tensors).map_err(|e| Error::file(p, e))
        }
    }
}

fn load_net1(p: &Path) -> Result<Net1Model> {
    Net1Model::from_checkpoint(&load_checkpoint(p)?).map_err(|e| Error::file(p, e))
}

fn load_net2(p: &Path) -> Result<Net2Model> {
    Net2Model::from_checkpoint(&load_checkpoint(p)?).map_err(|e| Error::file(p, e))
}

fn train2(a: Train2Args) -> Result<()> {
    let file = load_file(&a.run.config)?;
    let mut flags = run_flags(&a.run);
    flags.push(("epochs", a.epochs.map(|v| v.to_string())));
    flags.push(("batch", a.batch.map(|v| v.to_string())));
    flags.push(("patch", a.patch.map(|v| v.to_string())));
    flags.push(("w_r2", a.w_r2.map(|v| v.to_string())));
    flags.push(("w_vgg", a.w_vgg.map(|v| v.to_string())));
    flags.push(("w_c", a.w_c.map(|v| v.to_string())));
    let cfg = resolve_train(Phase::Two, &file, &flags)?;
    let init_seed = pick(a.run.init_seed, &file, "init_seed", 0u64)?;
    let guidance = !a.no_guidance && pick(None, &file, "guidance", true)?;
    let layer_norm = !a.no_layer_norm && pick(None, &file, "layer_norm", true)?;
    if guidance && a.net1.is_none() {
        return Err(Error::config("train2 needs --net1 unless --no-guidance is given"));
    }
    let net1 = a.net1.as_deref().map(load_net1).transpose()?;
    let resume = a.run.resume.as_deref().map(load_checkpoint).transpose()?;
    let (model, adam) = match &resume {
        Some(ck) => {
            let m = Net2Model::from_checkpoint(ck).map_err(|e| Error::file(a.run.resume.as_deref().unwrap(), e))?;
            let adam = resumed_adam(ck, &m.weights, cfg.lr)?;
            (m, adam)
        }
        None => {
            let config = Net2Config {
                base_channels: pick(a.base_channels, &file, "base_channels", 32usize)?,
                scales: pick(a.scales, &file, "scales", 4usize)?,
                residual_blocks: pick(a.residual_blocks, &file, "residual_blocks", 4usize)?,
                use_layer_norm: layer_norm,
                use_guidance: guidance,
                ..Net2Config::default()
            };
            (Net2Model::init(config, init_seed)?, None)
        }
    };
    let psi = load_psi(a.psi_weights.as_deref())?;

    let mut entries = data_entries(&a.data);
    entries.extend(cfg.entries());
    let c = model.config;
    entries.extend([
        path_kv("net1", &a.net1),
        kv("base_channels", c.base_channels),
        kv("scales", c.scales),
        kv("residual_blocks", c.residual_blocks),
        kv("layer_norm", c.use_layer_norm),
        kv("guidance", c.use_guidance),
        kv("init_seed", init_seed),
        path_kv("psi_weights", &a.psi_weights),
        path_kv("resume", &a.run.resume),
        kv("out_dir", a.run.out_dir.display()),
        kv("parameters", model.weights.count_params()),
    ]);
    print_config("train2", &entries);

    let (train, val) = training_data(&a.data)?;
    prepare_out_dir(&a.run.out_dir)?;
    let source = match &net1 {
        Some(n1) => Stage2Source::Curve(n1),
        None => Stage2Source::Raw,
    };
    let to_ck = move |w: &ParamStore<f32>| Net2Model { config: c, weights: w.clone() }.to_checkpoint(Meta::new());
    let mut writer = CheckpointWriter {
        dir: a.run.out_dir.clone(),
        kind: "net2",
        save_every: a.run.save_every,
        to_checkpoint: &to_ck,
        cfg: &cfg,
        steps: 0,
        history: History::default(),
        failure: None,
    };
    let r = train_stage2(&train, &val, source, model, adam, &psi, &cfg, &mut writer);
    let out = writer.take(r)?;
    let epochs = out.history.epochs.len();
    let last = writer.checkpoint(&out.last.weights, &out.adam, epochs)?;
    save_checkpoint(&last, &writer.path("last"))?;
    if out.best_epoch.is_none() {
        save_checkpoint(&last, &writer.path("best"))?;
    }
    writer.write_history()?;
    report_outcome("net2", &a.run.out_dir, &out.history, out.best_epoch, writer.steps);
    Ok(())
}

/// Builds the inference pipeline from whichever checkpoints are given.
pub fn build_pipeline(net1: Option<&Path>, net2: Option<&Path>) -> Result<Pipeline> {
    let n1 = net1.map(load_net1).transpose()?;
    let n2 = net2.map(load_net2).transpose()?;
    match (n1, n2) {
        (Some(n1), Some(n2)) => Ok(Pipeline::Decoupled(n1, n2)),
        (Some(n1), None) => Ok(Pipeline::Stage1(n1)),
        (None, Some(n2)) if !n2.config.use_guidance => Ok(Pipeline::Direct(n2)),
        (None, Some(_)) => Err(Error::config("this network-two checkpoint is guided and needs --net1")),
        (None, None) => Err(Error::config("give --net1, --net2, or both")),
    }
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    print_config(
        "enhance",
        &[
            kv("input", a.input.display()),
            path_kv("net1", &a.net1),
            path_kv("net2", &a.net2),
            kv("output", a.output.display()),
            path_kv("emit_g", &a.emit_g),
            path_kv("emit_intermediate", &a.emit_intermediate),
        ],
    );
    if a.net2.is_none() {
        eprintln!("warning: no --net2 given; writing the stage-one result only");
    }
    let pipeline = build_pipeline(a.net1.as_deref(), a.net2.as_deref())?;
    let low = load_png(&a.input)?;
    let r = pipeline.run(&low)?;
    save_png(&r.output, &a.output)?;
    if let Some(p) = &a.emit_g {
        let g = r.g.as_ref().ok_or_else(|| Error::config("--emit-g needs --net1"))?;
        save_png(&curve_map_image(g), p)?;
    }
    if let Some(p) = &a.emit_intermediate {
        let ie1 = r.ie1.as_ref().ok_or_else(|| Error::config("--emit-intermediate needs --net1"))?;
        save_png(ie1, p)?;
    }
    let s = low.shape();
    println!("wrote {} ({}x{})", a.output.display(), s.w, s.h);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mode: SsimMode = a.ssim_mode.parse()?;
    let threads = thread_cap();
    print_config(
        "eval",
        &[
            path_kv("net1", &a.net1),
            path_kv("net2", &a.net2),
            kv("dataset", a.dataset.display()),
            kv("low_dir", &a.low_dir),
            kv("high_dir", &a.high_dir),
            kv("resize", a.resize.as_deref().unwrap_or("-")),
            kv("ssim_mode", mode.as_str()),
            path_kv("csv", &a.csv),
            kv("threads", threads),
        ],
    );
    let size = size_of(&a.resize)?;
    let pipeline = build_pipeline(a.net1.as_deref(), a.net2.as_deref())?;
    let layout = Layout { low_dir: a.low_dir, high_dir: a.high_dir };
    let pairs = load_dataset(&a.dataset, &layout, size)?;
    let report = evaluate_parallel(&pipeline, &pairs, mode, threads);
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(p) = &a.csv {
        write_atomic(p, csv.as_bytes())?;
    }
    println!("{}", report.summary_line());
    Ok(())
}

fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    if s.trim() == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    s.split(',').map(|v| Ok(v.trim().parse::<Variant>()?)).collect()
}

fn ablate(a: AblateArgs) -> Result<()> {
    let variants = parse_variants(&a.variants)?;
    let mode: SsimMode = a.ssim_mode.parse()?;
    let stage = |phase: Phase, epochs: usize| TrainConfig {
        phase,
        batch: a.batch,
        patch: a.patch,
        epochs,
        lr: a.lr,
        seed: a.seed,
        steps_per_epoch: a.steps_per_epoch,
        ..TrainConfig::for_phase(phase)
    };
    let config = AblationConfig {
        net1: Net1Config::with_base(a.net1_base),
        net2: Net2Config { scales: a.scales, residual_blocks: a.residual_blocks, ..Net2Config::with_base(a.net2_base) },
        stage1: stage(Phase::One, a.stage1_epochs),
        stage2: stage(Phase::Two, a.stage2_epochs),
        ssim_mode: mode,
        init_seed: a.init_seed,
    };
    config.stage1.validate()?;
    let names: Vec<&str> = variants.iter().map(|v| v.name()).collect();
    let mut entries = vec![
        kv("dataset", a.dataset.display()),
        path_kv("eval_dataset", &a.eval_dataset),
        kv("variants", names.join(",")),
    ];
    entries.extend(config.stage1.entries().into_iter().map(|(k, v)| (format!("stage1.{k}"), v)));
    entries.extend(config.stage2.entries().into_iter().map(|(k, v)| (format!("stage2.{k}"), v)));
    entries.extend([
        kv("net1_base", a.net1_base),
        kv("net2_base", a.net2_base),
        kv("scales", a.scales),
        kv("residual_blocks", a.residual_blocks),
        kv("init_seed", a.init_seed),
        kv("ssim_mode", mode.as_str()),
        path_kv("psi_weights", &a.psi_weights),
        path_kv("out", &a.out),
    ]);
    print_config("ablate", &entries);

    let layout = Layout { low_dir: a.low_dir.clone(), high_dir: a.high_dir.clone() };
    let size = size_of(&a.resize)?;
    let train = load_dataset(&a.dataset, &layout, size)?;
    let eval_set = match &a.eval_dataset {
        Some(p) => load_dataset(p, &layout, size)?,
        None => train.clone(),
    };
    let psi = load_psi(a.psi_weights.as_deref())?;
    let mut suite = AblationSuite::new(config, &psi);
    let mut results = Vec::new();
    for v in variants {
        log::info!("ablation variant {v}");
        let r = suite.run(v, &train, &eval_set)?;
        println!("{v}: {}", r.report.summary_line());
        results.push(r);
    }
    let table = summary_table(&results);
    print!("{table}");
    if let Some(p) = &a.out {
        write_atomic(p, table.as_bytes())?;
    }
    Ok(())
}

/// Parses `0.5`, `1/2.2` and similar.
fn parse_gamma(s: &str) -> Result<f64> {
    let bad = || Error::config(format!("cannot parse gamma {s:?}"));
    let v = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>().map_err(|_| bad())? / d.trim().parse::<f64>().map_err(|_| bad())?,
        None => s.trim().parse::<f64>().map_err(|_| bad())?,
    };
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::config(format!("gamma {s} is outside (0, 1]")));
    }
    Ok(v)
}

pub fn parse_gammas(s: &str) -> Result<Vec<f64>> {
    let g: Vec<f64> = s.split(',').filter(|p| !p.trim().is_empty()).map(parse_gamma).collect::<Result<_>>()?;
    if g.is_empty() {
        return Err(Error::config("no gammas given"));
    }
    Ok(g)
}

/// Column label of one uniform curve.
pub fn gamma_label(g: f64) -> String {
    match DEFAULT_GAMMAS.iter().position(|&f| (f - g).abs() < 1e-12) {
        Some(_) => format!("gamma_1/{}", trim_float(1.0 / g)),
        None => format!("gamma_{}", trim_float(g)),
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn curves(a: CurvesArgs) -> Result<()> {
    let gammas = parse_gammas(&a.gammas)?;
    let img = load_png(&a.input)?;
    let s = img.shape();
    let row = a.row.unwrap_or(s.h / 2);
    print_config(
        "curves",
        &[
            kv("input", a.input.display()),
            kv("gammas", gammas.iter().map(|g| format!("{g:.6}")).collect::<Vec<_>>().join(",")),
            kv("row", row),
            kv("out_dir", a.out_dir.display()),
            path_kv("net1", &a.net1),
        ],
    );
    if row >= s.h {
        return Err(lumidec_core::Error::Bounds(format!("row {row} outside height {}", s.h)).into());
    }
    prepare_out_dir(&a.out_dir)?;
    let mut columns: Vec<(String, Vec<f32>)> = Vec::new();
    for (i, &g) in gammas.iter().enumerate() {
        let mapped = apply_uniform_gamma(&img, g as f32)?;
        save_png(&mapped, &a.out_dir.join(format!("gamma_{i}.png")))?;
        columns.push((gamma_label(g), extract_profile(&mapped, row)?));
    }
    if let Some(p) = &a.net1 {
        let pipeline = Pipeline::Stage1(load_net1(p)?);
        let r = pipeline.run(&img)?;
        save_png(&r.output, &a.out_dir.join("learned.png"))?;
        if let Some(g) = &r.g {
            save_png(&curve_map_image(g), &a.out_dir.join("learned_g.png"))?;
        }
        columns.push(("learned".into(), extract_profile(&r.output, row)?));
    }
    let mut csv = String::from("pixel");
    for (name, _) in &columns {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for x in 0..s.w {
        let _ = write!(csv, "{x}");
        for (_, p) in &columns {
            let _ = write!(csv, ",{:.6}", p[x]);
        }
        csv.push('\n');
    }
    write_atomic(&a.out_dir.join("profiles.csv"), csv.as_bytes())?;
    for (name, p) in &columns {
        println!("{name}: profile contrast {:.4}", profile_contrast(p));
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    print_config("inspect", &[kv("path", a.path.display())]);
    let ck = load_checkpoint(&a.path)?;
    println!("metadata:");
    for (k, v) in &ck.meta {
        println!("  {k} = {v}");
    }
    println!("tensors:");
    let mut weights = 0;
    for e in ck.tensors.iter() {
        let dims: Vec<String> = e.dims.iter().map(|d| d.to_string()).collect();
        println!("  {} [{}] {}", e.name, dims.join("x"), e.value.numel());
        if !e.name.starts_with("adam/") {
            weights += e.value.numel();
        }
    }
    println!("{} tensors, {weights} weight values", ck.tensors.len());
    Ok(())
}
