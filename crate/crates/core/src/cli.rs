//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::io::{self, EVENTS_FILE, LABELS_FILE};
use crate::data::{synth_generate, Clip, CorpusSpec};
use crate::error::{Result, StanError};
use crate::evaluation::{optimal_threshold, EvalReport, EventReport, LabeledClips};
use crate::gradsuite;
use crate::interpret::{error_map, guided_backprop_map, save_heatmap, save_montage};
use crate::models::checkpoint::{load_discriminator, load_generator, save_discriminator, save_generator};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Parameterized};
use crate::rng::{stream_rng, Stream};
use crate::scoring::{normalize_global, score_clip, write_scores, NormScope, ScoreSeries};
use crate::training::{adversarial_train, pretrain_generator, LossLog, TrainConfig};

pub const CONFIG_ECHO: &str = "config.toml";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "eval_report.json";
pub const LOSS_LOG: &str = "loss.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            base_channels: 4,
        }
    }
}

impl ModelConfig {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig::scaled(self.input_size, self.base_channels)
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig::scaled(self.input_size, self.base_channels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_clips: usize,
    pub test_clips: usize,
    pub frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_clips: 20,
            test_clips: 10,
            frames: 200,
        }
    }
}

/// Everything a run depends on. File values are overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub merge_gap: usize,
    pub threshold: Option<f64>,
    pub norm_scope: NormScope,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            merge_gap: 50,
            threshold: None,
            norm_scope: NormScope::Clip,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StanError::Missing(path.to_path_buf())
            } else {
                StanError::io(path, e)
            }
        })?;
        toml::from_str(&text).map_err(|e| StanError::Config(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<()> {
        self.model.generator().validate()?;
        self.model.discriminator().validate()?;
        self.train.validate()?;
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(StanError::Config(format!("threshold {t} outside (0, 1)")));
            }
        }
        Ok(())
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| StanError::Config(e.to_string()))?;
        write_file(&dir.join(CONFIG_ECHO), text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| StanError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| StanError::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(StanError::Missing(path.to_path_buf()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Frame,
    Event,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Clip,
    Global,
}

impl From<Scope> for NormScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::Clip => NormScope::Clip,
            Scope::Global => NormScope::Global,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stan", version, about = "Adversarial spatio-temporal anomaly detection in video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frame side length in pixels.
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the generator, then train both networks adversarially.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory; clips are read from its `train/` subdirectory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every frame of the test clips.
    Score {
        #[command(flatten)]
        common: Common,
        /// Corpus directory; clips are read from its `test/` subdirectory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        norm_scope: Option<Scope>,
    },
    /// Frame-level AUC and event-level counts.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Corpus directory holding the label and event CSVs.
        #[arg(long)]
        data: PathBuf,
        /// Scores CSV, or a directory containing one.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        merge_gap: Option<usize>,
        #[arg(long, value_enum, default_value = "event")]
        mode: Mode,
    },
    /// Error and gradient maps for one frame per test clip.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = common.scale {
        cfg.model.input_size = s;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.synth;
    let corpus = CorpusSpec::desk(cfg.seed, cfg.model.input_size, s.train_clips, s.test_clips, s.frames);
    let train = synth_generate(&corpus.train)?;
    let test = synth_generate(&corpus.test)?;
    create_dir(out)?;
    io::write_corpus(out, &train, &test)?;
    let spec = serde_json::to_string_pretty(&corpus).expect("corpus spec serializes");
    write_file(&out.join("corpus.json"), spec.as_bytes())?;
    cfg.echo(out)?;
    println!(
        "wrote {} train and {} test clips to {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let clips = io::load_clips(&data.join("train"), cfg.model.input_size)?;
    create_dir(out)?;
    cfg.echo(out)?;
    let mut g = Generator::<f32>::new(
        cfg.model.generator(),
        &mut stream_rng(cfg.seed, Stream::GeneratorInit, 0),
    )?;
    let mut d = Discriminator::<f32>::new(
        cfg.model.discriminator(),
        &mut stream_rng(cfg.seed, Stream::DiscriminatorInit, 0),
    )?;
    log::info!(
        "generator {} params, discriminator {} params",
        g.param_count(),
        d.param_count()
    );
    let start = Instant::now();
    let pre = pretrain_generator(&mut g, &clips, &cfg.train)?;
    let pre_json = serde_json::to_string_pretty(&pre).expect("report serializes");
    write_file(&out.join("pretrain.json"), pre_json.as_bytes())?;
    let ckpt = out.join("ckpt");
    save_generator(&ckpt.join("pretrain"), &g)?;
    log::info!(
        "pretrained {} steps, held-out pixel loss floor {:.4}",
        pre.steps,
        pre.floor()
    );

    let log_path = out.join(LOSS_LOG);
    if log_path.exists() {
        fs::remove_file(&log_path).map_err(|e| StanError::io(&log_path, e))?;
    }
    let mut loss_log = LossLog::create(&log_path)?;
    let every = cfg.train.checkpoint_every;
    adversarial_train(&mut g, &mut d, &clips, &cfg.train, |r, g, d| {
        loss_log.append(r)?;
        if every > 0 && r.step % every == 0 {
            let dir = ckpt.join(format!("step_{:06}", r.step));
            save_generator(&dir, g)?;
            save_discriminator(&dir, d)?;
            log::info!("step {}: L_G {:.4} L_D {:.4}", r.step, r.l_g, r.l_d);
        }
        Ok(())
    })?;
    save_generator(&ckpt, &g)?;
    save_discriminator(&ckpt, &d)?;
    println!(
        "trained in {:.1}s; checkpoints in {}",
        start.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

fn load_test_clips(data: &Path, size: usize) -> Result<Vec<Clip<f32>>> {
    let mut clips = io::load_clips(&data.join("test"), size)?;
    let labels = data.join(LABELS_FILE);
    if labels.exists() {
        io::attach_labels(&mut clips, &io::read_labels(&labels)?)?;
    }
    Ok(clips)
}

fn load_networks(ckpt: &Path) -> Result<(Generator<f32>, Discriminator<f32>)> {
    require(ckpt)?;
    Ok((load_generator(ckpt)?, load_discriminator(ckpt)?))
}

fn score(cfg: &RunConfig, data: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let (g, d) = load_networks(ckpt)?;
    let size = g.config().input_size;
    let clips = load_test_clips(data, size)?;
    let mut series: Vec<ScoreSeries> = clips
        .iter()
        .map(|c| score_clip(c, &g, &d))
        .collect::<Result<_>>()?;
    if cfg.norm_scope == NormScope::Global {
        normalize_global(&mut series);
    }
    for s in &series {
        log::info!("{}: λ_s = {:.6}", s.clip_id, s.lambda_s);
    }
    create_dir(out)?;
    write_scores(&out.join(SCORES_FILE), &series)?;
    cfg.echo(out)?;
    println!("scored {} clips into {}", series.len(), out.join(SCORES_FILE).display());
    Ok(())
}

fn eval(cfg: &RunConfig, data: &Path, scores: &Path, out: Option<&Path>, mode: Mode) -> Result<EvalReport> {
    let scores_path = if scores.is_dir() {
        scores.join(SCORES_FILE)
    } else {
        scores.to_path_buf()
    };
    let series = crate::scoring::read_scores(&scores_path)?;
    let labels = io::read_labels(&data.join(LABELS_FILE))?;
    let mut lc = LabeledClips::default();
    for s in &series {
        let l = labels
            .get(&s.clip_id)
            .ok_or_else(|| StanError::Input(format!("no labels for clip {}", s.clip_id)))?;
        lc.insert(s.clip_id.clone(), s.score.clone(), l.clone())?;
    }
    let (pooled, pooled_labels) = lc.pooled();
    let auc = lc.auc()?;
    let events = match mode {
        Mode::Frame => None,
        Mode::Event => {
            let gt = io::read_events(&data.join(EVENTS_FILE))?;
            let threshold = match cfg.threshold {
                Some(t) => t,
                None => optimal_threshold(&pooled, &pooled_labels)?,
            };
            let r = lc.events(&gt, threshold, cfg.merge_gap);
            Some(EventReport::new(r, threshold, cfg.merge_gap))
        }
    };
    let report = EvalReport {
        auc,
        per_clip_auc: lc.per_clip_auc(),
        frames: pooled.len(),
        abnormal_frames: pooled_labels.iter().filter(|&&l| l == 1).count(),
        events,
    };
    println!("auc={auc}");
    if let Some(e) = &report.events {
        let precision = e.precision.map(|p| p.to_string()).unwrap_or_default();
        println!(
            "threshold={} correct={} false_alarms={} precision={} events_detected={}/{}",
            e.threshold, e.correct_detections, e.false_alarms, precision, e.events_detected, e.events_total
        );
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&dir.join(REPORT_FILE), text.as_bytes())?;
    }
    Ok(report)
}

fn visualize(data: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let (g, d) = load_networks(ckpt)?;
    let k = g.config().half_window;
    let clips = load_test_clips(data, g.config().input_size)?;
    create_dir(out)?;
    for c in &clips {
        let t = c
            .labels()
            .and_then(|l| io::label_intervals(l).first().map(|&(s, e)| (s + e) / 2))
            .unwrap_or(c.len() / 2)
            .clamp(k, c.len().saturating_sub(k + 1));
        let generated = g.forward(&c.window(t, k)?)?;
        let real = c.frame(t);
        let err = error_map(&generated, &real)?;
        let grad = guided_backprop_map(&c.sequence(t, k)?, &d)?;
        let stem = format!("{}_{t:06}", c.id);
        save_heatmap(&err, &out.join(format!("{stem}_error.png")))?;
        save_heatmap(&grad, &out.join(format!("{stem}_gradient.png")))?;
        save_montage(&real, &generated, &err, &grad, &out.join(format!("{stem}_montage.png")))?;
    }
    println!("wrote maps for {} clips to {}", clips.len(), out.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<bool> {
    let entries = gradsuite::run(cfg.seed)?;
    let mut all = true;
    for e in &entries {
        all &= e.passed;
        println!(
            "{} {:<36} rel_err={:.3e} max_coord_err={:.3e} checked={}",
            if e.passed { "PASS" } else { "FAIL" },
            e.name,
            e.relative_error,
            e.max_coordinate_error,
            e.checked
        );
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let text = serde_json::to_string_pretty(&entries).expect("entries serialize");
        write_file(&dir.join("gradcheck.json"), text.as_bytes())?;
    }
    Ok(all)
}

/// Run one parsed command.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { common, out } => synth(&resolve(&common)?, &out).map(|_| true),
        Command::Train { common, data, out } => {
            require(&data)?;
            train(&resolve(&common)?, &data, &out).map(|_| true)
        }
        Command::Score {
            common,
            data,
            ckpt,
            out,
            norm_scope,
        } => {
            require(&data)?;
            let mut cfg = resolve(&common)?;
            if let Some(s) = norm_scope {
                cfg.norm_scope = s.into();
            }
            score(&cfg, &data, &ckpt, &out).map(|_| true)
        }
        Command::Eval {
            common,
            data,
            scores,
            out,
            threshold,
            merge_gap,
            mode,
        } => {
            let mut cfg = resolve(&common)?;
            if threshold.is_some() {
                cfg.threshold = threshold;
            }
            if let Some(m) = merge_gap {
                cfg.merge_gap = m;
            }
            cfg.validate()?;
            eval(&cfg, &data, &scores, out.as_deref(), mode).map(|_| true)
        }
        Command::Visualize {
            common,
            data,
            ckpt,
            out,
        } => {
            resolve(&common)?;
            require(&data)?;
            visualize(&data, &ckpt, &out).map(|_| true)
        }
        Command::Gradcheck { common, out } => gradcheck(&resolve(&common)?, out.as_deref()),
    }
}

/// Exit status for an error: 3 for divergence, 1 otherwise.
pub fn exit_code(e: &StanError) -> u8 {
    match e {
        StanError::Divergence { .. } => 3,
        _ => 1,
    }
}

/// Parse `std::env::args`, run, and map the outcome to an exit status.
pub fn main_exit() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
