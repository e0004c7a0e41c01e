//! The `scmm` command line. Human-readable output goes to stderr, JSON to
//! stdout. Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scmm_core::corpus::{generate_corpus, ContinuityProfile, CorpusParams};
use scmm_core::masking::{MaskConfig, MaskStrategy};
use scmm_core::objectives::{DistanceMetric, SoftClConfig, SoftClMode};
use scmm_core::training::{Ablation, ProbeMode};

use crate::config::RunConfigFile;
use crate::error::{Error, Result};
use crate::pipeline;
use crate::store::{write_corpus, MANIFEST};

#[derive(Debug, Parser)]
#[command(name = "scmm", version, about = "Soft contrastive masked modeling for EEG feature corpora")]
pub struct Cli {
    /// Log verbosity on stderr (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory.
    GenCorpus(GenCorpusArgs),
    /// Pre-train an encoder from a run config.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint per subject and report mean/std metrics.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on the test trials of a corpus.
    Eval(EvalArgs),
    /// Repeat pre-train + fine-tune over the values of one hyperparameter.
    Sweep(SweepArgs),
    /// Print mask plans as character grids and JSON.
    InspectMasks(InspectMasksArgs),
    /// Export similarity, soft-assignment and aggregation matrices for a batch.
    ExportSimilarity(ExportSimilarityArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 15 subjects x 3 sessions x 15 trials, 62 channels, 3 classes.
    Seed,
    /// 32 subjects x 1 session x 40 trials, 32 channels, 2 classes.
    Deap,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "seed")]
    pub preset: Preset,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// AR(1) coefficient of the segment latent.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// JSON file with a full continuity profile; flags override it.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub corpus_id: Option<String>,
    #[arg(long, env = "SCMM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Synthesize raw band-limited signals and extract DE features from them.
    #[arg(long)]
    pub raw_signal: bool,
    #[arg(long, default_value_t = 200.0)]
    pub sample_rate: f64,
}

#[derive(Debug, Args)]
pub struct RunOverrides {
    /// Overrides the seeds in the config; SCMM_SEED applies when neither sets one.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
    #[arg(long, value_parser = parse_from_str::<SoftClMode>)]
    pub mode: Option<SoftClMode>,
    #[arg(long, value_parser = parse_from_str::<MaskStrategy>)]
    pub mask_strategy: Option<MaskStrategy>,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    Full,
    WithoutContrastive,
    WithoutReconstruction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProbeArg {
    Joint,
    LinearProbe,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub probe_mode: Option<ProbeArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 9)]
    pub finetune_trials: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// One of r, mu, metric, alpha, tau_s, tau_c, batch_size.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Run the values concurrently (each in its own output directory).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct InspectMasksArgs {
    #[arg(long, default_value_t = 62)]
    pub channels: usize,
    #[arg(long, default_value_t = 5)]
    pub bands: usize,
    #[arg(long, default_value = "hybrid", value_parser = parse_from_str::<MaskStrategy>)]
    pub strategy: MaskStrategy,
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    /// Threshold mu.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, env = "SCMM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportSimilarityArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Embed with this checkpoint instead of using raw features.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value = "cosine_negative", value_parser = parse_from_str::<DistanceMetric>)]
    pub metric: DistanceMetric,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau_s: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau_c: f64,
    #[arg(long, env = "SCMM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = scmm_core::Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: scmm_core::Error| e.to_string())
}

/// Writes a stdout line; a closed pipe (`scmm ... | head`) is not an error.
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_json(value: &impl Serialize) {
    emit(&serde_json::to_string_pretty(value).expect("serializes"));
}

fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let mut params = match a.preset {
        Preset::Seed => CorpusParams::seed_like(),
        Preset::Deap => CorpusParams::deap_like(),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut params.subjects, a.subjects);
    set(&mut params.sessions_per_subject, a.sessions);
    set(&mut params.trials_per_session, a.trials);
    set(&mut params.segments_per_trial, a.segments);
    set(&mut params.channel_count, a.channels);
    set(&mut params.band_count, a.bands);
    if let Some(k) = a.classes {
        if k != params.class_names.len() {
            params.class_names = (0..k).map(|i| format!("class{i}")).collect();
        }
    }
    if let Some(id) = &a.corpus_id {
        params.corpus_id = id.clone();
    }
    if a.raw_signal {
        params.raw_sample_rate = Some(a.sample_rate);
    }
    let mut profile = match &a.profile {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
            serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?
        }
        None => ContinuityProfile::default(),
    };
    if let Some(v) = a.rho {
        profile.ar_coefficient = v;
    }
    if let Some(v) = a.separation {
        profile.class_separation = v;
    }
    if let Some(v) = a.noise {
        profile.noise_scale = v;
    }
    params.validate()?;
    profile.validate()?;
    log::info!(
        "generating {} samples ({} channels x {} bands)",
        params.sample_count(),
        params.channel_count,
        params.band_count
    );
    let corpus = generate_corpus(&params, &profile, a.seed)?;
    write_corpus(&corpus, &a.out)?;
    let manifest = a.out.join(MANIFEST);
    eprintln!("wrote {}", manifest.display());
    emit(&manifest.display().to_string());
    Ok(())
}

/// Whether the config file sets `section.seed` explicitly.
fn config_sets_seed(path: &Path, section: &str) -> bool {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .is_some_and(|v| v.get(section).and_then(|s| s.get("seed")).is_some())
}

fn load_config(path: &Path, o: &RunOverrides, finetune_section: bool) -> Result<RunConfigFile> {
    let mut cfg = RunConfigFile::load(path)?;
    let env_seed = match std::env::var("SCMM_SEED") {
        Ok(s) => Some(
            s.parse::<u64>()
                .map_err(|_| Error::Usage(format!("SCMM_SEED=`{s}` is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    if let Some(s) = o.seed {
        cfg.pretrain.seed = s;
        cfg.finetune.seed = s;
    } else if let Some(s) = env_seed {
        if !config_sets_seed(path, "pretrain") {
            cfg.pretrain.seed = s;
        }
        if !config_sets_seed(path, "finetune") {
            cfg.finetune.seed = s;
        }
    }
    if let Some(e) = o.epochs {
        if finetune_section {
            cfg.finetune.epochs = e;
        } else {
            cfg.pretrain.epochs = e;
        }
    }
    if let Some(b) = o.batch_size {
        if finetune_section {
            cfg.finetune.batch_size = b;
        } else {
            cfg.pretrain.batch_size = b;
        }
    }
    Ok(cfg)
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfigFile) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Usage("no --out given and the config has no output_dir".into()))
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, &a.overrides, false)?;
    if let Some(m) = a.mode {
        cfg.pretrain.softcl.mode = m;
    }
    if let Some(s) = a.mask_strategy {
        cfg.pretrain.mask.strategy = s;
    }
    if let Some(ab) = a.ablation {
        cfg.pretrain.ablation = match ab {
            AblationArg::Full => Ablation::Full,
            AblationArg::WithoutContrastive => Ablation::WithoutContrastive,
            AblationArg::WithoutReconstruction => Ablation::WithoutReconstruction,
        };
    }
    let out = out_dir(&a.out, &cfg)?;
    cfg.output_dir = Some(out.clone());
    let report = pipeline::run_pretrain(&cfg, &out)?;
    eprintln!(
        "pre-training done: L_pret {:.5}, checkpoint {}",
        report.final_l_pret,
        report.checkpoint.display()
    );
    print_json(&report);
    Ok(())
}

fn finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, &a.overrides, true)?;
    if let Some(f) = a.label_fraction {
        cfg.finetune.label_fraction = f;
    }
    if let Some(p) = a.probe_mode {
        cfg.finetune.probe_mode = match p {
            ProbeArg::Joint => ProbeMode::Joint,
            ProbeArg::LinearProbe => ProbeMode::LinearProbe,
        };
    }
    let out = out_dir(&a.out, &cfg)?;
    cfg.output_dir = Some(out.clone());
    let report = pipeline::run_finetune(&cfg, &a.checkpoint, &out)?;
    for (k, s) in &report.summary {
        eprintln!("{k:>9}: {:6.2} / {:5.2}", s.mean, s.std);
    }
    print_json(&report);
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = load_config(&a.config, &a.overrides, false)?;
    let out = out_dir(&a.out, &cfg)?;
    let table = pipeline::run_sweep(&cfg, &a.param, &a.values, &out, a.parallel)?;
    for r in &table.rows {
        let acc = r.summary.get("accuracy").map_or(f64::NAN, |s| s.mean);
        eprintln!("{}={}: accuracy {acc:.2}", table.param, r.value);
    }
    print_json(&table);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::Eval(a) => {
            let m = pipeline::run_eval(&a.checkpoint, &a.corpus, a.split_seed, a.finetune_trials)?;
            eprintln!("accuracy {:.4}", m["accuracy"]);
            print_json(&m);
            Ok(())
        }
        Command::Sweep(a) => sweep(a),
        Command::InspectMasks(a) => {
            let cfg = MaskConfig {
                strategy: a.strategy,
                ratio: a.ratio,
                threshold: a.threshold,
            };
            let (text, dumps) = pipeline::inspect_masks(cfg, a.channels, a.bands, a.count, a.seed)?;
            eprint!("{text}");
            print_json(&serde_json::json!({ "config": cfg, "seed": a.seed, "masks": dumps }));
            Ok(())
        }
        Command::ExportSimilarity(a) => {
            let softcl = SoftClConfig {
                metric: a.metric,
                alpha: a.alpha,
                sharpness: a.tau_s,
                temperature: a.tau_c,
                ..SoftClConfig::default()
            };
            let x = pipeline::export_similarity(&a.corpus, a.checkpoint.as_deref(), a.batch_size, &softcl, a.seed)?;
            match &a.out {
                Some(p) => pipeline::write_json(&x, p)?,
                None => print_json(&x),
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .target(env_logger::Target::Stderr)
        .try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
