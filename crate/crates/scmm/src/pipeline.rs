//! Run drivers shared by the subcommands: each reads its inputs, runs the core
//! loop and writes config snapshot, RunLog and report into an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use scmm_core::corpus::{self, ChannelAlignment, Corpus};
use scmm_core::masking::MaskConfig;
use scmm_core::metrics::{self, MetricMap, Summary};
use scmm_core::network::{self, Bound, NetworkConfig, ParameterStore};
use scmm_core::objectives::{self, AggregationConfig, BatchEmbeddings, SoftClConfig};
use scmm_core::rng::{self, stream};
use scmm_core::signal::FeatureMatrix;
use scmm_core::tensor::{Graph, Tensor};
use scmm_core::training::{self, SubjectResult};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfigFile;
use crate::error::{Error, Result};
use crate::runlog::{write_runlog, write_timing};
use crate::store::read_corpus;

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const RUNLOG: &str = "runlog.jsonl";
pub const TIMING: &str = "timing.json";
pub const REPORT: &str = "report.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

/// Pre-training data and network: the pre-training corpus is aligned to the
/// fine-tune corpus channels when one is configured.
pub fn pretrain_inputs(cfg: &RunConfigFile) -> Result<(Corpus, NetworkConfig, Option<ChannelAlignment>)> {
    let pre = read_corpus(cfg.require_pretrain_corpus()?)?;
    let Some(fin_dir) = &cfg.finetune_corpus else {
        let m = &pre.manifest;
        let net = NetworkConfig {
            channel_count: m.channel_count,
            band_count: m.band_count,
            class_count: m.class_count(),
            ..cfg.network.clone()
        };
        return Ok((pre, net, None));
    };
    let fin = crate::store::read_manifest(&fin_dir.join(crate::store::MANIFEST))?;
    let alignment = alignment_for(cfg, &pre.manifest.channel_names, &fin.channel_names)?;
    let aligned = pre.aligned(&alignment)?;
    let net = NetworkConfig {
        channel_count: fin.channel_count,
        band_count: fin.band_count,
        class_count: fin.class_count(),
        ..cfg.network.clone()
    };
    Ok((aligned, net, Some(alignment)))
}

fn alignment_for(cfg: &RunConfigFile, source: &[String], target: &[String]) -> Result<ChannelAlignment> {
    Ok(match cfg.alignment {
        Some(policy) => ChannelAlignment::new(source.to_vec(), target.to_vec(), policy)?,
        None => ChannelAlignment::between(source, target)?,
    })
}

/// The config as recorded in RunLogs: without the output directory, so that
/// identical runs written to different places log identical bytes.
fn portable(cfg: &RunConfigFile) -> RunConfigFile {
    RunConfigFile {
        output_dir: None,
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub network: NetworkConfig,
    pub alignment: Option<ChannelAlignment>,
    pub samples: usize,
    pub epochs: usize,
    pub final_l_c: f64,
    pub final_l_r: f64,
    pub final_l_pret: f64,
    pub checkpoint: PathBuf,
}

/// Pre-trains and writes `config.json`, `checkpoint.ckpt`, `runlog.jsonl`,
/// `timing.json` and `report.json` into `out`.
pub fn run_pretrain(cfg: &RunConfigFile, out: &Path) -> Result<PretrainReport> {
    cfg.validate()?;
    create_dir(out)?;
    let (data, net, alignment) = pretrain_inputs(cfg)?;
    net.validate()?;
    cfg.save(&out.join(CONFIG_SNAPSHOT))?;
    log::info!(
        "pre-training on {} samples ({} channels), {} epochs",
        data.len(),
        net.channel_count,
        cfg.pretrain.epochs
    );
    let init = ParameterStore::init(&net, cfg.pretrain.seed)?;
    let mut seconds = Vec::new();
    let mut tick = Instant::now();
    let (store, log) = training::pretrain(&data.samples, &net, &cfg.pretrain, init, |_| {
        seconds.push(tick.elapsed().as_secs_f64());
        tick = Instant::now();
    })?;
    let ckpt_path = out.join(CHECKPOINT);
    save_checkpoint(&Checkpoint::new(net.clone(), store), &ckpt_path)?;
    write_runlog(&log, &portable(cfg), &out.join(RUNLOG))?;
    write_timing(&seconds, &out.join(TIMING))?;
    let last = log.records.last().and_then(|r| match r {
        training::EpochRecord::Pretrain(p) => Some(*p),
        _ => None,
    });
    let report = PretrainReport {
        network: net,
        alignment,
        samples: data.len(),
        epochs: log.records.len(),
        final_l_c: last.map_or(f64::NAN, |r| r.l_c),
        final_l_r: last.map_or(f64::NAN, |r| r.l_r),
        final_l_pret: last.map_or(f64::NAN, |r| r.l_pret),
        checkpoint: ckpt_path,
    };
    write_json(&report, &out.join(REPORT))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub checkpoint: PathBuf,
    pub label_fraction: f64,
    pub subjects: Vec<SubjectResult>,
    /// Mean and population std over subjects, in percent.
    pub summary: BTreeMap<String, Summary>,
}

impl FinetuneReport {
    /// Mean subject accuracy as a fraction.
    pub fn mean_accuracy(&self) -> f64 {
        let v: Vec<f64> = self.subjects.iter().filter_map(|s| s.metrics.get("accuracy").copied()).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Replaces the classifier head when the checkpoint was trained for another class count.
fn fit_head(ckpt: Checkpoint, corpus: &Corpus, seed: u64) -> Result<(NetworkConfig, ParameterStore)> {
    let net = ckpt.network.clone().ok_or_else(|| Error::Usage("checkpoint has no network description".into()))?;
    ckpt.store.validate(&net)?;
    let m = &corpus.manifest;
    if net.channel_count != m.channel_count || net.band_count != m.band_count {
        return Err(scmm_core::Error::Config(format!(
            "checkpoint expects {}x{} inputs, fine-tune corpus has {}x{}",
            net.channel_count, net.band_count, m.channel_count, m.band_count
        ))
        .into());
    }
    if net.class_count == m.class_count() {
        return Ok((net, ckpt.store));
    }
    let net = NetworkConfig {
        class_count: m.class_count(),
        ..net
    };
    let mut store = ParameterStore::init(&net, seed)?;
    for (name, t) in store.iter_mut() {
        if !name.starts_with("classifier.") {
            *t = ckpt.store.get(name).expect("validated").clone();
        }
    }
    Ok((net, store))
}

/// Fine-tunes the checkpoint on every selected subject of the fine-tune corpus
/// and scores the held-out trials. Per-subject checkpoints and RunLogs land in
/// `out/subjects/`.
pub fn run_finetune(cfg: &RunConfigFile, checkpoint: &Path, out: &Path) -> Result<FinetuneReport> {
    cfg.validate()?;
    let corpus = read_corpus(cfg.require_finetune_corpus()?)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (net, base) = fit_head(ckpt, &corpus, cfg.finetune.seed)?;
    create_dir(&out.join("subjects"))?;
    cfg.save(&out.join(CONFIG_SNAPSHOT))?;
    let split = corpus::leave_trials_out_split(&corpus.manifest, cfg.finetune_trials_per_session, cfg.split_seed)?;
    let subjects = if cfg.subjects.is_empty() {
        (0..corpus.manifest.subjects).collect()
    } else {
        cfg.subjects.clone()
    };
    let mut results = Vec::new();
    for s in subjects {
        let run = training::finetune_subject(&base, &net, &corpus, &cfg.finetune, &split, s)?;
        let dir = out.join("subjects");
        save_checkpoint(&Checkpoint::new(net.clone(), run.store), &dir.join(format!("s{s}.ckpt")))?;
        write_runlog(&run.log, &portable(cfg), &dir.join(format!("s{s}.runlog.jsonl")))?;
        results.push(run.result);
    }
    let maps: Vec<MetricMap> = results.iter().map(|r| r.metrics.clone()).collect();
    let report = FinetuneReport {
        checkpoint: checkpoint.to_path_buf(),
        label_fraction: cfg.finetune.label_fraction,
        subjects: results,
        summary: metrics::aggregate_subjects(&maps),
    };
    write_json(&report, &out.join(REPORT))?;
    Ok(report)
}

/// Scores a checkpoint on the test side of a leave-trials-out split.
pub fn run_eval(checkpoint: &Path, corpus_dir: &Path, split_seed: u64, finetune_trials: usize) -> Result<MetricMap> {
    let corpus = read_corpus(corpus_dir)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let net = ckpt.network().map_err(|d| Error::format(checkpoint, d))?.clone();
    let (_, test) = corpus::leave_trials_out_split(&corpus.manifest, finetune_trials, split_seed)?;
    let preds = training::evaluate(&ckpt.store, &net, &corpus.select(&test))?;
    Ok(metrics::metric_map(&preds)?)
}

/// Sweep axes accepted by [`apply_sweep_value`].
pub const SWEEP_PARAMS: [&str; 7] = ["r", "mu", "metric", "alpha", "tau_s", "tau_c", "batch_size"];

/// Sets one sweep axis of `cfg` from its textual value.
pub fn apply_sweep_value(cfg: &mut RunConfigFile, param: &str, value: &str) -> Result<()> {
    let num = || {
        value
            .parse::<f64>()
            .map_err(|_| Error::Usage(format!("`{value}` is not a number for {param}")))
    };
    let p = &mut cfg.pretrain;
    match param {
        "r" => p.mask.ratio = num()?,
        "mu" => p.mask.threshold = num()?,
        "metric" => p.softcl.metric = value.parse().map_err(|e: scmm_core::Error| Error::Usage(e.to_string()))?,
        "alpha" => p.softcl.alpha = num()?,
        "tau_s" => p.softcl.sharpness = num()?,
        "tau_c" => p.softcl.temperature = num()?,
        "batch_size" => {
            p.batch_size = value
                .parse()
                .map_err(|_| Error::Usage(format!("`{value}` is not a batch size")))?
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown sweep parameter `{other}`; expected one of {}",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub final_l_pret: f64,
    pub summary: BTreeMap<String, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: String,
    pub rows: Vec<SweepRow>,
}

fn sweep_one(cfg: &RunConfigFile, param: &str, value: &str, out: &Path) -> Result<SweepRow> {
    let mut c = cfg.clone();
    apply_sweep_value(&mut c, param, value)?;
    let dir = out.join(format!("{param}={value}"));
    let pre = run_pretrain(&c, &dir.join("pretrain"))?;
    let fin = run_finetune(&c, &pre.checkpoint, &dir.join("finetune"))?;
    log::info!("{param}={value}: accuracy {:.4}", fin.mean_accuracy());
    Ok(SweepRow {
        value: value.to_string(),
        final_l_pret: pre.final_l_pret,
        summary: fin.summary,
    })
}

/// One complete pre-train + fine-tune run per value, all with the same seeds.
pub fn run_sweep(cfg: &RunConfigFile, param: &str, values: &[String], out: &Path, parallel: bool) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Usage("--values is empty".into()));
    }
    for v in values {
        apply_sweep_value(&mut cfg.clone(), param, v)?;
    }
    create_dir(out)?;
    let rows = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = values.iter().map(|v| s.spawn(move || sweep_one(cfg, param, v, out))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        values.iter().map(|v| sweep_one(cfg, param, v, out)).collect::<Result<Vec<_>>>()?
    };
    let table = SweepTable {
        param: param.to_string(),
        rows,
    };
    write_json(&table, &out.join("sweep.json"))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDump {
    pub per_channel: Vec<String>,
    /// Channel-major keep flags.
    pub keep: Vec<Vec<bool>>,
    pub masked_fraction: f64,
}

/// `count` mask plans drawn as the pre-training loop would for samples 0..count of epoch 0.
pub fn inspect_masks(cfg: MaskConfig, channels: usize, bands: usize, count: usize, seed: u64) -> Result<(String, Vec<MaskDump>)> {
    cfg.validate()?;
    if channels == 0 || bands == 0 {
        return Err(Error::Usage("channels and bands must be at least 1".into()));
    }
    let mut text = String::new();
    let mut dumps = Vec::new();
    for i in 0..count {
        let mut r = rng::seeded(rng::derive(seed, &[stream::MASK, 0, i as u64]));
        let plan = cfg.draw(channels, bands, &mut r);
        text.push_str(&format!(
            "mask {i}: {} masked, {} channel-routed\n{plan}",
            plan.masked_count(),
            plan.channel_routed_count()
        ));
        dumps.push(MaskDump {
            per_channel: plan
                .per_channel()
                .iter()
                .map(|s| serde_json::to_value(s).expect("tag").as_str().expect("str").to_string())
                .collect(),
            keep: (0..channels).map(|c| (0..bands).map(|b| plan.kept(c, b)).collect()).collect(),
            masked_fraction: plan.masked_fraction(),
        });
    }
    Ok((text, dumps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityExport {
    pub samples: Vec<usize>,
    pub labels: Vec<usize>,
    /// Cosine similarity of the embeddings (features when no checkpoint is given).
    pub cosine_similarity: Vec<Vec<f64>>,
    /// Soft assignments from original-space distances.
    pub soft_assignments: Vec<Vec<f64>>,
    /// Aggregation weights of every anchor over the other samples.
    pub aggregation_weights: Vec<Vec<f64>>,
}

fn rows_of(t: &Tensor, cols: usize) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i)[..cols].to_vec()).collect()
}

/// Similarity matrices for a random batch of a corpus.
pub fn export_similarity(
    corpus_dir: &Path,
    checkpoint: Option<&Path>,
    batch_size: usize,
    softcl: &SoftClConfig,
    seed: u64,
) -> Result<SimilarityExport> {
    softcl.validate()?;
    let corpus = read_corpus(corpus_dir)?;
    if batch_size < 2 || batch_size > corpus.len() {
        return Err(Error::Usage(format!(
            "batch size must lie in [2, {}], got {batch_size}",
            corpus.len()
        )));
    }
    let mut r = rng::seeded(rng::derive(seed, &[stream::SHUFFLE]));
    let mut idx = rand::seq::index::sample(&mut r, corpus.len(), batch_size).into_vec();
    idx.sort_unstable();
    let batch: Vec<&FeatureMatrix> = idx.iter().map(|&i| &corpus.samples[i]).collect();
    let flat: Vec<&[f64]> = batch.iter().map(|m| m.values()).collect();
    let dist = objectives::normalized_distance(&flat, softcl.metric)?;
    let soft = objectives::soft_assignments(&dist, softcl.alpha, softcl.sharpness)?;

    let mut g = Graph::new();
    let (h, z) = match checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let net = ckpt.network().map_err(|d| Error::format(path, d))?.clone();
            let p = Bound::frozen(&mut g, &ckpt.store);
            let x = g.constant(network::batch_tensor(&batch)?);
            let h = network::encode(&mut g, &p, &net, x)?;
            let z = network::project(&mut g, &p, h)?;
            (h, z)
        }
        None => {
            let rows: Vec<Vec<f64>> = flat.iter().map(|v| v.to_vec()).collect();
            let h = g.constant(Tensor::from_rows(&rows)?);
            (h, h)
        }
    };
    let emb = BatchEmbeddings {
        z_orig: z,
        z_masked: z,
        h_orig: h,
        h_masked: h,
    };
    let agg = objectives::aggregate(
        &mut g,
        &emb,
        softcl.temperature,
        AggregationConfig {
            anchor_masked: false,
            include_masked: false,
        },
    )?;
    let zn = g.normalize_rows(z)?;
    let znt = g.transpose(zn)?;
    let cos = g.matmul(zn, znt)?;
    let b = batch.len();
    Ok(SimilarityExport {
        labels: batch.iter().map(|m| m.label.unwrap_or(0)).collect(),
        samples: idx,
        cosine_similarity: rows_of(g.value(cos), b),
        soft_assignments: rows_of(soft.as_tensor(), b),
        aggregation_weights: rows_of(&agg.weights, b),
    })
}
