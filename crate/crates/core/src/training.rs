//! Pre-training, fine-tuning, evaluation and the cross-corpus protocol.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, ChannelAlignment, Corpus};
use crate::error::config_err;
use crate::masking::{self, MaskConfig, MaskPlan};
use crate::metrics::{self, MetricMap, PredictionBatch, Summary};
use crate::network::{self, Bound, NetworkConfig, ParameterStore, LOG_SIGMA_C, LOG_SIGMA_R};
use crate::objectives::{self, AggregationConfig, BatchEmbeddings, SoftClConfig};
use crate::optim::{self, AdamState};
use crate::rng::{self, stream};
use crate::signal::FeatureMatrix;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Which pre-training losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    WithoutContrastive,
    WithoutReconstruction,
}

impl Ablation {
    pub fn contrastive(self) -> bool {
        self != Self::WithoutContrastive
    }

    pub fn reconstruction(self) -> bool {
        self != Self::WithoutReconstruction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub mask: MaskConfig,
    pub softcl: SoftClConfig,
    pub aggregation: AggregationConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 5e-4,
            weight_decay: 3e-4,
            mask: MaskConfig::default(),
            softcl: SoftClConfig::default(),
            aggregation: AggregationConfig::default(),
            ablation: Ablation::Full,
            seed: 0,
        }
    }
}

fn check_rates(epochs: usize, batch_size: usize, lr: f64, wd: f64) -> Result<()> {
    if epochs == 0 || batch_size == 0 {
        return config_err("epochs and batch_size must be positive");
    }
    if !(lr > 0.0 && lr.is_finite()) || !(wd >= 0.0 && wd.is_finite()) {
        return config_err(format!("invalid learning rate {lr} or weight decay {wd}"));
    }
    Ok(())
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.epochs, self.batch_size, self.learning_rate, self.weight_decay)?;
        if self.batch_size < 2 {
            return config_err("pre-training needs batch_size >= 2");
        }
        self.mask.validate()?;
        self.softcl.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    #[default]
    Joint,
    LinearProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub probe_mode: ProbeMode,
    pub label_fraction: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            learning_rate: 5e-4,
            weight_decay: 3e-4,
            probe_mode: ProbeMode::Joint,
            label_fraction: 1.0,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.epochs, self.batch_size, self.learning_rate, self.weight_decay)?;
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return config_err(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub l_c: f64,
    pub l_r: f64,
    pub l_pret: f64,
    pub log_sigma_c: f64,
    pub log_sigma_r: f64,
    pub batches: usize,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpochRecord {
    Pretrain(PretrainRecord),
    Finetune(FinetuneRecord),
}

/// One record per completed epoch, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<EpochRecord>,
}

/// Scalar losses and graph handles of one pre-training forward pass.
#[derive(Debug, Clone)]
pub struct PretrainForward {
    pub l_c: Option<Var>,
    pub l_r: Option<Var>,
    pub total: Var,
    /// Aggregation weights `[B, 2B]`, when reconstruction is active.
    pub aggregation_weights: Option<Tensor>,
}

/// Builds the pre-training loss of one batch on `g` from parameters bound in `p`.
pub fn pretrain_forward(
    g: &mut Graph,
    p: &Bound,
    net: &NetworkConfig,
    cfg: &PretrainConfig,
    batch: &[&FeatureMatrix],
    masks: &[MaskPlan],
) -> Result<PretrainForward> {
    if batch.len() != masks.len() {
        return Err(Error::Contract(format!("{} samples but {} masks", batch.len(), masks.len())));
    }
    let masked: Vec<FeatureMatrix> = batch
        .iter()
        .zip(masks)
        .map(|(m, plan)| masking::apply(m, plan))
        .collect::<Result<_>>()?;
    let masked_refs: Vec<&FeatureMatrix> = masked.iter().collect();

    let x = g.constant(network::batch_tensor(batch)?);
    let xm = g.constant(network::batch_tensor(&masked_refs)?);
    let h_orig = network::encode(g, p, net, x)?;
    let h_masked = network::encode(g, p, net, xm)?;
    let z_orig = network::project(g, p, h_orig)?;
    let z_masked = network::project(g, p, h_masked)?;
    let emb = BatchEmbeddings {
        z_orig,
        z_masked,
        h_orig,
        h_masked,
    };

    let l_c = if cfg.ablation.contrastive() {
        let rows: Vec<&[f64]> = batch.iter().map(|m| m.values()).collect();
        let table = objectives::batch_assignments(&cfg.softcl, &rows, g.value(z_orig))?;
        Some(objectives::soft_contrastive_loss(g, &emb, &table, cfg.softcl.temperature)?)
    } else {
        None
    };
    let (l_r, weights) = if cfg.ablation.reconstruction() {
        let agg = objectives::aggregate(g, &emb, cfg.softcl.temperature, cfg.aggregation)?;
        let x_r = network::decode(g, p, net, agg.h_r)?;
        let target = g.constant(network::target_tensor(batch)?);
        (Some(objectives::reconstruction_loss(g, target, x_r)?), Some(agg.weights))
    } else {
        (None, None)
    };
    let s_c = p.var(LOG_SIGMA_C)?;
    let s_r = p.var(LOG_SIGMA_R)?;
    let total = objectives::total_loss(g, l_c, l_r, s_c, s_r)?;
    Ok(PretrainForward {
        l_c,
        l_r,
        total,
        aggregation_weights: weights,
    })
}

/// Parameters touched by pre-training.
pub fn pretrain_parameter(name: &str) -> bool {
    !name.starts_with("classifier.")
}

/// The per-sample masks of one epoch, drawn from per-sample derived seeds.
pub fn epoch_masks(cfg: &PretrainConfig, epoch: usize, indices: &[usize], channels: usize, bands: usize) -> Vec<MaskPlan> {
    indices
        .iter()
        .map(|&i| {
            let mut r = rng::seeded(rng::derive(cfg.seed, &[stream::MASK, epoch as u64, i as u64]));
            cfg.mask.draw(channels, bands, &mut r)
        })
        .collect()
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(rng::derive(seed, &[stream::SHUFFLE, epoch as u64])));
    perm
}

fn scalar(g: &Graph, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.value(v).data()[0])
}

/// Runs the pre-training loop from `store` and returns the final-epoch parameters.
pub fn pretrain(
    data: &[FeatureMatrix],
    net: &NetworkConfig,
    cfg: &PretrainConfig,
    mut store: ParameterStore,
    mut on_epoch: impl FnMut(&PretrainRecord),
) -> Result<(ParameterStore, RunLog)> {
    cfg.validate()?;
    net.validate()?;
    store.validate(net)?;
    if data.len() < 2 {
        return config_err(format!("pre-training needs at least 2 samples, got {}", data.len()));
    }
    let (c, f) = (net.channel_count, net.band_count);
    if let Some(m) = data.iter().find(|m| m.channels() != c || m.bands() != f) {
        return Err(Error::Dimension {
            op: "pretrain",
            left: vec![c, f],
            right: vec![m.channels(), m.bands()],
        });
    }
    let mut state = AdamState::new();
    let mut log = RunLog {
        seed: cfg.seed,
        records: Vec::new(),
    };
    let (mut total_batches, mut total_skipped) = (0usize, 0usize);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, data.len());
        let (mut sc, mut sr, mut st, mut done, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            total_batches += 1;
            let batch: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &data[i]).collect();
            let masks = epoch_masks(cfg, epoch, chunk, c, f);
            let mut g = Graph::new();
            let p = Bound::bind(&mut g, &store, pretrain_parameter, |_| true);
            let fwd = match pretrain_forward(&mut g, &p, net, cfg, &batch, &masks) {
                Ok(fwd) => fwd,
                Err(Error::DegenerateBatch(why)) => {
                    log::warn!("epoch {epoch}: skipping degenerate batch: {why}");
                    skipped += 1;
                    total_skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            g.backward(fwd.total)?;
            optim::adam_step(&mut store, &p.gradients(&g), cfg.learning_rate, cfg.weight_decay, &mut state)?;
            sc += scalar(&g, fwd.l_c);
            sr += scalar(&g, fwd.l_r);
            st += scalar(&g, Some(fwd.total));
            done += 1;
        }
        if total_skipped * 10 > total_batches {
            return Err(Error::DegenerateBatch(format!(
                "{total_skipped} of {total_batches} batches skipped (over 10%); aborting"
            )));
        }
        let n = done.max(1) as f64;
        let rec = PretrainRecord {
            epoch: epoch + 1,
            l_c: sc / n,
            l_r: sr / n,
            l_pret: st / n,
            log_sigma_c: store.log_sigma_c(),
            log_sigma_r: store.log_sigma_r(),
            batches: done,
            skipped_batches: skipped,
        };
        log::info!(
            "pretrain epoch {}: L_C {:.5} L_R {:.5} L_pret {:.5}",
            rec.epoch,
            rec.l_c,
            rec.l_r,
            rec.l_pret
        );
        on_epoch(&rec);
        log.records.push(EpochRecord::Pretrain(rec));
    }
    Ok((store, log))
}

fn labels_of(data: &[FeatureMatrix]) -> Result<Vec<usize>> {
    data.iter()
        .enumerate()
        .map(|(i, m)| m.label.ok_or_else(|| Error::Contract(format!("sample {i} has no label"))))
        .collect()
}

/// Mean cross-entropy of `logits` against `labels` on the graph.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            left: s,
            right: vec![labels.len()],
        });
    }
    let k = s[1];
    let mut onehot = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Contract(format!("label {l} out of range for {k} classes")));
        }
        onehot[i * k + l] = 1.0;
    }
    let lp = g.log_softmax_rows(logits)?;
    let t = g.constant(Tensor::new(vec![labels.len(), k], onehot)?);
    let picked = g.mul(lp, t)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0 / labels.len() as f64)
}

/// Trains the classifier (and the encoder in joint mode) with cross-entropy.
pub fn finetune(
    mut store: ParameterStore,
    net: &NetworkConfig,
    data: &[FeatureMatrix],
    cfg: &FinetuneConfig,
    mut on_epoch: impl FnMut(&FinetuneRecord),
) -> Result<(ParameterStore, RunLog)> {
    cfg.validate()?;
    net.validate()?;
    store.validate(net)?;
    let all_labels = labels_of(data)?;
    for k in 0..net.class_count {
        if !all_labels.contains(&k) {
            return config_err(format!("class {k} is absent from the fine-tune set"));
        }
    }
    if let Some(l) = all_labels.iter().find(|&&l| l >= net.class_count) {
        return config_err(format!("label {l} exceeds the network's {} classes", net.class_count));
    }
    let keep = corpus::subsample_labeled(&all_labels, cfg.label_fraction, cfg.seed)?;
    let trainable = |name: &str| {
        name.starts_with("classifier.") || (cfg.probe_mode == ProbeMode::Joint && name.starts_with("encoder."))
    };
    let used = |name: &str| name.starts_with("classifier.") || name.starts_with("encoder.");
    let mut state = AdamState::new();
    let mut log = RunLog {
        seed: cfg.seed,
        records: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, keep.len());
        let (mut ce, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let idx: Vec<usize> = chunk.iter().map(|&j| keep[j]).collect();
            let batch: Vec<&FeatureMatrix> = idx.iter().map(|&i| &data[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| all_labels[i]).collect();
            let mut g = Graph::new();
            let p = Bound::bind(&mut g, &store, used, trainable);
            let x = g.constant(network::batch_tensor(&batch)?);
            let h = network::encode(&mut g, &p, net, x)?;
            let logits = network::classify(&mut g, &p, h)?;
            let loss = cross_entropy(&mut g, logits, &labels)?;
            let lv = g.value(logits);
            correct += (0..labels.len())
                .filter(|&i| {
                    let r = lv.row(i);
                    (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b }) == labels[i]
                })
                .count();
            ce += g.value(loss).data()[0] * labels.len() as f64;
            g.backward(loss)?;
            optim::adam_step(&mut store, &p.gradients(&g), cfg.learning_rate, cfg.weight_decay, &mut state)?;
        }
        let rec = FinetuneRecord {
            epoch: epoch + 1,
            cross_entropy: ce / keep.len() as f64,
            accuracy: correct as f64 / keep.len() as f64,
            samples: keep.len(),
        };
        log::debug!("finetune epoch {}: CE {:.5} acc {:.4}", rec.epoch, rec.cross_entropy, rec.accuracy);
        on_epoch(&rec);
        log.records.push(EpochRecord::Finetune(rec));
    }
    Ok((store, log))
}

/// Class probabilities of every sample against its label.
pub fn evaluate(store: &ParameterStore, net: &NetworkConfig, data: &[FeatureMatrix]) -> Result<PredictionBatch> {
    let labels = labels_of(data)?;
    let mut rows = Vec::with_capacity(data.len());
    for chunk in data.chunks(512) {
        let refs: Vec<&FeatureMatrix> = chunk.iter().collect();
        let l = network::logits(store, net, &refs)?;
        for i in 0..l.rows() {
            rows.extend_from_slice(l.row(i));
        }
    }
    let logits = Tensor::new(vec![data.len(), net.class_count], rows)?;
    PredictionBatch::from_logits(&logits, labels)
}

/// Whether the encoder starts from pre-training or from its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossCorpusConfig {
    /// Layer widths; channel, band and class counts are taken from the data.
    pub network: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub finetune_trials_per_session: usize,
    pub split_seed: u64,
    pub init: InitMode,
    /// Fine-tune subjects to evaluate; all when empty.
    pub subjects: Vec<usize>,
}

impl Default for CrossCorpusConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            finetune_trials_per_session: 9,
            split_seed: 0,
            init: InitMode::Pretrained,
            subjects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: usize,
    pub finetune_samples: usize,
    pub test_samples: usize,
    pub metrics: MetricMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCorpusReport {
    pub alignment: ChannelAlignment,
    pub init: InitMode,
    pub ablation: Ablation,
    pub pretrain_log: Option<RunLog>,
    pub subjects: Vec<SubjectResult>,
    /// Mean and population std over subjects, in percent.
    pub summary: BTreeMap<String, Summary>,
}

impl CrossCorpusReport {
    /// Mean accuracy over subjects as a fraction (unrounded).
    pub fn mean_accuracy(&self) -> f64 {
        let v: Vec<f64> = self.subjects.iter().filter_map(|s| s.metrics.get("accuracy").copied()).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Network shape for the aligned pre-training data and the fine-tune classes.
pub fn network_for(widths: &NetworkConfig, finetune: &Corpus) -> NetworkConfig {
    NetworkConfig {
        channel_count: finetune.manifest.channel_count,
        band_count: finetune.manifest.band_count,
        class_count: finetune.manifest.class_count(),
        ..widths.clone()
    }
}

/// Pre-trains on the aligned pre-training corpus (unless `init` is random),
/// then fine-tunes and tests each fine-tune subject on a leave-trials-out split.
pub fn cross_corpus_run(
    pretrain_corpus: &Corpus,
    finetune_corpus: &Corpus,
    alignment: &ChannelAlignment,
    cfg: &CrossCorpusConfig,
) -> Result<CrossCorpusReport> {
    if alignment.target_channels != finetune_corpus.manifest.channel_names {
        return Err(Error::Alignment(
            "alignment target must be the fine-tune corpus channel list".to_string(),
        ));
    }
    if pretrain_corpus.manifest.band_count != finetune_corpus.manifest.band_count {
        return config_err("corpora disagree on the band count");
    }
    let net = network_for(&cfg.network, finetune_corpus);
    let init = ParameterStore::init(&net, cfg.pretrain.seed)?;
    let (base, pretrain_log) = match cfg.init {
        InitMode::Random => (init, None),
        InitMode::Pretrained => {
            let aligned = pretrain_corpus.aligned(alignment)?;
            let (store, log) = pretrain(&aligned.samples, &net, &cfg.pretrain, init, |_| {})?;
            (store, Some(log))
        }
    };
    let results = finetune_subjects(&base, &net, finetune_corpus, cfg)?;
    let maps: Vec<MetricMap> = results.iter().map(|r| r.metrics.clone()).collect();
    Ok(CrossCorpusReport {
        alignment: alignment.clone(),
        init: cfg.init,
        ablation: cfg.pretrain.ablation,
        pretrain_log,
        subjects: results,
        summary: metrics::aggregate_subjects(&maps),
    })
}

/// Fine-tuned parameters, fine-tune log and test score of one subject.
#[derive(Debug, Clone)]
pub struct SubjectRun {
    pub result: SubjectResult,
    pub store: ParameterStore,
    pub log: RunLog,
}

/// Fine-tunes a copy of `base` on one subject's fine-tune trials and scores it
/// on the held-out trials. `split` is the corpus-wide leave-trials-out split.
pub fn finetune_subject(
    base: &ParameterStore,
    net: &NetworkConfig,
    finetune_corpus: &Corpus,
    finetune: &FinetuneConfig,
    split: &(Vec<usize>, Vec<usize>),
    subject: usize,
) -> Result<SubjectRun> {
    if subject >= finetune_corpus.manifest.subjects {
        return config_err(format!("subject {subject} not in the fine-tune corpus"));
    }
    let of_subject = |ix: &[usize]| -> Vec<FeatureMatrix> {
        let v: Vec<usize> = ix
            .iter()
            .copied()
            .filter(|&i| finetune_corpus.manifest.sample_files[i].subject == subject)
            .collect();
        finetune_corpus.select(&v)
    };
    let (train, test) = (of_subject(&split.0), of_subject(&split.1));
    let fcfg = FinetuneConfig {
        seed: rng::derive(finetune.seed, &[subject as u64]),
        ..*finetune
    };
    let (store, log) = self::finetune(base.clone(), net, &train, &fcfg, |_| {})?;
    let preds = evaluate(&store, net, &test)?;
    let m = metrics::metric_map(&preds)?;
    log::info!("subject {subject}: accuracy {:.4}", m["accuracy"]);
    Ok(SubjectRun {
        result: SubjectResult {
            subject,
            finetune_samples: train.len(),
            test_samples: test.len(),
            metrics: m,
        },
        store,
        log,
    })
}

/// Subjects selected by `cfg`, all of them when the list is empty.
pub fn selected_subjects(cfg: &CrossCorpusConfig, finetune_corpus: &Corpus) -> Vec<usize> {
    if cfg.subjects.is_empty() {
        (0..finetune_corpus.manifest.subjects).collect()
    } else {
        cfg.subjects.clone()
    }
}

/// [`finetune_subject`] for every selected subject.
pub fn finetune_subjects(
    base: &ParameterStore,
    net: &NetworkConfig,
    finetune_corpus: &Corpus,
    cfg: &CrossCorpusConfig,
) -> Result<Vec<SubjectResult>> {
    let split =
        corpus::leave_trials_out_split(&finetune_corpus.manifest, cfg.finetune_trials_per_session, cfg.split_seed)?;
    selected_subjects(cfg, finetune_corpus)
        .into_iter()
        .map(|s| finetune_subject(base, net, finetune_corpus, &cfg.finetune, &split, s).map(|r| r.result))
        .collect()
}

/// Violations of the expected order full >= w/o L_R >= w/o L_C.
pub fn ablation_inversions(full: f64, without_reconstruction: f64, without_contrastive: f64) -> Vec<String> {
    let mut out = Vec::new();
    if full < without_reconstruction {
        out.push(format!("full ({full:.4}) < w/o L_R ({without_reconstruction:.4})"));
    }
    if without_reconstruction < without_contrastive {
        out.push(format!(
            "w/o L_R ({without_reconstruction:.4}) < w/o L_C ({without_contrastive:.4})"
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: CrossCorpusReport,
    pub without_reconstruction: CrossCorpusReport,
    pub without_contrastive: CrossCorpusReport,
    /// Empty when mean accuracies follow full >= w/o L_R >= w/o L_C.
    pub inversions: Vec<String>,
}

/// The full model and both single-loss ablations under one configuration.
pub fn ablation_run(
    pretrain_corpus: &Corpus,
    finetune_corpus: &Corpus,
    alignment: &ChannelAlignment,
    cfg: &CrossCorpusConfig,
) -> Result<AblationReport> {
    let run = |ablation| {
        let mut c = cfg.clone();
        c.init = InitMode::Pretrained;
        c.pretrain.ablation = ablation;
        cross_corpus_run(pretrain_corpus, finetune_corpus, alignment, &c)
    };
    let full = run(Ablation::Full)?;
    let without_reconstruction = run(Ablation::WithoutReconstruction)?;
    let without_contrastive = run(Ablation::WithoutContrastive)?;
    let inversions = ablation_inversions(
        full.mean_accuracy(),
        without_reconstruction.mean_accuracy(),
        without_contrastive.mean_accuracy(),
    );
    for i in &inversions {
        log::warn!("ablation order inverted: {i}");
    }
    Ok(AblationReport {
        full,
        without_reconstruction,
        without_contrastive,
        inversions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, ContinuityProfile, CorpusParams};
    use crate::network::ConvStage;
    use crate::objectives::SoftClMode;

    fn tiny_net(c: usize, k: usize) -> NetworkConfig {
        NetworkConfig {
            channel_count: c,
            band_count: 5,
            encoder: vec![ConvStage::new(4), ConvStage::new(6), ConvStage::new(8)],
            embedding_dim: 8,
            projection_dim: 6,
            classifier_hidden: 8,
            class_count: k,
        }
    }

    fn tiny_corpus(c: usize, seed: u64) -> Corpus {
        let p = CorpusParams {
            corpus_id: "t".into(),
            subjects: 2,
            sessions_per_subject: 1,
            trials_per_session: 6,
            segments_per_trial: 8,
            channel_count: c,
            band_count: 5,
            class_names: ["a", "b", "c"].map(String::from).to_vec(),
            window_seconds: 1.0,
            raw_sample_rate: None,
        };
        generate_corpus(&p, &ContinuityProfile::default(), seed).unwrap()
    }

    #[test]
    fn pretrain_smoke_and_determinism() {
        let corpus = tiny_corpus(6, 1);
        let net = tiny_net(6, 3);
        let cfg = PretrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 4,
            ..Default::default()
        };
        let run = || {
            let init = ParameterStore::init(&net, 4).unwrap();
            pretrain(&corpus.samples, &net, &cfg, init, |_| {}).unwrap()
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la.records.len(), 2);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        a.validate(&net).unwrap();
        // the classifier is not touched by pre-training
        let init = ParameterStore::init(&net, 4).unwrap();
        assert_eq!(a.get("classifier.fc1.weight"), init.get("classifier.fc1.weight"));
        assert_ne!(a.get("encoder.conv1.weight"), init.get("encoder.conv1.weight"));
    }

    #[test]
    fn degenerate_data_aborts() {
        let net = tiny_net(6, 3);
        let same: Vec<FeatureMatrix> = (0..8)
            .map(|_| FeatureMatrix::new(6, 5, (0..30).map(|v| v as f64).collect()).unwrap())
            .collect();
        let cfg = PretrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        let init = ParameterStore::init(&net, 0).unwrap();
        assert!(matches!(
            pretrain(&same, &net, &cfg, init.clone(), |_| {}),
            Err(Error::DegenerateBatch(_))
        ));
        // hard mode never computes distances
        let hard = PretrainConfig {
            softcl: SoftClConfig {
                mode: SoftClMode::Hard,
                ..Default::default()
            },
            ..cfg
        };
        assert!(pretrain(&same, &net, &hard, init, |_| {}).is_ok());
    }

    #[test]
    fn linear_probe_freezes_encoder() {
        let corpus = tiny_corpus(6, 2);
        let net = tiny_net(6, 3);
        let init = ParameterStore::init(&net, 1).unwrap();
        let cfg = FinetuneConfig {
            epochs: 2,
            batch_size: 16,
            probe_mode: ProbeMode::LinearProbe,
            ..Default::default()
        };
        let (tuned, log) = finetune(init.clone(), &net, &corpus.samples, &cfg, |_| {}).unwrap();
        assert_eq!(log.records.len(), 2);
        for (name, t) in init.iter() {
            if name.starts_with("encoder.") {
                assert_eq!(tuned.get(name).unwrap(), t, "{name}");
            }
        }
        assert_ne!(tuned.get("classifier.fc2.weight"), init.get("classifier.fc2.weight"));
    }

    #[test]
    fn missing_class_rejected() {
        let corpus = tiny_corpus(6, 2);
        let net = tiny_net(6, 3);
        let only: Vec<FeatureMatrix> = corpus.samples.iter().filter(|m| m.label != Some(2)).cloned().collect();
        let init = ParameterStore::init(&net, 1).unwrap();
        assert!(matches!(
            finetune(init, &net, &only, &FinetuneConfig::default(), |_| {}),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn uniform_logits_cross_entropy() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[4, 3]));
        let ce = cross_entropy(&mut g, l, &[0, 1, 2, 1]).unwrap();
        assert!((g.value(ce).data()[0] - libm::log(3.0)).abs() < 1e-12);
    }

    #[test]
    fn cross_corpus_smoke() {
        let a = tiny_corpus(8, 1);
        let b = tiny_corpus(6, 2);
        let align = ChannelAlignment::between(&a.manifest.channel_names, &b.manifest.channel_names).unwrap();
        assert_eq!(align.policy, corpus::AlignmentPolicy::DropExtra);
        let cfg = CrossCorpusConfig {
            network: tiny_net(0, 0),
            pretrain: PretrainConfig {
                epochs: 1,
                batch_size: 16,
                ..Default::default()
            },
            finetune: FinetuneConfig {
                epochs: 2,
                batch_size: 16,
                ..Default::default()
            },
            finetune_trials_per_session: 3,
            ..Default::default()
        };
        let r = cross_corpus_run(&a, &b, &align, &cfg).unwrap();
        assert_eq!(r.subjects.len(), 2);
        assert_eq!(r.summary.len(), 6);
        assert!(r.pretrain_log.is_some());
    }

    #[test]
    fn inversion_flags() {
        assert!(ablation_inversions(0.8, 0.7, 0.6).is_empty());
        assert_eq!(ablation_inversions(0.6, 0.7, 0.8).len(), 2);
    }
}
