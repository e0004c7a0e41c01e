//! Synthetic labeled corpora with short-term continuity, channel alignment and splits.
//!
//! A trial of class `k` has mean `M = sep * P_k + S_subject + J_trial`, where the
//! class prototypes `P_k` (centered across classes) are keyed by channel index
//! under a shared prototype seed, so two corpora generated with different seeds
//! but the same prototype seed agree on the class structure of their common
//! channels. Segment `t` of the trial is `M + u_t + noise * eps_t` with the
//! stationary AR(1) latent `u_t = rho u_{t-1} + sqrt(1 - rho^2) eta_t`.
//! Trial `t` of a session carries label `t mod K`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::math;
use crate::rng::{self, stream};
use crate::signal::{self, BandSpec, BandpassFilter, FeatureMatrix, Provenance, RawRecording};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuityProfile {
    /// AR(1) coefficient `rho` in [0, 1).
    pub ar_coefficient: f64,
    /// Scale of the class prototypes in the trial mean.
    pub class_separation: f64,
    /// Standard deviation of the per-segment observation noise.
    pub noise_scale: f64,
    /// Standard deviation of the per-trial mean offset.
    pub trial_spread: f64,
    /// Standard deviation of the per-subject mean offset.
    pub subject_spread: f64,
    /// Fraction of prototype variance carried by a band profile common to all channels.
    pub spatial_coherence: f64,
    /// Same fraction for the subject offset, trial offset and latent drift.
    pub nuisance_coherence: f64,
    /// Seed of the class prototypes, shared by corpora meant to agree on classes.
    pub prototype_seed: u64,
}

impl Default for ContinuityProfile {
    fn default() -> Self {
        Self {
            ar_coefficient: 0.9,
            class_separation: 1.0,
            noise_scale: 0.3,
            trial_spread: 0.5,
            subject_spread: 0.5,
            spatial_coherence: 0.5,
            nuisance_coherence: 0.5,
            prototype_seed: 0,
        }
    }
}

impl ContinuityProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return config_err(format!("ar_coefficient must lie in [0, 1), got {}", self.ar_coefficient));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return config_err("class_separation must be positive");
        }
        for (name, v) in [("spatial_coherence", self.spatial_coherence), ("nuisance_coherence", self.nuisance_coherence)] {
            if !(0.0..=1.0).contains(&v) {
                return config_err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("trial_spread", self.trial_spread),
            ("subject_spread", self.subject_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return config_err(format!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Shape of a corpus to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub corpus_id: String,
    pub subjects: usize,
    pub sessions_per_subject: usize,
    pub trials_per_session: usize,
    pub segments_per_trial: usize,
    pub channel_count: usize,
    pub band_count: usize,
    pub class_names: Vec<String>,
    pub window_seconds: f64,
    /// When set, segments are synthesized as band-limited noise at this
    /// sample rate and run through feature extraction.
    pub raw_sample_rate: Option<f64>,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self::seed_like()
    }
}

impl CorpusParams {
    /// 15 subjects, 3 sessions of 15 trials, 62 channels, 3 classes.
    pub fn seed_like() -> Self {
        Self {
            corpus_id: "synthetic-seed".to_string(),
            subjects: 15,
            sessions_per_subject: 3,
            trials_per_session: 15,
            segments_per_trial: 20,
            channel_count: 62,
            band_count: 5,
            class_names: ["negative", "neutral", "positive"].map(String::from).to_vec(),
            window_seconds: 1.0,
            raw_sample_rate: None,
        }
    }

    /// 32 subjects, 1 session of 40 trials, 32 channels, 2 classes.
    pub fn deap_like() -> Self {
        Self {
            corpus_id: "synthetic-deap".to_string(),
            subjects: 32,
            sessions_per_subject: 1,
            trials_per_session: 40,
            segments_per_trial: 20,
            channel_count: 32,
            band_count: 5,
            class_names: ["low", "high"].map(String::from).to_vec(),
            window_seconds: 1.0,
            raw_sample_rate: None,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.subjects * self.sessions_per_subject * self.trials_per_session * self.segments_per_trial
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("subjects", self.subjects),
            ("sessions_per_subject", self.sessions_per_subject),
            ("trials_per_session", self.trials_per_session),
            ("segments_per_trial", self.segments_per_trial),
            ("channel_count", self.channel_count),
            ("band_count", self.band_count),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return config_err(format!("{name} must be at least 1"));
        }
        if self.class_names.len() < 2 {
            return config_err("at least 2 classes are needed");
        }
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return config_err("window_seconds must be positive");
        }
        if let Some(fs) = self.raw_sample_rate {
            let bands = BandSpec::standard();
            if self.band_count > bands.len() {
                return config_err(format!("raw-signal mode supports at most {} bands", bands.len()));
            }
            for b in &bands[..self.band_count] {
                b.validate(fs)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub path: String,
    pub subject: usize,
    pub session: usize,
    pub trial: usize,
    pub segment: usize,
    pub label: usize,
}

impl SampleEntry {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            subject: self.subject,
            session: self.session,
            trial: self.trial,
            segment: self.segment,
        }
    }
}

/// Relative path of a sample inside a corpus directory.
pub fn sample_path(p: &Provenance) -> String {
    format!("samples/s{}_e{}_t{}_g{}.scmm", p.subject, p.session, p.trial, p.segment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub subjects: usize,
    pub sessions_per_subject: usize,
    pub trials_per_session: usize,
    pub segments_per_trial: usize,
    pub channel_count: usize,
    pub band_count: usize,
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub window_seconds: f64,
    pub generator_seed: u64,
    #[serde(default)]
    pub profile: Option<ContinuityProfile>,
    pub sample_files: Vec<SampleEntry>,
}

impl CorpusManifest {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected =
            self.subjects * self.sessions_per_subject * self.trials_per_session * self.segments_per_trial;
        if self.sample_files.len() != expected {
            return config_err(format!(
                "manifest lists {} samples, its counts imply {expected}",
                self.sample_files.len()
            ));
        }
        if self.channel_names.len() != self.channel_count {
            return config_err(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.channel_count
            ));
        }
        if let Some(e) = self.sample_files.iter().find(|e| e.label >= self.class_names.len()) {
            return config_err(format!("sample {} has label {} out of range", e.path, e.label));
        }
        Ok(())
    }
}

/// A manifest with its samples in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub samples: Vec<FeatureMatrix>,
}

impl Corpus {
    pub fn new(manifest: CorpusManifest, samples: Vec<FeatureMatrix>) -> Result<Self> {
        manifest.validate()?;
        if samples.len() != manifest.sample_files.len() {
            return config_err(format!(
                "{} samples for {} manifest entries",
                samples.len(),
                manifest.sample_files.len()
            ));
        }
        let (c, f) = (manifest.channel_count, manifest.band_count);
        if let Some(s) = samples.iter().find(|s| s.channels() != c || s.bands() != f) {
            return Err(Error::Dimension {
                op: "corpus",
                left: vec![c, f],
                right: vec![s.channels(), s.bands()],
            });
        }
        Ok(Self { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Vec<FeatureMatrix> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }

    /// Indices of every sample of `subject`.
    pub fn subject_indices(&self, subject: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.manifest.sample_files[i].subject == subject)
            .collect()
    }

    /// Applies a channel alignment to every sample.
    pub fn aligned(&self, alignment: &ChannelAlignment) -> Result<Self> {
        if alignment.source_channels != self.manifest.channel_names {
            return Err(Error::Alignment(
                "alignment source channels differ from the corpus channels".to_string(),
            ));
        }
        let samples = self
            .samples
            .iter()
            .map(|m| align_channels(m, alignment))
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = self.manifest.clone();
        manifest.channel_count = alignment.target_channels.len();
        manifest.channel_names = alignment.target_channels.clone();
        Self::new(manifest, samples)
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect()
}

/// Class prototypes `[K][C*F]`, centered across classes.
pub fn class_prototypes(
    classes: usize,
    channels: usize,
    bands: usize,
    prototype_seed: u64,
    coherence: f64,
) -> Vec<Vec<f64>> {
    let (shared, own) = (math::sqrt(coherence), math::sqrt(1.0 - coherence));
    let mut protos: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let mut r = rng::seeded(rng::derive(prototype_seed, &[stream::PROTOTYPE, k as u64, u64::MAX]));
            let profile = normal_vec(&mut r, bands, shared);
            let mut p = Vec::with_capacity(channels * bands);
            for c in 0..channels {
                let mut r = rng::seeded(rng::derive(prototype_seed, &[stream::PROTOTYPE, k as u64, c as u64]));
                p.extend(normal_vec(&mut r, bands, own).iter().zip(&profile).map(|(a, b)| a + b));
            }
            p
        })
        .collect();
    for e in 0..channels * bands {
        let mean = protos.iter().map(|p| p[e]).sum::<f64>() / classes as f64;
        protos.iter_mut().for_each(|p| p[e] -= mean);
    }
    protos
}

/// `sqrt(coherence)` of a band profile shared by all channels plus
/// `sqrt(1 - coherence)` of independent per-entry draws, scaled by `sd`.
fn mixed_vec<R: Rng>(rng: &mut R, channels: usize, bands: usize, sd: f64, coherence: f64) -> Vec<f64> {
    let profile = normal_vec(rng, bands, sd * math::sqrt(coherence));
    let own = normal_vec(rng, channels * bands, sd * math::sqrt(1.0 - coherence));
    own.iter().enumerate().map(|(i, v)| v + profile[i % bands]).collect()
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// The segments of one trial in the latent feature space (before raw synthesis).
fn trial_features(
    params: &CorpusParams,
    profile: &ContinuityProfile,
    prototypes: &[Vec<f64>],
    seed: u64,
    subject: usize,
    session: usize,
    trial: usize,
) -> Vec<Vec<f64>> {
    let (c_n, f_n) = (params.channel_count, params.band_count);
    let n = c_n * f_n;
    let gamma = profile.nuisance_coherence;
    let label = trial % params.class_names.len();
    let (s, e, t) = (subject as u64, session as u64, trial as u64);
    let mut r = rng::seeded(rng::derive(seed, &[stream::CORPUS, 0, s]));
    let shift = mixed_vec(&mut r, c_n, f_n, profile.subject_spread, gamma);
    let mut r = rng::seeded(rng::derive(seed, &[stream::CORPUS, 1, s, e, t]));
    let jitter = mixed_vec(&mut r, c_n, f_n, profile.trial_spread, gamma);
    let mean: Vec<f64> = (0..n)
        .map(|i| profile.class_separation * prototypes[label][i] + shift[i] + jitter[i])
        .collect();

    let mut r = rng::seeded(rng::derive(seed, &[stream::CORPUS, 2, s, e, t]));
    let rho = profile.ar_coefficient;
    let innov = math::sqrt(1.0 - rho * rho);
    let mut u = mixed_vec(&mut r, c_n, f_n, 1.0, gamma);
    let mut out = Vec::with_capacity(params.segments_per_trial);
    for g in 0..params.segments_per_trial {
        if g > 0 {
            let eta = mixed_vec(&mut r, c_n, f_n, 1.0, gamma);
            for (v, d) in u.iter_mut().zip(eta) {
                *v = rho * *v + innov * d;
            }
        }
        let x = (0..n)
            .map(|i| {
                let eps: f64 = StandardNormal.sample(&mut r);
                mean[i] + u[i] + profile.noise_scale * eps
            })
            .collect();
        out.push(x);
    }
    out
}

/// Band-limited noise whose per-window band variances realize the target DE values.
fn synthesize_trial(params: &CorpusParams, features: &[Vec<f64>], seed: u64, tag: [u64; 3]) -> Result<RawRecording> {
    let fs = params.raw_sample_rate.expect("raw mode");
    let w = math::round(params.window_seconds * fs) as usize;
    let len = w * features.len();
    let bands = &BandSpec::standard()[..params.band_count];
    let (c_n, f_n) = (params.channel_count, params.band_count);
    let mut rows = vec![vec![0.0; len]; c_n];
    for (f, band) in bands.iter().enumerate() {
        let filter = BandpassFilter::design(band, fs)?;
        for (c, row) in rows.iter_mut().enumerate() {
            let mut r = rng::seeded(rng::derive(seed, &[stream::CORPUS, 3, tag[0], tag[1], tag[2], c as u64, f as u64]));
            let white = normal_vec(&mut r, len, 1.0);
            let narrow = filter.filtfilt(&white);
            let sd = math::sqrt(signal::variance(&narrow)).max(1e-300);
            for (g, seg) in features.iter().enumerate() {
                let target = math::sqrt(signal::variance_for_entropy(seg[c * f_n + f]));
                for i in g * w..(g + 1) * w {
                    row[i] += narrow[i] / sd * target;
                }
            }
        }
    }
    RawRecording::from_channels(rows, fs)
}

/// Generates a whole corpus in memory; values are rounded to 32-bit floats so
/// the in-memory corpus equals what a round-trip through sample files yields.
pub fn generate_corpus(params: &CorpusParams, profile: &ContinuityProfile, seed: u64) -> Result<Corpus> {
    params.validate()?;
    profile.validate()?;
    let k = params.class_names.len();
    let prototypes = class_prototypes(
        k,
        params.channel_count,
        params.band_count,
        profile.prototype_seed,
        profile.spatial_coherence,
    );
    let mut entries = Vec::with_capacity(params.sample_count());
    let mut samples = Vec::with_capacity(params.sample_count());
    for subject in 0..params.subjects {
        for session in 0..params.sessions_per_subject {
            for trial in 0..params.trials_per_session {
                let label = trial % k;
                let feats = trial_features(params, profile, &prototypes, seed, subject, session, trial);
                let values: Vec<Vec<f64>> = if params.raw_sample_rate.is_some() {
                    let tag = [subject as u64, session as u64, trial as u64];
                    let rec = synthesize_trial(params, &feats, seed, tag)?;
                    let bands = &BandSpec::standard()[..params.band_count];
                    signal::extract_features(&rec, bands, params.window_seconds)?
                        .into_iter()
                        .map(|m| m.values().to_vec())
                        .collect()
                } else {
                    feats
                };
                for (segment, v) in values.into_iter().enumerate() {
                    let prov = Provenance {
                        subject,
                        session,
                        trial,
                        segment,
                    };
                    let v = v.into_iter().map(quantize).collect();
                    let mut m = FeatureMatrix::new(params.channel_count, params.band_count, v)?.with_label(label);
                    m.provenance = prov;
                    entries.push(SampleEntry {
                        path: sample_path(&prov),
                        subject,
                        session,
                        trial,
                        segment,
                        label,
                    });
                    samples.push(m);
                }
            }
        }
    }
    let manifest = CorpusManifest {
        corpus_id: params.corpus_id.clone(),
        subjects: params.subjects,
        sessions_per_subject: params.sessions_per_subject,
        trials_per_session: params.trials_per_session,
        segments_per_trial: params.segments_per_trial,
        channel_count: params.channel_count,
        band_count: params.band_count,
        class_names: params.class_names.clone(),
        channel_names: (0..params.channel_count).map(signal::channel_name).collect(),
        window_seconds: params.window_seconds,
        generator_seed: seed,
        profile: Some(*profile),
        sample_files: entries,
    };
    Corpus::new(manifest, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentPolicy {
    DropExtra,
    ZeroFill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelAlignment {
    pub source_channels: Vec<String>,
    pub target_channels: Vec<String>,
    pub policy: AlignmentPolicy,
}

impl ChannelAlignment {
    pub fn new(source: Vec<String>, target: Vec<String>, policy: AlignmentPolicy) -> Result<Self> {
        let a = Self {
            source_channels: source,
            target_channels: target,
            policy,
        };
        a.validate()?;
        Ok(a)
    }

    /// Drops extra channels when the target is a subset of the source and
    /// zero-fills when the source is a subset of the target.
    pub fn between(source: &[String], target: &[String]) -> Result<Self> {
        let subset = |a: &[String], b: &[String]| a.iter().all(|n| b.contains(n));
        let policy = if subset(target, source) {
            AlignmentPolicy::DropExtra
        } else if subset(source, target) {
            AlignmentPolicy::ZeroFill
        } else {
            return Err(Error::Alignment(
                "neither channel list contains the other".to_string(),
            ));
        };
        Self::new(source.to_vec(), target.to_vec(), policy)
    }

    pub fn validate(&self) -> Result<()> {
        let (outer, inner, what) = match self.policy {
            AlignmentPolicy::DropExtra => (&self.source_channels, &self.target_channels, "drop_extra"),
            AlignmentPolicy::ZeroFill => (&self.target_channels, &self.source_channels, "zero_fill"),
        };
        if let Some(n) = inner.iter().find(|n| !outer.contains(n)) {
            return Err(Error::Alignment(format!("{what}: channel `{n}` has no counterpart")));
        }
        Ok(())
    }
}

/// Rows of the target channels in target order; under zero-fill, channels the
/// source lacks become zero rows.
pub fn align_channels(matrix: &FeatureMatrix, alignment: &ChannelAlignment) -> Result<FeatureMatrix> {
    if matrix.channels() != alignment.source_channels.len() {
        return Err(Error::Alignment(format!(
            "matrix has {} channels, alignment source lists {}",
            matrix.channels(),
            alignment.source_channels.len()
        )));
    }
    let f = matrix.bands();
    let mut out = Vec::with_capacity(alignment.target_channels.len() * f);
    for name in &alignment.target_channels {
        match alignment.source_channels.iter().position(|s| s == name) {
            Some(c) => out.extend_from_slice(matrix.row(c)),
            None if alignment.policy == AlignmentPolicy::ZeroFill => out.extend(core::iter::repeat_n(0.0, f)),
            None => return Err(Error::Alignment(format!("channel `{name}` absent from source"))),
        }
    }
    let mut m = FeatureMatrix::new(alignment.target_channels.len(), f, out)?;
    m.label = matrix.label;
    m.provenance = matrix.provenance;
    Ok(m)
}

/// Per subject and session, picks `finetune_trials_per_session` trials for
/// fine-tuning (spread over classes as evenly as possible) and leaves the rest
/// for testing. Returns sample indices of both sides.
pub fn leave_trials_out_split(
    manifest: &CorpusManifest,
    finetune_trials_per_session: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let t = manifest.trials_per_session;
    if finetune_trials_per_session == 0 || finetune_trials_per_session >= t {
        return config_err(format!(
            "need 1 <= fine-tune trials < {t} trials per session, got {finetune_trials_per_session}"
        ));
    }
    let mut label_of = vec![usize::MAX; manifest.subjects * manifest.sessions_per_subject * t];
    let key = |e: &SampleEntry| (e.subject * manifest.sessions_per_subject + e.session) * t + e.trial;
    for e in &manifest.sample_files {
        if e.subject >= manifest.subjects || e.session >= manifest.sessions_per_subject || e.trial >= t {
            return config_err(format!("sample {} lies outside the manifest counts", e.path));
        }
        label_of[key(e)] = e.label;
    }
    let mut chosen = vec![false; label_of.len()];
    for subject in 0..manifest.subjects {
        for session in 0..manifest.sessions_per_subject {
            let base = (subject * manifest.sessions_per_subject + session) * t;
            let mut r = rng::seeded(rng::derive(seed, &[stream::SPLIT, subject as u64, session as u64]));
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.class_count()];
            for trial in 0..t {
                if let Some(v) = by_class.get_mut(label_of[base + trial]) {
                    v.push(trial);
                }
            }
            by_class.iter_mut().for_each(|v| v.shuffle(&mut r));
            let mut order: Vec<usize> = (0..by_class.len()).collect();
            order.shuffle(&mut r);
            let mut taken = 0;
            let mut round = 0;
            while taken < finetune_trials_per_session {
                for &k in &order {
                    if taken == finetune_trials_per_session {
                        break;
                    }
                    if let Some(&trial) = by_class[k].get(round) {
                        chosen[base + trial] = true;
                        taken += 1;
                    }
                }
                round += 1;
            }
        }
    }
    let (mut fin, mut test) = (Vec::new(), Vec::new());
    for (i, e) in manifest.sample_files.iter().enumerate() {
        if chosen[key(e)] {
            fin.push(i);
        } else {
            test.push(i);
        }
    }
    Ok((fin, test))
}

/// Keeps `round(fraction * N)` of the labeled samples, raised to the number of
/// classes present so that every class keeps one sample. Selections for smaller fractions under the same seed are subsets of
/// those for larger ones. Returns positions into `labels`, ascending.
pub fn subsample_labeled(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return config_err(format!("label fraction must lie in (0, 1], got {fraction}"));
    }
    let n = labels.len();
    if n == 0 {
        return config_err("cannot subsample an empty labeled set");
    }
    if fraction == 1.0 {
        return Ok((0..n).collect());
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let count = (math::round(fraction * n as f64) as usize).max(classes.len());
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(rng::derive(seed, &[stream::SUBSAMPLE])));
    // one representative per class first, then everything else in permutation order
    let mut seen = Vec::new();
    let (mut heads, mut rest) = (Vec::new(), Vec::new());
    for i in perm {
        if seen.contains(&labels[i]) {
            rest.push(i);
        } else {
            seen.push(labels[i]);
            heads.push(i);
        }
    }
    heads.extend(rest);
    heads.truncate(count);
    heads.sort_unstable();
    Ok(heads)
}
