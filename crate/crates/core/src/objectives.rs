//! Soft contrastive loss, aggregate reconstruction and the uncertainty-weighted total.
//!
//! The contrastive universe is the `2B` rows of `[Z_orig; Z_masked]`. Row `a`
//! has source sample `a mod B` and its positive is the other view of the same
//! sample. Every other row `j` is weighted by `w(src(a), src(j))`, so a masked
//! view shares its source sample's soft assignment.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::math;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    CosineNegative,
    Euclidean,
    Manhattan,
}

impl core::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine_negative" | "cosine" => Ok(Self::CosineNegative),
            "euclidean" => Ok(Self::Euclidean),
            "manhattan" => Ok(Self::Manhattan),
            other => config_err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftClMode {
    SoftOriginalSpace,
    SoftEmbeddingSpace,
    Hard,
}

impl core::str::FromStr for SoftClMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_original_space" => Ok(Self::SoftOriginalSpace),
            "soft_embedding_space" => Ok(Self::SoftEmbeddingSpace),
            "hard" => Ok(Self::Hard),
            other => config_err(format!("unknown contrastive mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftClConfig {
    pub metric: DistanceMetric,
    /// Upper bound `alpha` of the soft weights, in [0, 1].
    pub alpha: f64,
    /// Sharpness `tau_s`.
    pub sharpness: f64,
    /// Temperature `tau_c` of the similarity softmax.
    pub temperature: f64,
    pub mode: SoftClMode,
}

impl Default for SoftClConfig {
    fn default() -> Self {
        Self {
            metric: DistanceMetric::CosineNegative,
            alpha: 0.5,
            sharpness: 0.05,
            temperature: 0.5,
            mode: SoftClMode::SoftOriginalSpace,
        }
    }
}

impl SoftClConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return config_err(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.mode == SoftClMode::Hard {
            return Ok(());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return config_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return config_err(format!("sharpness must be positive, got {}", self.sharpness));
        }
        Ok(())
    }
}

/// Which view anchors the aggregation, and whether masked views join the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub anchor_masked: bool,
    pub include_masked: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            anchor_masked: false,
            include_masked: true,
        }
    }
}

/// Soft weights `w(x_i, x_j)` over the original samples of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignmentTable {
    weights: Tensor,
}

impl SoftAssignmentTable {
    /// All-zero weights: the hard contrastive loss.
    pub fn hard(batch: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[batch, batch]),
        }
    }

    pub fn from_tensor(weights: Tensor) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::Dimension {
                op: "soft assignments",
                left: s.to_vec(),
                right: vec![],
            });
        }
        Ok(Self { weights })
    }

    pub fn batch(&self) -> usize {
        self.weights.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.data()[i * self.batch() + j]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.weights
    }
}

/// Embeddings of both views of a batch; row `i` of each pairs with sample `i`.
#[derive(Debug, Clone, Copy)]
pub struct BatchEmbeddings {
    pub z_orig: Var,
    pub z_masked: Var,
    pub h_orig: Var,
    pub h_masked: Var,
}

fn raw_distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::CosineNegative => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = math::sqrt(a.iter().map(|x| x * x).sum());
            let nb = math::sqrt(b.iter().map(|x| x * x).sum());
            let denom = na * nb;
            if denom > 0.0 {
                -dot / denom
            } else {
                0.0
            }
        }
        DistanceMetric::Euclidean => math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
        DistanceMetric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
    }
}

/// Pairwise distances, min-max normalized jointly over all off-diagonal pairs.
/// The diagonal is 0.
pub fn normalized_distance(batch: &[&[f64]], metric: DistanceMetric) -> Result<Tensor> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("{n} sample(s); distances need at least 2")));
    }
    let dim = batch[0].len();
    if let Some(bad) = batch.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension {
            op: "normalized_distance",
            left: vec![dim],
            right: vec![bad.len()],
        });
    }
    let mut d = vec![0.0; n * n];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = raw_distance(batch[i], batch[j], metric);
            if !v.is_finite() {
                return Err(Error::Domain {
                    op: "normalized_distance",
                    detail: format!("non-finite distance between samples {i} and {j}"),
                });
            }
            d[i * n + j] = v;
            d[j * n + i] = v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    if span <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
        return Err(Error::DegenerateBatch(format!(
            "all {} pairwise distances equal ({lo}); min-max normalization undefined",
            n * (n - 1) / 2
        )));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = ((d[i * n + j] - lo) / span).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![n, n], d)
}

/// `w = 2 alpha sigmoid(-D / tau_s)` elementwise; the diagonal is set to 0.
pub fn soft_assignments(dist: &Tensor, alpha: f64, sharpness: f64) -> Result<SoftAssignmentTable> {
    let mut w = dist.clone();
    let n = dist.rows();
    for (k, v) in w.data_mut().iter_mut().enumerate() {
        *v = if k / n == k % n {
            0.0
        } else {
            2.0 * alpha * math::sigmoid(-*v / sharpness)
        };
    }
    SoftAssignmentTable::from_tensor(w)
}

/// The soft weights a config prescribes for a batch: distances over the raw
/// samples, over the (detached) projected embeddings, or none at all.
pub fn batch_assignments(
    config: &SoftClConfig,
    samples: &[&[f64]],
    z_orig: &Tensor,
) -> Result<SoftAssignmentTable> {
    config.validate()?;
    let dist = match config.mode {
        SoftClMode::Hard => return Ok(SoftAssignmentTable::hard(samples.len())),
        SoftClMode::SoftOriginalSpace => normalized_distance(samples, config.metric)?,
        SoftClMode::SoftEmbeddingSpace => {
            let rows: Vec<&[f64]> = (0..z_orig.rows()).map(|i| z_orig.row(i)).collect();
            normalized_distance(&rows, config.metric)?
        }
    };
    soft_assignments(&dist, config.alpha, config.sharpness)
}

/// Cosine similarities over the `2B` universe divided by `tau_c`.
fn similarity_logits(g: &mut Graph, emb: &BatchEmbeddings, temperature: f64) -> Result<(Var, usize)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return config_err(format!("temperature must be positive, got {temperature}"));
    }
    let b = g.shape(emb.z_orig)[0];
    if g.shape(emb.z_orig) != g.shape(emb.z_masked) {
        return Err(Error::Dimension {
            op: "contrastive universe",
            left: g.shape(emb.z_orig).to_vec(),
            right: g.shape(emb.z_masked).to_vec(),
        });
    }
    let z = g.concat_rows(&[emb.z_orig, emb.z_masked])?;
    let zn = g.normalize_rows(z)?;
    let znt = g.transpose(zn)?;
    let s = g.matmul(zn, znt)?;
    Ok((g.scale(s, 1.0 / temperature)?, b))
}

/// Mean over all `2B` anchors of `-log p(pos) - sum_j w(src(a), src(j)) log p(j)`.
pub fn soft_contrastive_loss(
    g: &mut Graph,
    emb: &BatchEmbeddings,
    w: &SoftAssignmentTable,
    temperature: f64,
) -> Result<Var> {
    let (s, b) = similarity_logits(g, emb, temperature)?;
    if w.batch() != b {
        return Err(Error::Dimension {
            op: "soft_contrastive_loss",
            left: vec![b, b],
            right: w.as_tensor().shape().to_vec(),
        });
    }
    let n = 2 * b;
    let mut include = vec![true; n * n];
    let mut target = vec![0.0; n * n];
    for a in 0..n {
        include[a * n + a] = false;
        let pos = (a + b) % n;
        for j in 0..n {
            if j == a {
                continue;
            }
            target[a * n + j] = if j == pos { 1.0 } else { w.get(a % b, j % b) };
        }
    }
    let lp = g.masked_log_softmax_rows(s, &include)?;
    let t = g.constant(Tensor::new(vec![n, n], target)?);
    let weighted = g.mul(lp, t)?;
    let total = g.sum(weighted)?;
    g.scale(total, -1.0 / n as f64)
}

/// Output of [`aggregate`].
#[derive(Debug, Clone)]
pub struct Aggregation {
    /// `[B, embedding_dim]` aggregated embeddings, one per anchor.
    pub h_r: Var,
    /// `[B, 2B]` softmax weights over the universe (columns: originals, then masked).
    pub weights: Tensor,
}

/// Similarity-weighted aggregation of the encoded embeddings for every anchor.
pub fn aggregate(
    g: &mut Graph,
    emb: &BatchEmbeddings,
    temperature: f64,
    config: AggregationConfig,
) -> Result<Aggregation> {
    let b = g.shape(emb.z_orig)[0];
    if b < 2 {
        return config_err(format!("aggregation needs a batch of at least 2, got {b}"));
    }
    let (s, _) = similarity_logits(g, emb, temperature)?;
    let n = 2 * b;
    let mut include = vec![true; n * n];
    for a in 0..n {
        include[a * n + a] = false;
        if !config.include_masked {
            include[a * n + b..(a + 1) * n].iter_mut().for_each(|v| *v = false);
        }
    }
    let probs = g.masked_softmax_rows(s, &include)?;
    let offset = if config.anchor_masked { b } else { 0 };
    let mut sel = vec![0.0; b * n];
    for i in 0..b {
        sel[i * n + offset + i] = 1.0;
    }
    let sel = g.constant(Tensor::new(vec![b, n], sel)?);
    let weights = g.matmul(sel, probs)?;
    let h = g.concat_rows(&[emb.h_orig, emb.h_masked])?;
    let h_r = g.matmul(weights, h)?;
    Ok(Aggregation {
        h_r,
        weights: g.value(weights).clone(),
    })
}

/// Per-sample squared error norm, averaged over the batch.
pub fn reconstruction_loss(g: &mut Graph, x: Var, x_r: Var) -> Result<Var> {
    if g.shape(x) != g.shape(x_r) {
        return Err(Error::Dimension {
            op: "reconstruction_loss",
            left: g.shape(x).to_vec(),
            right: g.shape(x_r).to_vec(),
        });
    }
    let b = g.shape(x).first().copied().unwrap_or(1).max(1);
    let d = g.sub(x, x_r)?;
    let sq = g.square(d)?;
    let total = g.sum(sq)?;
    g.scale(total, 1.0 / b as f64)
}

/// `exp(-2 s_C)/2 L_C + exp(-2 s_R)/2 L_R + s_C + s_R`. A term passed as `None`
/// is dropped together with its log-variance regularizer.
pub fn total_loss(
    g: &mut Graph,
    l_c: Option<Var>,
    l_r: Option<Var>,
    log_sigma_c: Var,
    log_sigma_r: Var,
) -> Result<Var> {
    let mut terms = Vec::new();
    for (l, s) in [(l_c, log_sigma_c), (l_r, log_sigma_r)] {
        let Some(l) = l else { continue };
        let e = g.scale(s, -2.0)?;
        let e = g.exp(e)?;
        let e = g.scale(e, 0.5)?;
        let t = g.mul(e, l)?;
        terms.push(g.add(t, s)?);
    }
    match terms.as_slice() {
        [] => Err(Error::Config("both loss terms disabled".to_string())),
        [t] => Ok(*t),
        [a, b] => g.add(*a, *b),
        _ => unreachable!(),
    }
}
