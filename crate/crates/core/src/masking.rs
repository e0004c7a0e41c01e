//! Random, channel, parallel and hybrid masking of feature matrices.
//!
//! Masks are `channels x bands` grids where `true` keeps an entry. Random
//! masking drops entries independently with probability `ratio`; channel
//! masking drops whole channels with the same probability. Hybrid masking picks,
//! per channel, the channel-mask row when a uniform draw `u` satisfies
//! `u <= threshold` and the random-mask row otherwise. Parallel masking makes
//! that choice once per sample.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::rng;
use crate::signal::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Random,
    Channel,
    Parallel,
    Hybrid,
}

impl core::str::FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "channel" => Ok(Self::Channel),
            "parallel" => Ok(Self::Parallel),
            "hybrid" => Ok(Self::Hybrid),
            other => config_err(format!("unknown mask strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub strategy: MaskStrategy,
    /// Masking ratio `r` in (0, 1).
    pub ratio: f64,
    /// Threshold `mu` in [0, 1]; ignored by the random and channel strategies.
    pub threshold: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::Hybrid,
            ratio: 0.5,
            threshold: 0.1,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return config_err(format!("mask ratio must lie in (0, 1), got {}", self.ratio));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return config_err(format!(
                "mask threshold must lie in [0, 1], got {}",
                self.threshold
            ));
        }
        Ok(())
    }

    /// Draws a plan for one sample.
    pub fn draw<R: Rng + ?Sized>(&self, channels: usize, bands: usize, rng: &mut R) -> MaskPlan {
        match self.strategy {
            MaskStrategy::Random => draw_random(channels, bands, self.ratio, rng),
            MaskStrategy::Channel => draw_channel(channels, bands, self.ratio, rng),
            MaskStrategy::Hybrid => draw_hybrid(channels, bands, self.ratio, self.threshold, rng),
            MaskStrategy::Parallel => draw_parallel(channels, bands, self.ratio, self.threshold, rng),
        }
    }
}

/// Which sub-mask produced a channel's row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowSource {
    Random,
    Channel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    channels: usize,
    bands: usize,
    keep: Vec<bool>,
    per_channel: Vec<RowSource>,
}

impl MaskPlan {
    pub fn all_kept(channels: usize, bands: usize) -> Self {
        Self {
            channels,
            bands,
            keep: vec![true; channels * bands],
            per_channel: vec![RowSource::Random; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Row-major keep flags (`true` = kept).
    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn keep_mut(&mut self) -> &mut [bool] {
        &mut self.keep
    }

    pub fn per_channel(&self) -> &[RowSource] {
        &self.per_channel
    }

    pub fn kept(&self, channel: usize, band: usize) -> bool {
        self.keep[channel * self.bands + band]
    }

    pub fn masked_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.keep.len().max(1) as f64
    }

    pub fn channel_routed_count(&self) -> usize {
        self.per_channel
            .iter()
            .filter(|s| **s == RowSource::Channel)
            .count()
    }
}

impl fmt::Display for MaskPlan {
    /// One line per channel: the row source tag (`R`/`C`), then `#` for kept and `.` for masked.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in 0..self.channels {
            let tag = match self.per_channel[c] {
                RowSource::Random => 'R',
                RowSource::Channel => 'C',
            };
            let row: String = (0..self.bands)
                .map(|b| if self.kept(c, b) { '#' } else { '.' })
                .collect();
            writeln!(f, "{c:>3} {tag} {row}")?;
        }
        Ok(())
    }
}

// Uniform on (0, 1], so `u <= 0` never routes and `u <= 1` always does.
fn unit_open_closed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

fn random_rows<R: Rng + ?Sized>(channels: usize, bands: usize, ratio: f64, rng: &mut R) -> Vec<bool> {
    (0..channels * bands)
        .map(|_| rng.random::<f64>() >= ratio)
        .collect()
}

fn channel_rows<R: Rng + ?Sized>(channels: usize, ratio: f64, rng: &mut R) -> Vec<bool> {
    (0..channels).map(|_| rng.random::<f64>() >= ratio).collect()
}

fn draw_random<R: Rng + ?Sized>(channels: usize, bands: usize, ratio: f64, rng: &mut R) -> MaskPlan {
    MaskPlan {
        channels,
        bands,
        keep: random_rows(channels, bands, ratio, rng),
        per_channel: vec![RowSource::Random; channels],
    }
}

fn draw_channel<R: Rng + ?Sized>(channels: usize, bands: usize, ratio: f64, rng: &mut R) -> MaskPlan {
    let rows = channel_rows(channels, ratio, rng);
    MaskPlan {
        channels,
        bands,
        keep: rows.iter().flat_map(|&k| core::iter::repeat_n(k, bands)).collect(),
        per_channel: vec![RowSource::Channel; channels],
    }
}

fn draw_hybrid<R: Rng + ?Sized>(
    channels: usize,
    bands: usize,
    ratio: f64,
    threshold: f64,
    rng: &mut R,
) -> MaskPlan {
    let random = random_rows(channels, bands, ratio, rng);
    let channel = channel_rows(channels, ratio, rng);
    let mut keep = Vec::with_capacity(channels * bands);
    let mut per_channel = Vec::with_capacity(channels);
    for c in 0..channels {
        if unit_open_closed(rng) <= threshold {
            keep.extend(core::iter::repeat_n(channel[c], bands));
            per_channel.push(RowSource::Channel);
        } else {
            keep.extend_from_slice(&random[c * bands..(c + 1) * bands]);
            per_channel.push(RowSource::Random);
        }
    }
    MaskPlan {
        channels,
        bands,
        keep,
        per_channel,
    }
}

fn draw_parallel<R: Rng + ?Sized>(
    channels: usize,
    bands: usize,
    ratio: f64,
    threshold: f64,
    rng: &mut R,
) -> MaskPlan {
    if unit_open_closed(rng) <= threshold {
        draw_channel(channels, bands, ratio, rng)
    } else {
        draw_random(channels, bands, ratio, rng)
    }
}

fn check(channels: usize, bands: usize, ratio: f64) -> Result<()> {
    if channels == 0 || bands == 0 {
        return config_err("mask dimensions must be positive");
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return config_err(format!("mask ratio must lie in (0, 1), got {ratio}"));
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return config_err(format!("mask threshold must lie in [0, 1], got {threshold}"));
    }
    Ok(())
}

pub fn random_mask(channels: usize, bands: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    check(channels, bands, ratio)?;
    Ok(draw_random(channels, bands, ratio, &mut rng::seeded(seed)))
}

pub fn channel_mask(channels: usize, bands: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    check(channels, bands, ratio)?;
    Ok(draw_channel(channels, bands, ratio, &mut rng::seeded(seed)))
}

pub fn hybrid_mask(channels: usize, bands: usize, ratio: f64, threshold: f64, seed: u64) -> Result<MaskPlan> {
    check(channels, bands, ratio)?;
    check_threshold(threshold)?;
    Ok(draw_hybrid(channels, bands, ratio, threshold, &mut rng::seeded(seed)))
}

pub fn parallel_mask(channels: usize, bands: usize, ratio: f64, threshold: f64, seed: u64) -> Result<MaskPlan> {
    check(channels, bands, ratio)?;
    check_threshold(threshold)?;
    Ok(draw_parallel(channels, bands, ratio, threshold, &mut rng::seeded(seed)))
}

/// Zeroes masked entries; kept entries are copied unchanged.
pub fn apply(matrix: &FeatureMatrix, plan: &MaskPlan) -> Result<FeatureMatrix> {
    if matrix.channels() != plan.channels || matrix.bands() != plan.bands {
        return Err(Error::Dimension {
            op: "apply mask",
            left: vec![matrix.channels(), matrix.bands()],
            right: vec![plan.channels, plan.bands],
        });
    }
    let mut out = matrix.clone();
    for (v, &k) in out.values_mut().iter_mut().zip(&plan.keep) {
        if !k {
            *v = 0.0;
        }
    }
    Ok(out)
}
