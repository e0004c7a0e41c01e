//! Differential-entropy features from multi-channel recordings.
//!
//! Each channel is band-pass filtered once per band over the whole recording
//! (zero-phase, forward then backward), then cut into non-overlapping windows.
//! A window's feature for one band is the Gaussian differential entropy
//! `0.5 * ln(2*pi*e*var)` in nats, with the population variance.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{E, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::math;
use crate::{Error, Result};

/// Prototype order of the Butterworth design; the band-pass has twice as many poles.
pub const BUTTERWORTH_ORDER: usize = 4;

/// Channel-major multi-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    samples: Vec<f64>,
    channels: usize,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
}

impl RawRecording {
    /// `samples` holds `channel_names.len()` rows of equal length, concatenated.
    pub fn new(samples: Vec<f64>, sample_rate: f64, channel_names: Vec<String>) -> Result<Self> {
        let channels = channel_names.len();
        if channels == 0 || samples.len() % channels != 0 {
            return Err(Error::Dimension {
                op: "recording",
                left: vec![channels],
                right: vec![samples.len()],
            });
        }
        if !(sample_rate > 0.0) {
            return config_err(format!("sample rate must be positive, got {sample_rate}"));
        }
        Ok(Self {
            samples,
            channels,
            sample_rate,
            channel_names,
        })
    }

    /// Builds a recording from per-channel rows named `ch00`, `ch01`, ...
    pub fn from_channels(rows: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        let names = (0..rows.len()).map(channel_name).collect();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::Contract("channels differ in length".to_string()));
        }
        Self::new(rows.concat(), sample_rate, names)
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let t = self.len();
        &self.samples[c * t..(c + 1) * t]
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }
}

/// Conventional channel identifier used by generated corpora.
pub fn channel_name(index: usize) -> String {
    format!("ch{index:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl BandSpec {
    pub fn new(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.to_string(),
            low,
            high,
        }
    }

    /// Delta, theta, alpha, beta and gamma bands.
    pub fn standard() -> Vec<BandSpec> {
        vec![
            BandSpec::new("delta", 1.0, 4.0),
            BandSpec::new("theta", 4.0, 8.0),
            BandSpec::new("alpha", 8.0, 14.0),
            BandSpec::new("beta", 14.0, 31.0),
            BandSpec::new("gamma", 31.0, 50.0),
        ]
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(self.low > 0.0 && self.low < self.high && self.high < sample_rate / 2.0) {
            return config_err(format!(
                "band {} [{}, {}] Hz is invalid at sample rate {} Hz",
                self.name, self.low, self.high, sample_rate
            ));
        }
        Ok(())
    }
}

/// Where a sample came from inside a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: usize,
    pub session: usize,
    pub trial: usize,
    pub segment: usize,
}

/// A `channels x bands` grid of DE features; the unit sample of the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    channels: usize,
    bands: usize,
    pub label: Option<usize>,
    pub provenance: Provenance,
}

impl FeatureMatrix {
    pub fn new(channels: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if channels * bands != values.len() {
            return Err(Error::Dimension {
                op: "feature matrix",
                left: vec![channels, bands],
                right: vec![values.len()],
            });
        }
        Ok(Self {
            values,
            channels,
            bands,
            label: None,
            provenance: Provenance::default(),
        })
    }

    pub fn zeros(channels: usize, bands: usize) -> Self {
        Self {
            values: vec![0.0; channels * bands],
            channels,
            bands,
            label: None,
            provenance: Provenance::default(),
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, channel: usize, band: usize) -> f64 {
        self.values[channel * self.bands + band]
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.bands..(channel + 1) * self.bands]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Initial state that makes the section's output steady for a constant input of 1.
    fn steady_state(&self) -> [f64; 2] {
        let ys = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let z2 = self.b[2] - self.a[2] * ys;
        [self.b[1] - self.a[1] * ys + z2, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }

    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[1] + z2 * self.a[2])
    }
}

/// Butterworth band-pass as a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    pub sections: Vec<Biquad>,
}

impl BandpassFilter {
    /// Designs a digital Butterworth band-pass with the bilinear transform
    /// (band edges pre-warped). Gain is 1 at the geometric centre frequency.
    pub fn design(band: &BandSpec, sample_rate: f64) -> Result<Self> {
        band.validate(sample_rate)?;
        let fs2 = 2.0 * sample_rate;
        let w_lo = fs2 * math::tan(PI * band.low / sample_rate);
        let w_hi = fs2 * math::tan(PI * band.high / sample_rate);
        let bw = w_hi - w_lo;
        let w0 = math::sqrt(w_lo * w_hi);
        let n = BUTTERWORTH_ORDER;

        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
        let mut sections = Vec::with_capacity(n);
        // prototype poles in the upper half plane; their conjugates give the
        // conjugate band-pass poles that complete each section
        for k in 0..n / 2 {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let half = p * (bw / 2.0);
            let disc = (half * half - w0 * w0).sqrt();
            for s in [half + disc, half - disc] {
                let z = bilinear(s);
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [1.0, -2.0 * z.re, z.norm_sqr()],
                });
            }
        }
        let center = 2.0 * libm::atan(w0 / fs2);
        let gain: f64 = sections.iter().map(|s| s.response(center).norm()).product();
        let per = libm::pow(1.0 / gain, 1.0 / sections.len() as f64);
        for s in &mut sections {
            s.b = [per, 0.0, -per];
        }
        Ok(Self { sections })
    }

    /// Single causal pass, starting from steady state for the first sample.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            let zi = s.steady_state();
            let (mut z1, mut z2) = (zi[0] * level, zi[1] * level);
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[1] * out + z2;
                z2 = s.b[2] * xin - s.a[2] * out;
                *v = out;
            }
            level *= s.dc_gain();
        }
        y
    }

    /// Zero-phase filtering: odd-extended edges, forward pass, backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }

    /// Magnitude response at `freq` Hz for a single pass.
    pub fn magnitude(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        self.sections.iter().map(|s| s.response(w).norm()).product()
    }
}

/// Zero-phase band-pass filter of every channel.
pub fn bandpass(recording: &RawRecording, band: &BandSpec) -> Result<RawRecording> {
    let filter = BandpassFilter::design(band, recording.sample_rate)?;
    let mut out = Vec::with_capacity(recording.samples.len());
    for c in 0..recording.channels {
        out.extend(filter.filtfilt(recording.channel(c)));
    }
    RawRecording::new(out, recording.sample_rate, recording.channel_names.clone())
}

fn window_len(window_seconds: f64, sample_rate: f64) -> Result<usize> {
    let w = libm::round(window_seconds * sample_rate);
    if !(window_seconds > 0.0) || w < 1.0 {
        return config_err(format!(
            "window of {window_seconds} s holds no samples at {sample_rate} Hz"
        ));
    }
    Ok(w as usize)
}

/// Non-overlapping windows in temporal order; a partial tail is dropped.
pub fn segment(recording: &RawRecording, window_seconds: f64) -> Result<Vec<RawRecording>> {
    let w = window_len(window_seconds, recording.sample_rate)?;
    let count = recording.len() / w;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let mut samples = Vec::with_capacity(w * recording.channels);
        for c in 0..recording.channels {
            samples.extend_from_slice(&recording.channel(c)[s * w..(s + 1) * w]);
        }
        out.push(RawRecording::new(
            samples,
            recording.sample_rate,
            recording.channel_names.clone(),
        )?);
    }
    Ok(out)
}

/// Population variance (two-pass).
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Gaussian differential entropy `0.5 * ln(2*pi*e*var)` in nats.
pub fn differential_entropy(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Contract(format!(
            "differential entropy needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let var = variance(x);
    if !(var > 0.0) {
        return Err(Error::Domain {
            op: "differential_entropy",
            detail: "zero variance (constant segment)".to_string(),
        });
    }
    Ok(0.5 * math::ln(2.0 * PI * E * var))
}

/// Inverse of [`differential_entropy`]: the variance with entropy `de`.
pub fn variance_for_entropy(de: f64) -> f64 {
    math::exp(2.0 * de) / (2.0 * PI * E)
}

/// One `channels x bands` DE matrix per window of the recording.
pub fn extract_features(
    recording: &RawRecording,
    bands: &[BandSpec],
    window_seconds: f64,
) -> Result<Vec<FeatureMatrix>> {
    if bands.is_empty() {
        return config_err("no bands configured");
    }
    let w = window_len(window_seconds, recording.sample_rate)?;
    let count = recording.len() / w;
    let (c_n, f_n) = (recording.channels, bands.len());
    let mut out: Vec<FeatureMatrix> = (0..count)
        .map(|s| {
            let mut m = FeatureMatrix::zeros(c_n, f_n);
            m.provenance.segment = s;
            m
        })
        .collect();
    for (f, band) in bands.iter().enumerate() {
        let filter = BandpassFilter::design(band, recording.sample_rate)?;
        for c in 0..c_n {
            let filtered = filter.filtfilt(recording.channel(c));
            for (s, m) in out.iter_mut().enumerate() {
                m.values[c * f_n + f] = differential_entropy(&filtered[s * w..(s + 1) * w])?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
        let n = (fs * seconds) as usize;
        (0..n).map(|i| math::sin(2.0 * PI * freq * i as f64 / fs)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        math::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    #[test]
    fn alpha_keeps_10hz() {
        let x = sine(10.0, 200.0, 10.0);
        let rec = RawRecording::from_channels(vec![x.clone()], 200.0).unwrap();
        let y = bandpass(&rec, &BandSpec::new("alpha", 8.0, 14.0)).unwrap();
        let trim = 400;
        let ratio = rms(&y.channel(0)[trim..2000 - trim]) / rms(&x[trim..2000 - trim]);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn gamma_rejects_2hz() {
        let x = sine(2.0, 200.0, 10.0);
        let rec = RawRecording::from_channels(vec![x.clone()], 200.0).unwrap();
        let y = bandpass(&rec, &BandSpec::new("gamma", 31.0, 50.0)).unwrap();
        assert!(rms(y.channel(0)) < 0.01 * rms(&x));
    }

    #[test]
    fn zero_in_zero_out() {
        let rec = RawRecording::from_channels(vec![vec![0.0; 500]], 200.0).unwrap();
        let y = bandpass(&rec, &BandSpec::new("beta", 14.0, 31.0)).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn band_beyond_nyquist_is_config_error() {
        let rec = RawRecording::from_channels(vec![vec![0.0; 500]], 128.0).unwrap();
        let r = bandpass(&rec, &BandSpec::new("gamma", 31.0, 70.0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn unit_gain_at_centre() {
        let band = BandSpec::new("alpha", 8.0, 14.0);
        let f = BandpassFilter::design(&band, 200.0).unwrap();
        assert_eq!(f.sections.len(), BUTTERWORTH_ORDER);
        let fc = 200.0 / PI * libm::atan(math::sqrt(
            (400.0 * math::tan(PI * 8.0 / 200.0)) * (400.0 * math::tan(PI * 14.0 / 200.0)),
        ) / 400.0);
        assert!((f.magnitude(fc, 200.0) - 1.0).abs() < 1e-9);
        // half power at the edges
        assert!((f.magnitude(8.0, 200.0) - libm::sqrt(0.5)).abs() < 1e-9);
        assert!((f.magnitude(14.0, 200.0) - libm::sqrt(0.5)).abs() < 1e-9);
    }

    #[test]
    fn segment_floor_semantics() {
        let rec = RawRecording::from_channels(vec![vec![1.0; 2000]], 200.0).unwrap();
        let s = segment(&rec, 1.0).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|r| r.len() == 200));
        assert_eq!(segment(&rec, 4.0).unwrap().len(), 2);
        let short = RawRecording::from_channels(vec![vec![1.0; 100]], 200.0).unwrap();
        assert!(segment(&short, 1.0).unwrap().is_empty());
    }

    #[test]
    fn de_identities() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let de = differential_entropy(&x).unwrap();
        assert!((de - 0.5 * math::ln(2.0 * PI * E)).abs() < 0.02);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((differential_entropy(&x2).unwrap() - de - core::f64::consts::LN_2).abs() < 1e-9);
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.5).collect();
        assert!((differential_entropy(&shifted).unwrap() - de).abs() < 1e-9);
        assert!(matches!(
            differential_entropy(&[3.0; 64]),
            Err(Error::Domain { .. })
        ));
        assert!(differential_entropy(&[1.0]).is_err());
    }

    #[test]
    fn feature_shapes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..62)
            .map(|_| (0..12_000).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let rec = RawRecording::from_channels(rows, 200.0).unwrap();
        let feats = extract_features(&rec, &BandSpec::standard(), 1.0).unwrap();
        assert_eq!(feats.len(), 60);
        assert!(feats.iter().all(|m| m.channels() == 62 && m.bands() == 5 && m.is_finite()));
    }
}
