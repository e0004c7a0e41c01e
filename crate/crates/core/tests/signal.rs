//! Feature extraction against spectral and closed-form oracles.

mod common;

use std::f64::consts::{E, PI, TAU};

use common::{normal_vec, rng};
use scmm_core::signal::{
    bandpass, differential_entropy, extract_features, segment, BandSpec, RawRecording,
};

/// One-sided periodogram power of `x` summed over the DFT bins inside `[lo, hi]`,
/// normalized so that summing every bin gives the population variance.
fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let first = (lo * n as f64 / fs).ceil() as usize;
    let last = (hi * n as f64 / fs).floor() as usize;
    (first.max(1)..=last)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ph = TAU * ((m * t) % n) as f64 / n as f64;
                re += v * ph.cos();
                im -= v * ph.sin();
            }
            2.0 * (re * re + im * im) / (n * n) as f64
        })
        .sum()
}

#[test]
fn white_noise_band_entropies_match_periodogram_power() {
    let fs = 200.0;
    let x: Vec<f64> = normal_vec(&mut rng(1), 12_000).iter().map(|v| 3.0 * v).collect();
    let rec = RawRecording::from_channels(vec![x.clone()], fs).unwrap();
    let bands = BandSpec::standard();
    let feats = extract_features(&rec, &bands, 1.0).unwrap();
    assert_eq!(feats.len(), 60);
    for (f, band) in bands.iter().enumerate() {
        let power = band_power(&x, fs, band.low, band.high);
        let oracle = 0.5 * (2.0 * PI * E * power).ln();
        let mean_de = feats.iter().map(|m| m.get(0, f)).sum::<f64>() / feats.len() as f64;
        assert!(feats.iter().all(|m| m.get(0, f).is_finite()));
        assert!(
            (mean_de - oracle).abs() < 0.5,
            "{}: extracted {mean_de:.4}, periodogram {oracle:.4}",
            band.name
        );
    }
}

#[test]
fn entropy_ignores_offsets_and_shifts_by_log_scale() {
    let x = normal_vec(&mut rng(2), 5_000);
    let de = differential_entropy(&x).unwrap();
    for offset in [-1e3, -2.5, 0.1, 42.0] {
        let y: Vec<f64> = x.iter().map(|v| v + offset).collect();
        assert!((differential_entropy(&y).unwrap() - de).abs() < 1e-9);
    }
    for k in [0.5, 2.0, 10.0] {
        let y: Vec<f64> = x.iter().map(|v| k * v).collect();
        assert!((differential_entropy(&y).unwrap() - de - f64::ln(k)).abs() < 1e-9);
    }
}

#[test]
fn features_filter_the_whole_recording_before_segmenting() {
    let mut r = rng(3);
    let rows: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(&mut r, 2_000)).collect();
    let rec = RawRecording::from_channels(rows, 200.0).unwrap();
    let bands = BandSpec::standard();
    let feats = extract_features(&rec, &bands, 1.0).unwrap();

    // filter first, then window: reproduced exactly
    for (f, band) in bands.iter().enumerate() {
        let windows = segment(&bandpass(&rec, band).unwrap(), 1.0).unwrap();
        assert_eq!(windows.len(), feats.len());
        for (s, w) in windows.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(feats[s].get(c, f), differential_entropy(w.channel(c)).unwrap());
            }
        }
    }

    // window first, then filter: only approximately the same
    let delta = &bands[0];
    let mut max_gap: f64 = 0.0;
    for (s, w) in segment(&rec, 1.0).unwrap().iter().enumerate() {
        let filtered = bandpass(w, delta).unwrap();
        for c in 0..3 {
            max_gap = max_gap.max((feats[s].get(c, 0) - differential_entropy(filtered.channel(c)).unwrap()).abs());
        }
    }
    assert!(max_gap > 1e-6);
}

#[test]
fn extraction_is_deterministic_and_windows_drop_the_tail() {
    let x = normal_vec(&mut rng(4), 1_050);
    let rec = RawRecording::from_channels(vec![x.clone(), x], 200.0).unwrap();
    let a = extract_features(&rec, &BandSpec::standard(), 1.0).unwrap();
    let b = extract_features(&rec, &BandSpec::standard(), 1.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    // identical channels give identical rows
    assert!(a.iter().all(|m| (0..5).all(|f| m.get(0, f) == m.get(1, f))));
}
