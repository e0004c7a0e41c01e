//! Helpers shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scmm_core::corpus::{generate_corpus, ContinuityProfile, Corpus, CorpusParams};
use scmm_core::network::{Bound, ConvStage, NetworkConfig, ParameterStore};
use scmm_core::tensor::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), normal_vec(rng, shape.iter().product())).unwrap()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Relative error with a floor on the scale, so that gradients that vanish
/// analytically are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Default)]
pub struct FdReport {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares the tape gradient of a scalar function of `inputs` against
/// central differences in every coordinate. A coordinate whose stencil moves
/// any ReLU across its kink is skipped and counted.
pub fn finite_difference(
    inputs: &[(&str, Tensor)],
    h: f64,
    f: impl Fn(&mut Graph, &[Var]) -> Var,
) -> FdReport {
    let eval = |vals: &[Tensor], grads: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.parameter(t.clone())).collect();
        let loss = f(&mut g, &vars);
        let value = g.value(loss).data()[0];
        let pattern = g.relu_pattern();
        let grad = if grads {
            g.backward(loss).unwrap();
            vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()])).collect()
        } else {
            Vec::new()
        };
        (value, pattern, grad)
    };
    let base: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (_, pattern, grads) = eval(&base, true);
    let mut report = FdReport::default();
    for (i, (name, t)) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let at = |sign: f64| {
                let mut vals = base.clone();
                vals[i].data_mut()[k] += sign * h;
                eval(&vals, false)
            };
            let (lp, pp, _) = at(1.0);
            let (lm, pm, _) = at(-1.0);
            if pp != pattern || pm != pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let e = rel_err(grads[i][k], numeric);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.at = format!("{name}[{k}]: tape {:.8e}, differences {numeric:.8e}", grads[i][k]);
            }
        }
    }
    report
}

/// A network small enough to difference every parameter.
pub fn tiny_net(channels: usize, bands: usize, classes: usize) -> NetworkConfig {
    NetworkConfig {
        channel_count: channels,
        band_count: bands,
        encoder: vec![ConvStage::new(4), ConvStage::new(6), ConvStage::new(5)],
        embedding_dim: 6,
        projection_dim: 4,
        classifier_hidden: 5,
        class_count: classes,
    }
}

pub fn small_corpus(channels: usize, trials: usize, segments: usize, profile: &ContinuityProfile, seed: u64) -> Corpus {
    let params = CorpusParams {
        corpus_id: "test".into(),
        subjects: 2,
        sessions_per_subject: 1,
        trials_per_session: trials,
        segments_per_trial: segments,
        channel_count: channels,
        ..CorpusParams::seed_like()
    };
    generate_corpus(&params, profile, seed).unwrap()
}

/// [`finite_difference`] over every parameter of a store, bound as trainable.
pub fn finite_difference_store(
    store: &ParameterStore,
    h: f64,
    f: impl Fn(&mut Graph, &Bound) -> Var,
) -> FdReport {
    let eval = |s: &ParameterStore, grads: bool| {
        let mut g = Graph::new();
        let p = Bound::all(&mut g, s);
        let loss = f(&mut g, &p);
        let value = g.value(loss).data()[0];
        let pattern = g.relu_pattern();
        let grad = if grads {
            g.backward(loss).unwrap();
            p.gradients(&g)
        } else {
            Vec::new()
        };
        (value, pattern, grad)
    };
    let (_, pattern, grads) = eval(store, true);
    let mut report = FdReport::default();
    for (name, t) in store.iter() {
        let analytic = grads.iter().find(|(n, _)| n == name).map(|(_, d)| d.clone()).unwrap_or_else(|| vec![0.0; t.numel()]);
        for (k, &a) in analytic.iter().enumerate() {
            let at = |sign: f64| {
                let mut s = store.clone();
                s.get_mut(name).unwrap().data_mut()[k] += sign * h;
                eval(&s, false)
            };
            // fourth-order stencil: deep networks have large third derivatives
            let pts: Vec<(f64, Vec<bool>)> = [2.0, 1.0, -1.0, -2.0].iter().map(|&s| {
                let (v, p, _) = at(s);
                (v, p)
            }).collect();
            if pts.iter().any(|(_, p)| *p != pattern) {
                report.skipped += 1;
                continue;
            }
            let numeric = (8.0 * (pts[1].0 - pts[2].0) - (pts[0].0 - pts[3].0)) / (12.0 * h);
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.at = format!("{name}[{k}]: tape {a:.8e}, differences {numeric:.8e}");
            }
        }
    }
    report
}
