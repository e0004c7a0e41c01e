//! Tape gradients against central differences, from single operators up to
//! the full pre-training objective.

mod common;

use common::{finite_difference, finite_difference_store, normal_tensor, rng, tiny_net, FdReport};
use scmm_core::corpus::ContinuityProfile;
use scmm_core::network::{self, ParameterStore, LOG_SIGMA_C, LOG_SIGMA_R};
use scmm_core::objectives::{SoftClConfig, SoftClMode};
use scmm_core::signal::FeatureMatrix;
use scmm_core::tensor::{Graph, Tensor, Var};
use scmm_core::training::{self, Ablation, PretrainConfig};

const H: f64 = 1e-5;
/// Network-level checks use the fourth-order stencil; a wider step keeps
/// roundoff on large losses below the gradients being checked.
const H_NET: f64 = 3e-4;

fn assert_within(report: &FdReport, tol: f64) {
    assert!(report.worst < tol, "max rel err {:.3e} at {}", report.worst, report.at);
    assert!(report.checked > 0);
    assert!(
        report.skipped * 10 <= report.checked,
        "{} of {} coordinates straddle a kink",
        report.skipped,
        report.checked + report.skipped
    );
}

/// `sum(y * w)` for a fixed random `w`: a generic linear readout of `y`.
fn readout(g: &mut Graph, y: Var, seed: u64) -> Var {
    let w = normal_tensor(&mut rng(seed), g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

#[test]
fn matmul_gradients() {
    let mut r = rng(1);
    let a = normal_tensor(&mut r, &[3, 4]);
    let b = normal_tensor(&mut r, &[4, 2]);
    let report = finite_difference(&[("a", a), ("b", b)], H, |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        readout(g, y, 2)
    });
    assert_within(&report, 1e-6);
    assert_eq!(report.checked, 20);
}

#[test]
fn conv1d_gradients() {
    let mut r = rng(3);
    let x = normal_tensor(&mut r, &[2, 3, 7]);
    let k = normal_tensor(&mut r, &[4, 3, 3]);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let report = finite_difference(&[("x", x.clone()), ("k", k.clone())], H, |g, v| {
            let y = g.conv1d(v[0], v[1], stride, padding).unwrap();
            readout(g, y, 4)
        });
        assert_within(&report, 1e-5);
    }
}

#[test]
fn elementwise_and_broadcast_gradients() {
    let mut r = rng(5);
    let a = normal_tensor(&mut r, &[3, 4]);
    let b = normal_tensor(&mut r, &[1, 4]);
    let pos = Tensor::new(vec![3, 4], (0..12).map(|i| 0.5 + 0.1 * i as f64).collect()).unwrap();
    let report = finite_difference(&[("a", a), ("b", b), ("pos", pos)], H, |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let s = g.sigmoid(s).unwrap();
        let e = g.exp(v[1]).unwrap();
        let d = g.div(s, v[2]).unwrap();
        let l = g.log(v[2]).unwrap();
        let q = g.square(v[0]).unwrap();
        let m = g.mul(d, l).unwrap();
        let m = g.sub(m, q).unwrap();
        let m = g.mul(m, e).unwrap();
        let m = g.scale(m, 0.7).unwrap();
        let n = g.neg(v[0]).unwrap();
        let m = g.add(m, n).unwrap();
        readout(g, m, 6)
    });
    assert_within(&report, 1e-6);
}

#[test]
fn row_operator_gradients() {
    let mut r = rng(7);
    let a = normal_tensor(&mut r, &[3, 5]);
    let b = normal_tensor(&mut r, &[2, 5]);
    let include: Vec<bool> = (0..25).map(|k| k % 5 != k / 5 && k % 7 != 3).collect();
    let report = finite_difference(&[("a", a), ("b", b)], H, |g, v| {
        let cat = g.concat_rows(&[v[0], v[1]]).unwrap();
        let n = g.normalize_rows(cat).unwrap();
        let nt = g.transpose(n).unwrap();
        let s = g.matmul(n, nt).unwrap();
        let s = g.scale(s, 2.0).unwrap();
        let p = g.softmax_rows(s).unwrap();
        let lp = g.log_softmax_rows(s).unwrap();
        let mp = g.masked_softmax_rows(s, &include).unwrap();
        let mlp = g.masked_log_softmax_rows(s, &include).unwrap();
        let t = g.add(p, lp).unwrap();
        let t = g.add(t, mp).unwrap();
        let t = g.add(t, mlp).unwrap();
        let t = g.reshape(t, &[5, 5, 1]).unwrap();
        let t = g.mean_last_axis(t).unwrap();
        let u = g.mean(cat).unwrap();
        let t = readout(g, t, 8);
        g.add(t, u).unwrap()
    });
    assert_within(&report, 1e-6);
}

fn batch_of(n: usize, net: &network::NetworkConfig, seed: u64) -> Vec<FeatureMatrix> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let t = normal_tensor(&mut r, &[net.channel_count * net.band_count]);
            FeatureMatrix::new(net.channel_count, net.band_count, t.into_data())
                .unwrap()
                .with_label(i % net.class_count)
        })
        .collect()
}

#[test]
fn encode_project_gradients() {
    let net = tiny_net(9, 5, 3);
    let store = ParameterStore::init(&net, 11).unwrap();
    let data = batch_of(3, &net, 12);
    let refs: Vec<&FeatureMatrix> = data.iter().collect();
    let x = network::batch_tensor(&refs).unwrap();
    let report = finite_difference_store(&store, H, |g, p| {
        let xv = g.constant(x.clone());
        let h = network::encode(g, p, &net, xv).unwrap();
        let z = network::project(g, p, h).unwrap();
        readout(g, z, 13)
    });
    assert_within(&report, 1e-4);
}

#[test]
fn decode_gradients() {
    let net = tiny_net(9, 5, 3);
    let store = ParameterStore::init(&net, 14).unwrap();
    let h = normal_tensor(&mut rng(15), &[3, net.embedding_dim]);
    let report = finite_difference_store(&store, H, |g, p| {
        let hv = g.constant(h.clone());
        let x = network::decode(g, p, &net, hv).unwrap();
        readout(g, x, 16)
    });
    assert_within(&report, 1e-4);
}

#[test]
fn classifier_cross_entropy_gradients() {
    let net = tiny_net(9, 5, 3);
    let store = ParameterStore::init(&net, 17).unwrap();
    let data = batch_of(6, &net, 18);
    let refs: Vec<&FeatureMatrix> = data.iter().collect();
    let x = network::batch_tensor(&refs).unwrap();
    let labels: Vec<usize> = data.iter().map(|m| m.label.unwrap()).collect();
    let report = finite_difference_store(&store, H, |g, p| {
        let xv = g.constant(x.clone());
        let h = network::encode(g, p, &net, xv).unwrap();
        let l = network::classify(g, p, h).unwrap();
        training::cross_entropy(g, l, &labels).unwrap()
    });
    assert_within(&report, 1e-4);
}

/// The whole pre-training objective on a 4-sample batch, every parameter.
fn pretrain_objective(ablation: Ablation, mode: SoftClMode) -> FdReport {
    let net = tiny_net(8, 5, 3);
    let mut store = ParameterStore::init(&net, 19).unwrap();
    store.get_mut(LOG_SIGMA_C).unwrap().data_mut()[0] = 0.25;
    store.get_mut(LOG_SIGMA_R).unwrap().data_mut()[0] = -0.4;
    let corpus = common::small_corpus(8, 4, 1, &ContinuityProfile::default(), 20);
    let batch: Vec<&FeatureMatrix> = corpus.samples.iter().take(4).collect();
    let cfg = PretrainConfig {
        batch_size: 4,
        ablation,
        softcl: SoftClConfig {
            mode,
            ..SoftClConfig::default()
        },
        seed: 21,
        ..PretrainConfig::default()
    };
    let masks = training::epoch_masks(&cfg, 0, &[0, 1, 2, 3], net.channel_count, net.band_count);
    finite_difference_store(&store, H_NET, |g, p| {
        let fwd = training::pretrain_forward(g, p, &net, &cfg, &batch, &masks).unwrap();
        fwd.total
    })
}

#[test]
fn full_pretraining_objective_gradients() {
    let report = pretrain_objective(Ablation::Full, SoftClMode::SoftOriginalSpace);
    assert_within(&report, 1e-4);
}

#[test]
fn ablated_and_hard_objective_gradients() {
    // embedding-space weights are computed from detached embeddings, so
    // differencing would see a dependence the tape deliberately cuts
    for (ablation, mode) in [
        (Ablation::WithoutContrastive, SoftClMode::SoftOriginalSpace),
        (Ablation::WithoutReconstruction, SoftClMode::SoftOriginalSpace),
        (Ablation::WithoutReconstruction, SoftClMode::Hard),
        (Ablation::Full, SoftClMode::Hard),
    ] {
        let report = pretrain_objective(ablation, mode);
        assert_within(&report, 1e-4);
    }
}

