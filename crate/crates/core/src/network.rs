//! Encoder, projector, decoder and classifier over a named parameter store.
//!
//! The encoder reads a `[B, C, F]` batch as `F` input maps over the length-`C`
//! electrode axis: three `conv1d + ReLU` stages, global average pooling over
//! the electrode axis, then a linear map to the embedding. The projector and
//! classifier are `linear -> ReLU -> linear`; the decoder is a single linear
//! layer to `C * F` values.
//!
//! Parameter count, with `s_i = (out_i, k_i)` the conv stages, `in_1 = F`,
//! `in_{i+1} = out_i`, embedding `E`, projection `P`, classifier hidden `H`,
//! `K` classes:
//!
//! ```text
//! sum_i (out_i*in_i*k_i + out_i) + (out_3*E + E)     encoder
//!   + (E*E + E) + (E*P + P)                          projector
//!   + (E*C*F + C*F)                                  decoder
//!   + (E*H + H) + (H*K + K)                          classifier
//!   + 2                                              loss log-variances
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::math;
use crate::rng;
use crate::signal::FeatureMatrix;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

pub const LOG_SIGMA_C: &str = "loss.log_sigma_c";
pub const LOG_SIGMA_R: &str = "loss.log_sigma_r";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvStage {
    pub const fn new(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (self.kernel >= 1 && self.kernel <= padded && self.stride >= 1)
            .then(|| (padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub channel_count: usize,
    pub band_count: usize,
    pub encoder: Vec<ConvStage>,
    pub embedding_dim: usize,
    pub projection_dim: usize,
    pub classifier_hidden: usize,
    pub class_count: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            channel_count: 62,
            band_count: 5,
            encoder: vec![ConvStage::new(32), ConvStage::new(64), ConvStage::new(128)],
            embedding_dim: 128,
            projection_dim: 64,
            classifier_hidden: 64,
            class_count: 3,
        }
    }
}

impl NetworkConfig {
    /// Default widths for the given data shape.
    pub fn for_data(channel_count: usize, band_count: usize, class_count: usize) -> Self {
        Self {
            channel_count,
            band_count,
            class_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() != 3 {
            return config_err(format!(
                "encoder needs exactly 3 conv stages, got {}",
                self.encoder.len()
            ));
        }
        if self.channel_count == 0 || self.band_count == 0 {
            return config_err("channel and band counts must be positive");
        }
        if self.embedding_dim < 2 || self.projection_dim < 2 {
            return config_err("embedding and projection dims must be at least 2");
        }
        if self.classifier_hidden == 0 || self.class_count < 2 {
            return config_err("classifier needs a hidden width and at least 2 classes");
        }
        let mut len = self.channel_count;
        for (i, s) in self.encoder.iter().enumerate() {
            if s.out_channels == 0 {
                return config_err(format!("conv stage {} has no output channels", i + 1));
            }
            len = s.out_len(len).ok_or_else(|| {
                Error::Config(format!("conv stage {} does not fit its input length {len}", i + 1))
            })?;
        }
        Ok(())
    }

    /// Every parameter name with its shape, in store order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.band_count;
        for (i, s) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.conv{}.weight", i + 1), vec![s.out_channels, cin, s.kernel]));
            out.push((format!("encoder.conv{}.bias", i + 1), vec![s.out_channels, 1]));
            cin = s.out_channels;
        }
        let (e, p) = (self.embedding_dim, self.projection_dim);
        let cf = self.channel_count * self.band_count;
        let linear = |out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
            out.push((format!("{name}.weight"), vec![i, o]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        linear(&mut out, "encoder.fc", cin, e);
        linear(&mut out, "projector.fc1", e, e);
        linear(&mut out, "projector.fc2", e, p);
        linear(&mut out, "decoder.fc", e, cf);
        linear(&mut out, "classifier.fc1", e, self.classifier_hidden);
        linear(&mut out, "classifier.fc2", self.classifier_hidden, self.class_count);
        out.push((LOG_SIGMA_C.to_string(), vec![]));
        out.push((LOG_SIGMA_R.to_string(), vec![]));
        out
    }

    /// Closed-form parameter count (see module docs).
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        let mut cin = self.band_count;
        for s in &self.encoder {
            n += s.out_channels * cin * s.kernel + s.out_channels;
            cin = s.out_channels;
        }
        let (e, p, h, k) = (
            self.embedding_dim,
            self.projection_dim,
            self.classifier_hidden,
            self.class_count,
        );
        let cf = self.channel_count * self.band_count;
        n + (cin * e + e) + (e * e + e) + (e * p + p) + (e * cf + cf) + (e * h + h) + (h * k + k) + 2
    }
}

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    entries: Vec<(String, Tensor)>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Uniform Glorot initialization of weights, zero biases and log-variances.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(rng::derive(seed, &[rng::stream::INIT]));
        let mut store = Self::new();
        for (name, shape) in config.parameter_shapes() {
            let numel: usize = shape.iter().product();
            let data = if name.ends_with(".weight") {
                let (fan_in, fan_out) = if shape.len() == 3 {
                    (shape[1] * shape[2], shape[0] * shape[2])
                } else {
                    (shape[0], shape[1])
                };
                let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            } else {
                vec![0.0; numel]
            };
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks that every parameter the config needs exists with the right shape.
    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        let shapes = config.parameter_shapes();
        for (name, shape) in &shapes {
            let t = self.get(name).ok_or_else(|| Error::ParameterShape {
                name: name.clone(),
                expected: shape.clone(),
                found: vec![],
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ParameterShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if shapes.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "store has {} parameters, config expects {}",
                self.entries.len(),
                shapes.len()
            )));
        }
        Ok(())
    }

    pub fn log_sigma_c(&self) -> f64 {
        self.get(LOG_SIGMA_C).map_or(0.0, |t| t.data()[0])
    }

    pub fn log_sigma_r(&self) -> f64 {
        self.get(LOG_SIGMA_R).map_or(0.0, |t| t.data()[0])
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters of a store placed on a graph, trainable or frozen.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    /// Places every parameter accepted by `select` on the graph, as a trainable
    /// leaf when `trainable` also accepts it and as a constant otherwise.
    pub fn bind(
        g: &mut Graph,
        store: &ParameterStore,
        select: impl Fn(&str) -> bool,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let mut vars = Vec::new();
        for (name, t) in store.iter() {
            if !select(name) {
                continue;
            }
            let v = if trainable(name) {
                g.parameter(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.push((name.to_string(), v));
        }
        Self { vars }
    }

    /// Binds every parameter as trainable.
    pub fn all(g: &mut Graph, store: &ParameterStore) -> Self {
        Self::bind(g, store, |_| true, |_| true)
    }

    /// Binds every parameter as a constant.
    pub fn frozen(g: &mut Graph, store: &ParameterStore) -> Self {
        Self::bind(g, store, |_| true, |_| false)
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Gradients of trainable leaves, keyed by parameter name.
    pub fn gradients(&self, g: &Graph) -> Vec<(String, Vec<f64>)> {
        self.vars
            .iter()
            .filter(|(_, v)| g.requires_grad(*v))
            .filter_map(|(n, v)| g.grad(*v).map(|d| (n.clone(), d.to_vec())))
            .collect()
    }
}

/// Packs a batch as the `[B, F, C]` input the encoder convolves over.
pub fn batch_tensor(batch: &[&FeatureMatrix]) -> Result<Tensor> {
    let Some(first) = batch.first() else {
        return Err(Error::Contract("empty batch".to_string()));
    };
    let (c, f) = (first.channels(), first.bands());
    let mut data = vec![0.0; batch.len() * c * f];
    for (b, m) in batch.iter().enumerate() {
        if m.channels() != c || m.bands() != f {
            return Err(Error::Dimension {
                op: "batch",
                left: vec![c, f],
                right: vec![m.channels(), m.bands()],
            });
        }
        let base = b * c * f;
        for ch in 0..c {
            for band in 0..f {
                data[base + band * c + ch] = m.get(ch, band);
            }
        }
    }
    Tensor::new(vec![batch.len(), f, c], data)
}

/// The batch as `[B, C, F]`, the decoder's layout.
pub fn target_tensor(batch: &[&FeatureMatrix]) -> Result<Tensor> {
    let Some(first) = batch.first() else {
        return Err(Error::Contract("empty batch".to_string()));
    };
    let cf = first.values().len();
    let mut data = Vec::with_capacity(batch.len() * cf);
    for m in batch {
        if m.values().len() != cf {
            return Err(Error::Dimension {
                op: "batch",
                left: vec![first.channels(), first.bands()],
                right: vec![m.channels(), m.bands()],
            });
        }
        data.extend_from_slice(m.values());
    }
    Tensor::new(vec![batch.len(), first.channels(), first.bands()], data)
}

fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Encoder `E`: `[B, F, C]` input to `[B, embedding_dim]`.
pub fn encode(g: &mut Graph, p: &Bound, config: &NetworkConfig, x: Var) -> Result<Var> {
    let s = g.shape(x);
    if s.len() != 3 || s[1] != config.band_count || s[2] != config.channel_count {
        return Err(Error::Dimension {
            op: "encode",
            left: s.to_vec(),
            right: vec![0, config.band_count, config.channel_count],
        });
    }
    let mut h = x;
    for (i, stage) in config.encoder.iter().enumerate() {
        let w = p.var(&format!("encoder.conv{}.weight", i + 1))?;
        let b = p.var(&format!("encoder.conv{}.bias", i + 1))?;
        h = g.conv1d(h, w, stage.stride, stage.padding)?;
        h = g.add(h, b)?;
        h = g.relu(h)?;
    }
    let pooled = g.mean_last_axis(h)?;
    linear(g, p, "encoder.fc", pooled)
}

/// Projector `P`: `[B, embedding_dim]` to `[B, projection_dim]`.
pub fn project(g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
    let a = linear(g, p, "projector.fc1", h)?;
    let a = g.relu(a)?;
    linear(g, p, "projector.fc2", a)
}

/// Decoder `D`: `[B, embedding_dim]` to `[B, C, F]`.
pub fn decode(g: &mut Graph, p: &Bound, config: &NetworkConfig, h: Var) -> Result<Var> {
    let flat = linear(g, p, "decoder.fc", h)?;
    let b = g.shape(flat)[0];
    g.reshape(flat, &[b, config.channel_count, config.band_count])
}

/// Classifier head: `[B, embedding_dim]` to `[B, class_count]` logits.
pub fn classify(g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
    let a = linear(g, p, "classifier.fc1", h)?;
    let a = g.relu(a)?;
    linear(g, p, "classifier.fc2", a)
}

/// Inference-only embedding of a batch.
pub fn embed(store: &ParameterStore, config: &NetworkConfig, batch: &[&FeatureMatrix]) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = Bound::bind(&mut g, store, |n| n.starts_with("encoder."), |_| false);
    let x = g.constant(batch_tensor(batch)?);
    let h = encode(&mut g, &p, config, x)?;
    Ok(g.value(h).clone())
}

/// Inference-only class logits of a batch.
pub fn logits(store: &ParameterStore, config: &NetworkConfig, batch: &[&FeatureMatrix]) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = Bound::bind(
        &mut g,
        store,
        |n| n.starts_with("encoder.") || n.starts_with("classifier."),
        |_| false,
    );
    let x = g.constant(batch_tensor(batch)?);
    let h = encode(&mut g, &p, config, x)?;
    let l = classify(&mut g, &p, h)?;
    Ok(g.value(l).clone())
}
