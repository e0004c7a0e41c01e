//! Core of the SCMM self-supervised EEG representation toolkit.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, corpus storage and
//! the command-line tool live in the `scmm` companion crate.
//!
//! Module overview:
//!
//! * [`tensor`]: dense `f64` tensors with a dynamic reverse-mode tape.
//! * [`signal`]: band-pass filtering, segmentation and differential-entropy features.
//! * [`corpus`]: synthetic corpora with short-term continuity, channel alignment, splits.
//! * [`masking`]: random, channel, parallel and hybrid masking.
//! * [`network`]: encoder, projector, decoder, classifier and the parameter store.
//! * [`objectives`]: soft assignments, soft contrastive loss, aggregate reconstruction
//!   and the uncertainty-weighted joint loss.
//! * [`optim`]: Adam with decoupled weight decay.
//! * [`training`]: pre-training and fine-tuning loops.
//! * [`metrics`]: accuracy, macro precision/recall/F1, AUROC, AUPRC, subject aggregation.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
mod math;
pub mod masking;
pub mod metrics;
pub mod network;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
