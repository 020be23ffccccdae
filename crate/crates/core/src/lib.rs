//! Interpretable sleep staging over multi-channel PSG epochs.
//!
//! The pipeline embeds 30-second epochs with a 1-D CNN, encodes each epoch
//! against a bank of expert rules, sums normalized embeddings per rule into
//! prototypes, and classifies stages from cosine similarities to those
//! prototypes with shallow, inspectable models.

pub mod classifiers;
pub mod dsp;
pub mod embedder;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod prototypes;
pub mod rulebank;
pub mod stats;
pub mod synth;
pub mod error;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    split_by_subject, ChannelId, ChannelPair, DatasetSplit, Epoch, Recording, SleepStage,
    EPOCH_SECONDS, NUM_CHANNELS, NUM_STAGES, SAMPLES_PER_EPOCH, SAMPLE_RATE_HZ,
};
