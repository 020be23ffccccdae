//! Deterministic per-epoch signal features: band power, spindle and
//! slow-wave durations, robust amplitude, kurtosis.

pub mod events;
pub mod features;
pub mod filter;
pub mod welch;

pub use events::EventDuration;
pub use features::{EpochFeatures, FeatureExtractor, BAND_EDGES, BAND_NAMES, NUM_BANDS};
pub use filter::BandPass;
pub use welch::WelchEstimator;
