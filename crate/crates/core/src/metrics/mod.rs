//! Evaluation metrics: Fréchet gesture distance over learned window
//! features, beat alignment, diversity, and lagged interaction coupling.

pub mod beat;
pub mod diversity;
pub mod encoder;
pub mod frechet;
pub mod interaction;
pub mod report;

pub use beat::{audio_beats, beat_align, beat_align_times, default_sigma, gesture_beats};
pub use diversity::diversity;
pub use encoder::{fgd, motion_windows, train_feature_encoder, EncoderConfig, EncoderReport, FeatureEncoder};
pub use frechet::{frechet_distance, GaussianSummary};
pub use interaction::{cross_correlation, joint_energy, motion_energy, peak_lag};
pub use report::{evaluate, score, Evaluation, MetricsReport};
