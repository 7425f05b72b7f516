//! Turn-terminality classification toolkit.
//!
//! The crate is organized around the life cycle of one experiment:
//!
//! * [`corpus`] — sample metadata, manifests, corpus statistics, and a
//!   synthetic corpus generator for tests and dry runs.
//! * [`audio`] — mono waveform type with WAV I/O and resampling.
//! * [`preprocess`] — chunk extraction around speaker changes and
//!   transcription (cached, pluggable ASR back ends).
//! * [`encoders`] — fixed-width embedding providers for audio and text,
//!   including deterministic stub encoders and an embedding cache.
//! * [`heads`] — the five classifier architectures (text-only, audio-only,
//!   early/late/average fusion) built on a small dense-network kernel.
//! * [`experiment`] — grouped cross-validation folds, training with early
//!   stopping, the full job grid, and prediction records.
//! * [`analysis`] — accuracy aggregation, a REML linear mixed model,
//!   Fleiss' kappa, and Bonferroni-adjusted pairwise contrasts.

pub mod analysis;
pub mod audio;
pub mod corpus;
pub mod cue;
pub mod encoders;
pub mod experiment;
pub mod heads;
pub mod preprocess;
pub mod util;
