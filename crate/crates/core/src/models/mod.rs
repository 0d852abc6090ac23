//! Transformer forecasters: vanilla encoder-decoder, Informer-style ProbSparse
//! attention, and PatchTST-style patched encoder.
//!
//! All three consume `[batch, lookback, features]` windows and emit the whole
//! `[batch, horizon]` block in one forward pass. The encoder-decoder models feed
//! the decoder a zero placeholder for every horizon position (embedded through
//! the shared input projection plus positional encoding), so there is no
//! autoregressive loop. Informer differs from Vanilla only in its self-attention
//! (ProbSparse in both encoder and decoder; cross-attention stays full), which
//! means the two share an identical parameter layout.

pub mod attention;
pub mod checkpoint;
mod config;
mod forecaster;
mod layers;
mod patch;

pub use config::{Arch, ModelConfig, STANDARD_HORIZONS};
pub use forecaster::{ForecastBatch, Forecaster};
pub use layers::{positional_encoding, ForwardCtx, ParamSet};
pub use patch::{patch_count, patch_tokens, patchify};
