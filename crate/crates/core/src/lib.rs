//! Mispronunciation detection and diagnosis with acoustic, phonetic and
//! linguistic encoders feeding an attention decoder trained with CTC.
//!
//! The crate covers the whole pipeline at desk scale: phone inventories and
//! corpus parsing, filter-bank features, a small tensor library with
//! hand-written backward passes, the CTC objective and decoders, the model
//! and its training loop, and alignment-based scoring.

pub mod ablation;
pub mod corpus;
pub mod ctc;
mod error;
pub mod features;
pub mod matfile;
pub mod model;
pub mod numcore;
pub mod phoneset;
pub mod scoring;

pub use error::{Error, Result};
