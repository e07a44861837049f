//! Liver fat quantification from water/fat body MRI.
//!
//! The crate covers the full pipeline on synthetic phantoms: station fusion
//! and resampling ([`volume`]), phantom generation ([`phantom`]), fat
//! fraction and network input composition ([`preprocess`]), a multi-atlas
//! registration baseline ([`atlas`]), a small convolutional regressor
//! ([`nn`]) and agreement statistics ([`stats`]). [`study`] wires the stages
//! together in memory.

pub mod atlas;
pub mod error;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod rvf;
pub mod stats;
pub mod study;
pub mod volume;

pub use error::{Error, Result};
