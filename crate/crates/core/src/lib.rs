//! Indoor microphone localization from environmental sound.
//!
//! A mixture recording is decomposed with supervised Itakura-Saito NMF into
//! known landmark sources plus a free noise source ([`nmf`]). The log energy
//! of each Wiener-filtered landmark estimate is compared with per-landmark
//! Gaussian-process predictions over the room ([`gp`]), giving a spatial
//! likelihood that is maximized by grid search, optionally after fusing a
//! Gaussian prior ([`localize`]). [`sim`] generates synthetic rooms and
//! [`eval`] runs leave-one-out evaluations and SNR sweeps.

pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gp;
pub mod io;
pub mod localize;
pub mod model;
pub mod nmf;
pub mod pipeline;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
