//! Desk-scale lab for auxiliary inverse-dynamics supervision of a vision
//! encoder, with pseudo time reversal (PTR) of inverse-dynamics samples.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`] – kinematic tabletop world, rendering, scripted expert.
//! * [`data`] – demonstration datasets, chunk sampling and PTR.
//! * [`nn`] – token encoder, policy / inverse-dynamics / probe heads, losses.
//! * [`train`] – combined-objective training and gradient checking.
//! * [`probe`] – frozen-encoder behavior-cloning and state probes.
//! * [`align`] – pixel-controlled partial Spearman alignment analysis.
//! * [`experiment`] – the desk-scale variant comparison.
//! * [`verify`] – the property suite behind `sal verify`.

pub mod align;
pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod par;
pub mod probe;
pub mod report;
pub mod seed;
pub mod sim;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

/// Format/version tag written into every manifest, record and checkpoint.
pub const FORMAT_VERSION: &str = "sal-v1";
/// Tool version echoed into artifact directories.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
