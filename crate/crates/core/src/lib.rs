//! Asynchronous SPAD direct time-of-flight LiDAR toolkit.
//!
//! The crate is organised the way data flows through a flash LiDAR pixel:
//!
//! - [`histogram`]: timing histograms, array coordinates and the bin/depth
//!   conversion shared by everything else.
//! - [`scene`]: parametric scenes and the Poisson photon sampler that turns
//!   them into per-cycle bin counts.
//! - [`detector`]: the per-pixel peak-finding / thresholding state machine
//!   that emits asynchronous peak events.
//! - [`analytic`]: closed-form hit, pass and false-positive probabilities,
//!   threshold bounds, ROC curves and a Monte Carlo cross-check.
//! - [`fixedpoint`]: a bit-exact integer model of the on-chip processing
//!   channel (comparator tree, quadrant background, bit-serial square root).
//! - [`events`]: depth/count/reflectivity maps, Dynamic-Depth encoding and
//!   the flat-target evaluation harness.
//! - [`stream`]: the newline-delimited event record format.
//!
//! Every randomized routine takes an explicit [`RandomSource`]; identical
//! seeds give bit-identical output.

pub mod analytic;
pub mod detector;
pub mod error;
pub mod events;
pub mod fixedpoint;
pub mod gaussian;
pub mod histogram;
pub mod random;
pub mod scene;
pub mod scene_config;
pub mod stream;

pub use error::{Error, Result};
pub use histogram::{DepthValue, Histogram, HistogramConfig, PixelCoord, SPEED_OF_LIGHT};
pub use random::RandomSource;
