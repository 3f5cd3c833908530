//! Goal-oriented joint semantic source and channel coding (G-JSSCC)
//! simulator.
//!
//! An image is split into object regions, each region's importance to a
//! classifier is measured with Shapley values computed under a
//! compression/bit-error degradation model, and the object is re-partitioned
//! into a most-important superpixel plus positive and negative regions.
//! Protection schemes then assign compression quality and channel protection
//! per region group and report classification probability, code rate and
//! coding efficiency.
//!
//! - [`imaging`]: rasters, masks, grid pre-segmentation, recomposition
//! - [`classifier`]: prototype classifier and external stdio oracle
//! - [`source_codec`]: block-DCT codec with resync-marked rows
//! - [`channel`]: BPSK bit-error model and normal-approximation sizing
//! - [`link`]: one protected/unprotected transmission of an image
//! - [`shapley`]: coalition values, Shapley estimators, region extraction
//! - [`pipeline`]: schemes, metrics, sweeps and persisted formats

pub mod bits;
pub mod channel;
pub mod classifier;
pub mod error;
pub mod imaging;
pub mod link;
pub mod pipeline;
pub mod seed;
pub mod shapley;
pub mod source_codec;

pub use error::{Error, Result};
