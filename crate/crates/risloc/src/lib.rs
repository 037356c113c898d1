//! RIS-enabled multi-user 3D passive localization.
//!
//! One transmitter with a known location illuminates a scene; `M`
//! asynchronous receivers (unknown clock biases) capture the direct path
//! plus the reflections from user-mounted reconfigurable intelligent
//! surfaces. Each RIS modulates its reflection with an orthogonal temporal
//! code, so the receivers can separate the per-user paths, estimate the
//! time of arrival of each one, and multilaterate every user's 3D position
//! from clock-bias-free TDOA measurements.
//!
//! The crate is organized as a pipeline:
//!
//! - [`geometry`]: coordinate transforms, steering vectors, bistatic ranges
//! - [`ris`]: orthogonal RIS phase-profile design
//! - [`channel`]: frequency-domain received-signal synthesis
//! - [`toa`]: code projection and per-path delay estimation
//! - [`locator`]: TDOA formation, closed-form init, ML position refinement
//! - [`bounds`]: delay CRB, TDOA covariance, and position error bound (PEB)
//! - [`config`]: scenario files, unit conversion, validation
//! - [`harness`]: Monte Carlo experiment drivers and result serialization

// `!(a > b)` guards are used wherever a NaN must take the conservative
// branch (reject, flag singular, skip); `partial_cmp` would bury that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod channel;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod locator;
pub mod ris;
pub mod toa;

pub use error::{Error, Result};

/// Propagation speed used for all delay/range conversions, in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named PRNG substream domains. Every random draw in the crate comes from
/// `substream(seed, domain, index)` so that runs are reproducible and
/// independent draws never share a stream.
pub(crate) mod streams {
    pub const RX_NOISE: u64 = 1;
    pub const CLOCK_BIAS: u64 = 2;
    pub const SCATTERER: u64 = 3;
    pub const RIS_CONSTANT: u64 = 4;
}

/// Deterministic, portable PRNG substream derived from `(seed, domain, index)`.
pub(crate) fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 32) | (index & 0xffff_ffff));
    rng
}
