//! Link-level OFDM simulation toolkit.
//!
//! The crate covers the whole receive chain on a K×N time-frequency grid:
//! fading channel synthesis ([`channel`]), QAM framing and the per resource
//! element channel model ([`ofdm`]), pilot-aided LS/MMSE estimation with
//! classical interpolation ([`pilots`]), ZF/RZF detection ([`equalize`]), and
//! two neural receivers built on a small autodiff engine ([`numerics`]):
//! a super-resolution channel estimator ([`cenet`]) and a conditional GAN
//! detector ([`ccrnet`]). [`harness`] ties everything into datasets, sweeps
//! and the `odl` command line tool.

pub mod ccrnet;
pub mod cenet;
pub mod channel;
pub mod equalize;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod ofdm;
pub mod pilots;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
