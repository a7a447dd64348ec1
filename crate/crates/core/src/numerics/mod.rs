//! A small deterministic reverse-mode autodiff engine in 64-bit floats.
//!
//! Only the layers the two receivers need are provided. Values live in
//! [`Tensor`]s; a [`Tape`] records every operation of one forward pass and
//! replays it backwards exactly once. Trainable tensors are owned by a
//! [`ParamSet`] and enter a tape through [`Tape::param`].

mod adam;
mod checkpoint;
pub mod gradcheck;
mod kernels;
mod layers;
mod param;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kernels::{channel_covariance, conv2d_output_dims};
pub use layers::{BatchNorm2d, Conv2d, Init, Linear, Mode, BN_EPS, BN_MOMENTUM};
pub use param::{ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
