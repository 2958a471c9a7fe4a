//! Decoupled two-stage low-light image enhancement.
//!
//! Stage one estimates a per-pixel, per-channel exponent map `G` and brightens
//! the input with the power mapping `I^G`. Stage two restores appearance
//! fidelity (noise, colour) with a residual encoder-decoder that is guided by
//! features of `G` at every encoder scale.
//!
//! The crate is `no_std` with `alloc`. The default `std` feature only enables
//! runtime CPU feature detection in the GEMM backend and platform math.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ablation;
pub mod augment;
pub mod checkpoint;
pub mod conv;
pub mod curve;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net1;
pub mod net2;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod psi;
pub mod scalar;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};
