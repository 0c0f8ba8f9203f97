//! Deformable generator networks.
//!
//! An image is modelled as `X = warp(F_a(Za), F_g(Zg)) + noise`: the
//! appearance generator `F_a` paints an image from the appearance latent
//! and the geometric generator `F_g` produces a per-pixel displacement field
//! that moves those pixels without changing their colours. Both latents
//! are inferred by alternating Langevin dynamics and the generators are
//! learned by maximum likelihood ([`training::train`]), or jointly with an
//! encoder as a variational auto-encoder ([`vae`]).
//!
//! Runnable walkthroughs live in `examples/`; the `dgn` binary exposes the
//! same workflow on the command line.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod model;
pub mod network;
pub mod ops;
pub mod seeding;
pub mod tensor;
pub mod training;
pub mod vae;
pub mod warp;

pub use error::{Error, Result};
pub use inference::{ChainStore, LangevinConfig, LatentKind};
pub use model::{ArchitectureConfig, DeformableGenerator, LatentPair, WarpMode};
pub use tensor::Tensor;
