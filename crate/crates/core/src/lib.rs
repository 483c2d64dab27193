//! Correspondence-free unsupervised rigid registration of 3D point clouds.
//!
//! Each cloud is encoded twice: once from raw coordinates (the pose-sensitive
//! global representation) and once from rigid-motion-invariant point
//! features (the pose-invariant representation). The two are turned into
//! distributions with a softmax and "subtracted" entrywise as `p * ln(p / q)`;
//! what remains is regressed into a pose relative to a learned canonical
//! shape. Source and target poses are then composed into the relative
//! transform. Training is unsupervised: the Chamfer distance between the two
//! canonicalized clouds is the only loss.
//!
//! The crate is self-contained: it carries its own small reverse-mode
//! autodiff tape ([`autodiff`]), geometry kernels ([`geom`]), invariant
//! descriptors ([`features`]), the encoders ([`encoder`]), the separation and
//! pose head ([`separation`]), procedural data ([`datagen`]), optimisation
//! ([`training`]) and benchmarking against ICP ([`evalbench`]).

pub mod autodiff;
pub mod datagen;
pub mod encoder;
mod error;
pub mod evalbench;
pub mod features;
pub mod geom;
pub mod separation;
pub mod training;

pub use error::{Error, Result};
