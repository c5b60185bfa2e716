//! Lightweight deformable Gaussian splatting.
//!
//! A dynamic scene is a cloud of 3D Gaussians plus a spatio-temporal
//! deformation field. This crate renders such scenes on the CPU, compresses
//! them (deformation-aware pruning, SH truncation, feature-plane pooling) and
//! fine-tunes the compressed student against its teacher by distillation.

pub mod bench;
pub mod compress;
pub mod deformation;
pub mod error;
pub mod image;
pub mod io;
pub mod optimizer;
pub mod render;
pub mod scene;
pub mod sh;

pub use error::{FormatKind, LgsError, Result};
