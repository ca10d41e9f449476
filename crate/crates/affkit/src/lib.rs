//! Joint object detection and per-pixel affordance segmentation.
//!
//! A two-stage pipeline built from scratch: a small convolutional backbone
//! shared by a region proposal network and two per-RoI heads — a detection
//! head (class + box regression) and a deconvolutional affordance head that
//! labels every pixel of a detected object. All layers carry explicit,
//! finite-difference-verified backward passes; training runs on synthetic
//! desk-scale scenes generated by the [`data`] module.

pub mod boxes;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod maskops;
pub mod model;
pub mod proposals;
pub mod runconfig;
pub mod tensor;
pub mod util;

mod rng;

pub use error::{Error, Result};
