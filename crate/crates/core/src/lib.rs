//! Differentiable 3D Gaussian splatting for driving scenes, regularized by
//! restored novel-trajectory renderings.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature enables
//! data-parallel rasterization through rayon; results are bitwise identical
//! with and without it because every parallel reduction runs over a fixed
//! chunking in a fixed order.
//!
//! Module map:
//! - [`imaging`]: image, depth and mask containers plus SSIM, PSNR, Sobel, noise.
//! - [`camera`]: pinhole cameras, SE(3) poses, the warp and panning trajectories.
//! - [`scene`]: Gaussian primitives, rigid dynamic nodes, the scene model.
//! - [`raster`]: forward rendering (color, blended depth, alpha) and its analytic backward pass.
//! - [`supervision`]: losses, warped pseudo images, unreliability masks, LiDAR accumulation.
//! - [`restorer`]: restoration interface, oracle restorers, edge-aware mask sampling.
//! - [`trainer`]: the iterative-refinement optimization loop.
//! - [`synthworld`]: procedural worlds, datasets and simulated LiDAR.
//! - [`evaluation`]: recorded and novel-trajectory metrics.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod camera;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod math;
pub mod raster;
pub mod restorer;
pub mod scene;
pub mod supervision;
pub mod synthworld;
pub mod trainer;

mod par;

pub use error::{Error, Result};
