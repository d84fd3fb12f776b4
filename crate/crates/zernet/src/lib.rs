//! Zernike convolution on triangle meshes.
//!
//! Scalar fields sampled on a curved surface are decomposed over local
//! geodesic disk patches into orthonormal Zernike coefficients, convolved
//! against learned filters by coefficient dot products with exact rotational
//! steering, and regressed through a small trainable network.

pub mod cli;
pub mod error;
pub mod mesh;
pub mod net;
pub mod patch;
pub mod quadrature;
mod spatial;
pub mod train;
pub mod zernike;

pub use error::{Error, Result};
