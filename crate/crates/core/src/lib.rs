//! Neural adaptive binning (NAB) for self-supervised sparse-view CT.
//!
//! The crate is organised around the reconstruction pipeline:
//!
//! - [`geometry`]: coordinate grids, phantoms and raster files,
//! - [`projector`]: the parallel-beam operator, its transpose and SIRT,
//! - [`encoder`]: the adaptive binning feature map and its gradients,
//! - [`rfc`]: the random Fourier coding baseline encoder,
//! - [`network`]: the fully connected ReLU network,
//! - [`trainer`]: loss, Adam with parameter groups, the training loop and checkpoints,
//! - [`metrics`]: PSNR and SSIM,
//! - [`gradcheck`]: finite-difference verification of the full gradient chain.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Every
//! reduction has a fixed order, so both builds produce bit-identical results.

pub mod encoder;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod par;
pub mod projector;
pub mod rfc;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{make_grid, CoordinateGrid, Image, PhantomPreset, PhantomSpec, Primitive};
pub use projector::{ScanGeometry, Sinogram};
