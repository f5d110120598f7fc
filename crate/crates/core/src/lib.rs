//! Label-free, pose-agnostic change localization on top of 3D Gaussian
//! splatting.
//!
//! A reference splat model is trained from pre-change images, rendered at the
//! post-change camera poses, and compared against the post-change images to
//! produce candidate change masks (feature difference × low SSIM). A second
//! model, initialized from the reference, is re-optimized on the post-change
//! images while two extra per-Gaussian channels (change magnitude and change
//! opacity) learn the candidate masks. Rendering those channels gives
//! multi-view consistent change masks for any pose, including unseen ones.

pub mod error;
pub mod features;
pub mod io;
pub mod masks;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod ssim;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
