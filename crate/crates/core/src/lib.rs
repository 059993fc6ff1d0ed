//! Verification-centric synthesis of RGB + pseudo-LiDAR object instances for
//! long-tail 3D detection datasets.
//!
//! The generative models (inpainting, segmentation, depth, vision-language
//! verification) live behind the traits in [`providers`]; everything else,
//! from box sampling to composition and yield analytics, is implemented here.

pub mod analytics;
pub mod benchmarks;
pub mod compose;
pub mod dataset_io;
pub mod geometry;
pub mod geoverify;
pub mod pipeline;
pub mod placement;
pub mod pointcloud;
pub mod prompts;
pub mod providers;
pub mod rng;
