//! Synthetic instance-segmentation datasets from Gaussian Splatting objects
//! composited onto ordinary photographs.

pub mod annotations;
pub mod background;
pub mod composer;
pub mod depth_client;
pub mod extraction;
pub mod geometry;
pub mod imagebuf;
pub mod pipeline;
pub mod renderer;
pub mod splat_io;
pub mod transform;
