//! Street-scene novel view synthesis building blocks: LiDAR fusion and
//! projection, multi-modal raster codecs, a video-diffusion sampler with
//! condition stacks, and a differentiable Gaussian splatting trainer.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod modality;
pub mod optim;
pub mod pipeline;
pub mod splat;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/modality.md")]
    mod modality {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/conditioning.md")]
    mod conditioning {}
    #[doc = include_str!("../../../book/src/splat.md")]
    mod splat {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
