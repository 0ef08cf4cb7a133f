pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gibbs;
pub mod io;
pub mod misspec;
pub mod model;
pub mod mri;
pub mod npl;
pub mod recon;
pub mod rng;
pub mod stats;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub struct Geometry;
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    pub struct Reconstruction;
    #[doc = include_str!("../../../book/src/segmentation.md")]
    pub struct Segmentation;
    #[doc = include_str!("../../../book/src/npl.md")]
    pub struct Npl;
    #[doc = include_str!("../../../book/src/gibbs.md")]
    pub struct Gibbs;
    #[doc = include_str!("../../../book/src/summaries.md")]
    pub struct Summaries;
    #[doc = include_str!("../../../book/src/misspecification.md")]
    pub struct Misspecification;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
