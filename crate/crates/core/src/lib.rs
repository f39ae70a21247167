pub mod channel;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod features;
pub mod mifs;
pub mod mlp;
pub mod model;
pub mod modem;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;

    #[doc = include_str!("../../../book/src/detectors.md")]
    pub struct Detectors;

    #[doc = include_str!("../../../book/src/features.md")]
    pub struct Features;

    #[doc = include_str!("../../../book/src/selection.md")]
    pub struct Selection;

    #[doc = include_str!("../../../book/src/simulation.md")]
    pub struct Simulation;

    #[doc = include_str!("../../../book/src/formats.md")]
    pub struct Formats;
}
