//! Bottom-up multi-human parsing on desk-scale synthetic scenes: a parsing
//! network with an affinity head trained against a graph discriminator,
//! spectral instance extraction, dense-CRF refinement and part-level
//! evaluation.

pub mod affinity;
pub mod config;
pub mod crf;
pub mod error;
pub mod graphgan;
pub mod instance;
pub mod metrics;
pub mod numcore;
pub mod palette;
pub mod parsernet;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
