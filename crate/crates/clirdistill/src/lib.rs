//! Filesystem side of the CLIR distillation toolkit: artifact formats,
//! checkpoints, serialized indexes, pipeline configuration and the staged
//! pipeline runner behind the `clirdistill` binary.

mod binio;
pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod digest;
pub mod error;
pub mod formats;
pub mod index_store;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{Pipeline, Stage};
