//! Row-buffer locality experiments for data-intensive kernels: data
//! reordering, access-trace generation, cache filtering and a DRAM
//! row-buffer model.

pub mod config;
pub mod datagen;
pub mod dramsim;
pub mod error;
pub mod kernels;
pub mod matrix;
pub mod memsys;
pub mod pipeline;
pub mod reorder;
pub mod report;
pub mod sfc;
pub mod trace;

pub use error::{Error, Result};
