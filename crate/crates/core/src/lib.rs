pub mod auditor;
pub mod binning;
pub mod cloudstore;
pub mod error;
pub mod gen;
pub mod join;
pub mod par;
pub mod partitioner;
pub mod range;
pub mod retrieval;

pub use error::{Error, Result};
