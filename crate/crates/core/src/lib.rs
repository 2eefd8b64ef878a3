//! Drug-drug interaction prediction with learned, explainable knowledge
//! subgraphs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gradcheck;
pub mod graph;
pub mod ksg;
pub mod model;
pub mod params;
pub mod selftest;
pub mod subgraph;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use config::{Reduction, RunConfig, Task};
pub use error::{Error, Result};
