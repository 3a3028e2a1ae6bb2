pub mod error;
pub mod evaluator;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod plot;
pub mod rlcore;
pub mod seeds;
pub mod student;
pub mod synthworld;
pub mod teachers;
pub mod trainer;

pub use error::{Error, Result};
