pub mod error;
pub mod eval;
pub mod filters;
pub mod geometry;
pub mod graph;
pub mod image;
pub mod mapper;
pub mod render;
pub mod sim;

pub use error::{Error, Result};
