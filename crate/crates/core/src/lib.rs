pub mod carleman;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod inverse;
pub mod mesh;
pub mod random;
pub mod solver;
pub mod study;
pub mod tree;
pub mod weights;

pub use error::{Error, Result};
