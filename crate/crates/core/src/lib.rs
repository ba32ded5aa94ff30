#![doc = include_str!("../../../README.md")]

pub mod catalog;
pub mod error;
pub mod exec;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod normal;
pub mod pathspace;
pub mod transport;

pub use error::{Error, Result};
