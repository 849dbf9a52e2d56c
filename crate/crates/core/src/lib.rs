pub mod error;
pub mod config;
pub mod crossing;
pub mod dynamics;
pub mod expr;
pub mod gaussian;
pub mod grid;
pub mod hk;
pub mod jet;
pub mod linalg;
pub mod models;
pub mod poly;
pub mod propagator;
pub mod reference;
pub mod study;

pub use error::{Error, Result};
