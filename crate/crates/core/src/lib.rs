pub mod error;
pub mod geometry;
pub mod global;
pub mod analysis;
pub mod cli;
pub mod compact;
pub mod krylov;
pub mod labfm;
pub mod solvers;
pub mod sparse;

pub use error::{Error, Result};
