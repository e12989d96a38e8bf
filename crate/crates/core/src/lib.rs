//! Exact sampling of Pfaffian point processes and the matrix-valued kernels
//! of the orthogonal and symplectic random matrix ensembles.

pub mod airy;
pub mod cli;
pub mod error;
pub mod gibbs;
pub mod kernels;
pub mod krylov;
pub mod oracles;
pub mod poly;
pub mod quad;
pub mod sampler;
pub mod skew;
pub mod testing;

pub use error::{Error, Result};
