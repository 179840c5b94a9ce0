//! Spectral toolkit for vector fields on the unit sphere.
//!
//! The crate decomposes square-integrable vector fields into the two Hardy
//! components and a tangential divergence-free part, evaluates the
//! (unbounded) continuation maps between the Hardy potentials of fields that
//! are locally divergence-free on a spherical cap, and solves the bounded
//! extremal problems that stabilize those maps.
//!
//! Layout, bottom-up:
//!
//! - [`grid`]: Gauss-Legendre x uniform-longitude quadrature and caps.
//! - [`harmonics`]: real orthonormal spherical harmonics and transforms.
//! - [`potentials`]: layer-potential multipliers and their kernel oracle.
//! - [`hardy`]: the operators `B+`, `B-` and the Hardy-Hodge decomposition.
//! - [`locality`]: cap Gram matrices, the near-null space `D_eps` and `T_off`.
//! - [`continuation`]: the maps `T(+->-)`, `T(-->+)`, the graph and `T*`.
//! - [`bep`]: bounded extremal problem solvers and mode estimation.
//! - [`cli`]: configuration, commands and report files.

pub mod bep;
pub mod cli;
pub mod continuation;
mod error;
pub mod grid;
pub mod hardy;
pub mod harmonics;
pub mod io;
pub mod linalg;
pub mod locality;
pub mod potentials;

pub use error::{Error, Result};
