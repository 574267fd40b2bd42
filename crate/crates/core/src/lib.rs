//! Exact-diagonalization toolkit for thermalization of a small system
//! coupled to a finite bath: model Hamiltonians, spectra, unitary
//! dynamics, projective-measurement trajectories, random-matrix
//! predictions and a classical Ornstein-Uhlenbeck reference.

extern crate openblas_src;

pub mod dynamics;
pub mod error;
pub mod export;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod ou;
pub mod rmt;
pub mod seed;
pub mod spectral;
pub mod trajectories;

pub use error::{Error, Result};
