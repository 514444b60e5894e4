//! Perron–Frobenius eigenvectors of irreducible non-negative and Metzler
//! matrices, finite or countably infinite, through their Markov-chain
//! representation: taboo-power series and regenerative Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
pub mod error;
pub mod io;
pub mod matrix;
pub mod mc;
pub mod metzler;
pub mod models;
pub mod oracle;
mod scaled;
pub mod series;
pub mod tail;
pub mod verify;

pub use convergence::{
    classify_recurrence, convergence_parameter_finite, convergence_parameter_ladder,
    ConvergenceReport, Recurrence,
};
pub use error::{Error, Result};
pub use matrix::{MatrixSource, MetzlerSource, StateId};
