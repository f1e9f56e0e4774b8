//! Reduced-order deformable dynamics with a low-rank Koopman operator.
//!
//! Snapshots from a full-space implicit Euler simulator ([`refsim`]) are
//! lifted to `[U_t; U_t - U_{t-1}]` ([`statespace`]) and fitted by dynamic
//! mode decomposition ([`dmd`]). The fitted model advances by eigenvalue
//! exponentiation ([`koopstep`]) and drives quasi-static pressure control
//! ([`control`]).

pub mod bench;
pub mod commands;
pub mod control;
pub mod dmd;
pub mod error;
pub mod io;
pub mod koopstep;
mod linalg;
pub mod metrics;
pub mod refsim;
pub mod scenarios;
pub mod service;
pub mod statespace;

pub use error::{Error, Result};
