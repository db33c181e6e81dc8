//! Joint bang-bang PEV charging and AC optimal power flow scheduling.
//!
//! The crate builds the semidefinite relaxation of a multi-slot AC OPF with
//! per-slot PEV charging decisions, recovers binary schedules and rank-one
//! voltages with two penalty iterations, and runs the result inside a
//! rolling-horizon controller. A brute-force oracle certifies the pipeline on
//! toy instances.

pub mod error;
pub mod grid;
pub mod linalg;
pub mod scenario;
pub mod sdp;

pub use error::{Error, Result};
pub mod relaxation;
pub mod stage1;
pub mod stage2;
pub mod mpc;
pub mod oracle;
pub mod harness;
