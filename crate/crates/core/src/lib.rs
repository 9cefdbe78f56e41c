//! Continuous-time iterative LQR with a square-root Riccati backward pass and
//! adaptive-step integration of both passes.

pub mod error;
pub mod matops;
pub mod models;
pub mod ocp;
pub mod odeint;
pub mod riccati;
pub mod rollout;
pub mod solver;

pub use error::{Error, Result};
