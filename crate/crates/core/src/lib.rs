//! Offline reinforcement learning toolkit for the cart-pole balancing
//! benchmark: batch generation, a neural surrogate of the dynamics, and a
//! collection of controller synthesis methods (LQR, PID tuning, fitted Q
//! iteration, particle swarm and genetic programming policy search) compared
//! under one evaluation protocol.

pub mod classical;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod io;
pub mod neural;
pub mod nfq;
pub mod policies;
pub mod pso;
pub mod surrogate;
pub mod synthesis;

pub use error::{Error, Result};
