//! Pessimistic actor-critic laboratory.
//!
//! Two halves share this crate:
//!
//! * [`error_lab`] evaluates critic-ensemble approximation errors exactly on
//!   finite MDPs ([`mdp`]) and certifies the contraction and fixed-point
//!   properties of the error operators;
//! * [`agent`], [`pessimism`] and [`harness`] run a small MaxEnt actor-critic
//!   with online pessimism adjustment (fixed, VPL, GPL, OPL, TOP and the
//!   loss × data-source ablations) on the built-in environments in [`env`].

pub mod agent;
pub mod env;
pub mod error;
pub mod error_lab;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod pessimism;
pub mod rng;
pub mod table;
pub mod verify;

pub use error::{Error, Result};
