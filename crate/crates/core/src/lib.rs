//! Simulation and analysis of a two-site stellar interferometer that stores
//! single photons from a weak thermal source in quantum memories using a
//! binary time-bin code.

pub mod codec;
pub mod noise;
pub mod qsim;
pub mod source;
pub mod campaign;
pub mod entropy;
pub mod exec;
pub mod fisher;
pub mod planner;
