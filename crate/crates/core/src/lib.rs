//! TrajAware: a desk-scale VANET routing laboratory.
//!
//! Vehicles drive on synthetic city maps ([`road`]), form a communication
//! graph within radio range ([`comm`]) and relay packets hop by hop. The
//! routing agent prunes its action space ([`pruning`]), scores the remaining
//! neighbours with a GraphSAGE + cross-attention Q-network ([`policy`])
//! trained by DQN ([`dqn`]), and under partial observation routes on an
//! estimated graph built from exchanged, stale knowledge ([`obs`]) that a GRU
//! trajectory predictor brings up to date ([`traj`]). Episodes and the SPR,
//! PSPR and RR metrics live in [`sim`]; [`experiment`] wires everything into
//! leave-one-map-out runs.

pub mod comm;
pub mod config;
pub mod dqn;
pub mod error;
pub mod experiment;
pub mod geom;
pub mod nn;
pub mod obs;
pub mod policy;
pub mod pruning;
pub mod road;
pub mod sim;
pub mod traj;

pub use error::{Error, Result};
pub use geom::Point;
