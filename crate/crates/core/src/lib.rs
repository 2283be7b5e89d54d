//! Visibility-aware cooperative target tracking for drone swarms.
//!
//! The crate is organised along the planning pipeline: a voxel [`worldmap`],
//! spherical visibility fields ([`ssdf`]), differentiable tracking
//! [`costs`], target [`prediction`], a kinodynamic front-end [`search`],
//! polynomial trajectories ([`minco`]), the back-end [`planner`], and a
//! deterministic multi-agent simulator ([`sim`]).

pub mod costs;
pub mod gradcheck;
pub mod minco;
pub mod planner;
pub mod prediction;
pub mod search;
pub mod sim;
pub mod ssdf;
pub mod worldmap;
