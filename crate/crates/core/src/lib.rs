//! Routing that follows how drivers actually travel.
//!
//! Map-matched trajectories are clustered into regions of homogeneous road
//! type. Regions are joined by trajectory-backed T-edges, whose driving
//! preference is learned from the observed paths, and by topological B-edges,
//! which receive preferences transferred from similar T-edges. Queries are
//! answered by a greedy search over this region graph, stitched back onto the
//! road network.
//!
//! The usual flow is [`ingest`] → [`model::build_model`] →
//! [`model::Model::transfer`] → [`router::Router`], with [`eval`] scoring the
//! result against held-out trajectories.

pub mod apply_pref;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod netmodel;
pub mod preference;
pub mod region_graph;
pub mod router;
pub mod search;
pub mod transfer;
