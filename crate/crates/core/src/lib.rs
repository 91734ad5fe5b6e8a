//! Trajectory-conditioned relational reasoning for pedestrian crossing-intent
//! prediction, with the training stack it needs: a small autodiff engine, a
//! synthetic traffic-scene generator and evaluation tooling.

pub mod config;
pub mod data;
pub mod model;
pub mod numeric;
pub mod train_eval;
pub mod verify;
pub mod weights;
