//! Cooperative multi-vehicle trajectory optimization by consensus ADMM.
//!
//! Each ADMM iteration solves one DDP tracking problem per vehicle and one
//! collision-avoidance projection per timestep, then updates the duals.

pub mod admm;
pub mod ddp;
pub mod dynamics;
pub mod layout;
pub mod miqp;
pub mod projection;
pub mod qp;
pub mod scenario;
pub mod sdp;
pub mod topology;
