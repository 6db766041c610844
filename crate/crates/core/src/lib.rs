//! Multi-object tracking with a spherical state-space Kalman filter.
//!
//! Target directions are tracked on the unit sphere through a local
//! tangent-plane chart, fused with box-scale and LiDAR depth dynamics, and
//! associated across frames with gated two-stage assignment.

// `!(x > y)` is used on purpose to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod association;
pub mod baseline;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod lifecycle;
pub mod measurement;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod state;
pub mod tracker;
