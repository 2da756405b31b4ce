//! World-space human motion editing.
//!
//! Motion is split into trajectory (where), orientation (which way) and
//! action (what). Drawn 2D trajectories are lifted into a gravity-aligned,
//! metric world frame, re-timed to the source motion's speed profile and
//! applied rigidly to the skinned body; hands estimated in camera space are
//! merged back onto the body; the result is rasterized into depth, normal,
//! semantic, hand and mask guidance maps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod body;
pub mod camera;
pub mod config;
pub mod depth;
pub mod error;
pub mod hands;
pub mod ingest;
pub mod motion;
pub mod pipeline;
pub mod render;
pub mod rotation;
pub mod synthetic;
pub mod trajectory;
pub mod world;

pub use error::{Error, Result};
