//! Deterministic desk-scale simulator for V2X collaborative driving.
//!
//! Agents sense a shared ground-truth world into bird's-eye-view feature
//! pyramids, exchange sparse features selected by a driving-request map under
//! a bandwidth budget, fuse them with per-pixel attention, and plan and
//! control from the fused perception in closed loop.

pub mod comm;
pub mod driving;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod runner;
pub mod sensing;
pub mod world;

pub use error::{Error, Result};
