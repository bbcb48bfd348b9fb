//! Numerical toolkit for strongly dissipative Hénon-like planar maps.
//!
//! Most-contracted directions, derivative splitting along orbits, critical
//! regions and critical points, symbolic coding and entropy estimators,
//! Lyapunov exponents, empirical SRB measures and parameter-deletion scans.

pub mod config;
pub mod contraction;
pub mod critical;
pub mod curves;
pub mod ergodic;
pub mod error;
pub mod map;
pub mod paramscan;
pub mod splitting;
pub mod symbolic;

pub use config::SystemConfig;
pub use error::{Error, Result};
pub use map::{iterate_orbit, MapFamily, MapParams, Mat2, Point, Rect, TrappingBox};
