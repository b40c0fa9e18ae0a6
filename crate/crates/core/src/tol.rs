//! Numerical tolerances shared by every module.

/// Absolute tolerance on times (seconds).
pub const TIME_EPS: f64 = 1e-9;

/// Relative tolerance on transferred volumes.
pub const VOLUME_REL: f64 = 1e-6;

/// Absolute tolerance on bandwidths (GB/s). Residual bandwidth below this is
/// treated as saturated.
pub const RATE_EPS: f64 = 1e-9;
