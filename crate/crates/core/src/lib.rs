//! Periodic I/O scheduling for applications that share a bandwidth-limited
//! I/O system.
//!
//! A [`Scenario`] lists applications that each alternate a compute phase and
//! an I/O transfer. [`persched`] searches for a periodic [`Pattern`] that
//! keeps the machine busy while bounding every application's slowdown, and
//! [`sim`] unrolls patterns into finite traces or simulates the unscheduled
//! fair-share baseline.

pub mod catalog;
pub mod engine;
pub mod error;
pub mod model;
pub mod pattern;
pub mod profile;
pub mod report;
pub mod sim;
pub mod tol;

pub use engine::{
    build_pattern, build_pattern_naive, insert_first_instance, insert_in_schedule, persched, sweep_report,
    EngineConfig, Objective, Schedule, SweepRow, TieBreak,
};
pub use error::{Error, Result};
pub use model::{upper_bound_syseff, ApplicationSpec, DerivedApp, Platform, Scenario};
pub use pattern::{InstanceSchedule, Pattern, ScheduleMetrics, Violation};
pub use profile::{CappedPrefix, CyclicWindow, Segment, StepProfile};
pub use sim::{actual_efficiency, fair_share_baseline, unroll, Trace};
