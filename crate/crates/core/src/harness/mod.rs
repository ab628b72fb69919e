//! Scenario-driven simulation of a controller cluster and its switches.

pub mod scenario;
pub mod trace;
pub mod world;
pub mod check;
pub mod sweep;
pub mod explore;
pub mod metrics;

pub use scenario::{Scenario, ScenarioError};
pub use trace::{Trace, TraceEvent, TraceRecord};
pub use check::{check, Verdict};
pub use world::{run, RunOptions, World};
