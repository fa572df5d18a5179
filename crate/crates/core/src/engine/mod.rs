//! The compute core: function units, latency model, scoreboard and the
//! per-core executor.

mod exec;
pub mod fu;
mod latency;
mod stats;

pub use exec::{categories, Core, CoreOptions, Event, InstrRecord};
pub use fu::GeluLut;
pub use latency::{cycle_cost, unit_of, Cost, LatencyTable, Unit};
pub use stats::{Breakdown, Category, CoreStats};
