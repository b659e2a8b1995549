//! Command-line front end: runs, paired comparisons, parameter sweeps,
//! contract cost estimates and charts.

pub mod app;
pub mod costs;
pub mod plots;
