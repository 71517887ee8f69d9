//! Scenario generation, metrics, reward scoring, batch runs, reports and
//! charts.

pub mod batch;
pub mod metrics;
pub mod plot;
pub mod report;
pub mod reward;
pub mod scenarios;
