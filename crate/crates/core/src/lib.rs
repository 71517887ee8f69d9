//! Cooperative maneuver planning for mixed traffic at an unsignalized
//! T-junction.
//!
//! The crate contains two cooperative planners, a closed-loop traffic
//! simulator and the batch evaluation harness used to compare them:
//!
//! * [`map`]: lane maps, routes, conflict zones, static right of way.
//! * [`environment`]: vehicle states, lane matching, worst-case routes and
//!   driver-model observations.
//! * [`driver`]: longitudinal driver model (MLP or IDM) and gap acceptance.
//! * [`prediction`]: joint multi-vehicle rollout, validity checks and the
//!   efficiency metric.
//! * [`planner_opt`]: cyclic priority-assignment search.
//! * [`planner_rollout`]: scene graph and policy-rollout planner.
//! * [`sim`]: 50 ms closed-loop simulator.
//! * [`evaluation`]: scenario generation, clipping, metrics, reward, batches.

pub mod geometry;
pub mod map;
pub mod environment;
pub mod driver;
pub mod joint;
pub mod prediction;
pub mod planner_opt;
pub mod planner_rollout;
pub mod sim;
pub mod evaluation;
