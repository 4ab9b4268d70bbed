//! SLO-driven autoscaling for co-located stream-processing services.
//!
//! A scaling agent learns how each service's completion rate depends on its
//! cores and quality settings, then searches for the joint assignment that
//! maximizes mean SLO fulfillment under a shared core budget.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod domain;
pub mod env;
pub mod harness;
pub mod solver;
pub mod store;
