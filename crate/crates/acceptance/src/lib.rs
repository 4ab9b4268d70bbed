//! End-to-end acceptance checks for `slo-autoscale`; see `tests/acceptance.rs`.
