// SPDX-License-Identifier: Apache-2.0

//! Migrates recorded DL-library operator usages into single-operator
//! compiler-frontend tests, orders them by two-level diversity, runs them
//! through a pluggable executor and triages the failures.

pub mod corpus;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod partitioning;
pub mod prioritization;
pub mod simulator;
