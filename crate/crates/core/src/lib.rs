//! Runtime megamodel engine.
//!
//! The crate is organized around one idea: everything the engine knows about
//! a running system lives in typed models, and everything it does — observe,
//! analyze, plan, reconfigure — is an operation on those models, wired
//! together by a megamodel that holds the models, their relations, and the
//! feedback-loop processes that act on them.
//!
//! Layering, bottom-up:
//!
//! * [`model`] — typed models, metamodels, conformance, invertible deltas.
//! * [`expr`] — the predicate language used by constraints and rules.
//! * [`megamodel`] — the registry: model nodes, relation edges, executable
//!   units, process graphs, impact analysis, export.
//! * [`sim`] — the simulated managed system behind sensor/effector
//!   interfaces.
//! * [`sync`] — incremental bidirectional synchronization between the
//!   implementation-level model and per-concern views.
//! * [`adaptation`] — evaluation/change models, utility-driven planning,
//!   change propagation, adaptation analysis, rollback and escalation.
//!
//! [`testkit`] holds seeded generators and oracles shared by the test suites;
//! it is compiled into the library so integration tests can reuse it, and has
//! no place in production call paths.

pub mod adaptation;
pub mod expr;
pub mod megamodel;
pub mod model;
pub mod sim;
pub mod sync;
pub mod testkit;
