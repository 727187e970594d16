//! Agent-based exchange economies and the entropy of their macro-states.
//!
//! Agents meet in pairs, pool the goods they can exchange and split the pool
//! with density proportional to the product of their utilities. The
//! stationary law is `prod_i u_i(p_i)` restricted to fixed conserved totals,
//! and its normalisation `Z(P)` gives the entropy `S = log Z` of a
//! macro-state. This crate simulates such economies together with an
//! external trader, evaluates `log Z` and its conjugates in closed form or by
//! Legendre transform of the canonical free energy, and checks the ordering
//! properties of `log Z` against simulation.

pub mod axioms;
pub mod dynamics;
pub mod economy;
pub mod error;
pub mod partition;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
