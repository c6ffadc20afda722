//! Population protocol workbench: uniform-random pairwise scheduler
//! simulation, exact reachability-based verification of stable leader
//! election, expected-hitting-time computation, and transition-path
//! analysis (bottlenecks, orderings, path surgery).

pub mod analysis;
pub mod builtins;
pub mod experiment;
pub mod model;
pub mod parse;
pub mod sim;
pub mod verify;

pub use model::{Configuration, InitExpr, ModelError, Protocol, StateId, Transition};
pub use parse::{parse_protocol, ParseError};
