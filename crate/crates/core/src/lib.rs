//! Counterfactual bounds for algorithmic recourse in discrete structural causal
//! models with hidden confounding.
//!
//! The crate is organised bottom-up: [`model`] holds the causal graph and the
//! observational data, [`response`] enumerates response functions, [`lp`] is a
//! small dense simplex, [`fc`] and [`pc`] compute bounds under full and partial
//! confounding, and [`recourse`] searches over actions.

pub mod error;
pub mod fc;
pub mod io;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod pc;
pub mod recourse;
pub mod response;

pub use error::{Error, Result};
pub use fc::{BoundsResult, Method};
pub use model::{Action, CausalModel, Classifier, ConfoundingMode, ConfoundingSpec, FactualInstance, ObservationalTable, Variable};
pub use response::ResponseSpace;
