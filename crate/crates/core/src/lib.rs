//! Turing machine → fixed-queue Post machine → constant bit-size hardmax
//! transformer, with direct interpreters for all three and a differential
//! harness that checks they agree step for step.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod machine;
pub mod pm2tf;
pub mod runtime;
pub mod sparse;
pub mod tm2pm;

pub use error::{Error, Result};
