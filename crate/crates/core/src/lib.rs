//! Distributionally robust staffing of hospital units and float pools.
//!
//! Demand is known only through its first moments and support; nurse
//! attendance depends on how many are scheduled. The solvers pick staffing
//! levels minimising hiring cost plus the worst-case expected cost of
//! covering shortfalls with pool reassignments and temporary nurses.

pub mod backend;
pub mod error;
pub mod model;
pub mod second_stage;
pub mod ambiguity;
pub mod adversary;
pub mod reformulation;
pub mod drns;
pub mod pool_design;
pub mod evaluate;

pub use error::{Error, Result};
