//! Predictive replica placement for geo-distributed fog data stores, with a deterministic
//! discrete-event simulator to compare it against reference strategies.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod client;
pub mod matrix;
pub mod placement;
pub mod predictor;
pub mod scenario;
pub mod sim;
pub mod store;
pub mod topology;
pub mod trace;
