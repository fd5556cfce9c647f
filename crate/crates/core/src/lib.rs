//! Multi-domain sentiment classification with a domain-attention sLSTM
//! network and per-domain, gradient-based input modulation.
//!
//! Stage 1 jointly trains the network on sentiment and domain labels
//! ([`net`], [`lab::train`]). Stage 2 freezes it and learns one signed step
//! size per domain that moves each input embedding along the gradient of the
//! domain loss ([`modulation`]).

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod lab;
pub mod layers;
pub mod modulation;
pub mod net;
pub mod numerics;
pub mod xlstm;

pub use error::{Error, Result};
