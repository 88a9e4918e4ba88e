//! Attack synthesis for channel faults.
//!
//! A protocol is a set of communicating processes over bounded FIFO channels.
//! Threat gadgets (drop, replay, reorder) are composed onto chosen channels and
//! an LTL property is checked on the result; a violation is returned as a
//! lasso-shaped attack trace.

pub mod buchi;
pub mod fixtures;
pub mod gadgets;
pub mod kernel;
pub mod ltl;
pub mod modelfmt;
pub mod synthesis;
