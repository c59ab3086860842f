//! Trace-driven, site-specific wireless channel simulation.
//!
//! Multipath component traces go in; per-subband MIMO channel matrices,
//! beam-sweep selections and per-snapshot link metrics come out. A small
//! deterministic ray tracer ([`rt`]) generates traces for self-contained
//! scenarios.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod channel;
pub mod trace;
pub mod beam;
pub mod rt;
pub mod link;
pub mod scenario;
