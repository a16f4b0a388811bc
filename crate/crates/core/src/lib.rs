//! Lock placement synthesis for concurrent programs written against a
//! non-preemptive scheduler.
//!
//! The pipeline abstracts the input program, checks that every preemptive
//! behaviour is equivalent to a non-preemptive one, turns counterexamples
//! into mutual exclusion constraints, and finally solves a global lock
//! placement problem under a chosen objective.

pub mod lang;
pub mod abstraction;
pub mod automata;
pub mod inclusion;
pub mod cegen;
pub mod lockcons;
pub mod perfmodel;
pub mod pipeline;
