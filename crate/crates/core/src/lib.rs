//! Toolkit for a process calculus with bounded broadcast and collection:
//! syntax, evaluation, structural congruence, reduction, barbed
//! bisimulation, a channel type system and protocol generators.

pub mod ast;
pub mod bisim;
pub mod cli;
pub mod congruence;
pub mod eval;
pub mod parser;
pub mod protocol;
pub mod reduction;
pub mod typesys;
