//! Structured driving policies taught from demonstrations and natural-language
//! instructions.

pub mod graph;
pub mod pgdl;
pub mod restructure;
pub mod session;
pub mod policy;
pub mod sim;
pub mod trainer;
