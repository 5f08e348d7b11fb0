//! Library surface of the workbench CLI: command implementations and the
//! scenario catalog, reused by the acceptance suite.

pub mod commands;
pub mod scenarios;
