//! Core building blocks for the remote-attestation verification workbench:
//! the MCU memory layout and per-cycle signal model, an LTL safety engine
//! with bad-prefix monitors, the hardware monitor FSMs, an explicit-state
//! model checker, and the attestation measurement routine.

pub mod checker;
pub mod hwmod;
pub mod ltl;
pub mod model;
pub mod swatt;
