//! Cycle-level simulator of the monitored MCU: a minimal 16-bit micro-ISA,
//! DMA and interrupt scheduling, the composed hardware monitors with the
//! two-cycle reset semantics, the trusted measurement routine as a
//! signal-faithful script, the call wrapper, and trace recording with
//! consistency and confidentiality checks.

pub mod checks;
pub mod isa;
pub mod machine;
pub mod script;
pub mod trace;

pub use checks::{
    check_key_confidentiality, check_temporal_consistency, ConfidentialityVerdict,
    TemporalVerdict,
};
pub use isa::{assemble, AsmError, Instr, Program};
pub use machine::{
    AttestOutcome, DmaRequest, HaltCause, Machine, SimConfig, SimError, StopCondition, StopReason,
    WrapperOptions,
};
pub use script::{script_actions, script_pc, ScriptAction, ScriptMutation};
pub use trace::{
    check_reset_semantics, parse_trace_csv, replay_reset_bits, CsvRow, EventTag, MeasuredSpan,
    Trace, TraceRecord,
};
