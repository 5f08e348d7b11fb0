//! LTL formula AST, text parser, finite-trace bad-prefix evaluation, and
//! compilation of the supported safety fragment into deterministic
//! bad-prefix monitor automata.
//!
//! Every shipped security property is a safety property: any violation has a
//! finite witness. We therefore evaluate formulas over finite prefixes with
//! bad-prefix semantics: a prefix is *bad* when no infinite extension can
//! satisfy the formula. Two independent routes compute the same verdict:
//!
//! * [`eval_prefix`] — a direct semantic evaluator over the formula AST;
//! * [`to_monitor`] — a compiler to a deterministic automaton whose
//!   absorbing sink is reached exactly on bad prefixes.
//!
//! The checkable fragment is `G(psi)` where `psi` is a boolean combination
//! of atoms and `X`-guarded atoms, plus the reset-hold shape
//! `G(a -> (a U b) | G(a))`.

mod ast;
mod equiv;
mod eval;
mod monitor;
mod parse;
mod vocab;

pub use ast::{pretty_print, LtlFormula};
pub use equiv::{check_equivalence, EquivalenceReport};
pub use eval::{classify_fragment, eval_prefix, Fragment, PrefixEvaluator, PrefixCursor, Verdict};
pub use monitor::{to_monitor, BadPrefixAutomaton};
pub use parse::{parse, parse_spec_file};
pub use vocab::{AtomId, SignalValuation, VOCABULARY};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LtlError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("formula outside the supported safety fragment: {0}")]
    Unsupported(String),
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
}
