//! Exhaustive explicit-state model checker for the hardware monitors.
//!
//! Builds the product of a monitor composition with the bad-prefix
//! automaton of an LTL spec and explores every reachable product state
//! under the full 2000-symbol abstract input alphabet (inputs are
//! unconstrained cycle to cycle, a conservative over-approximation of real
//! MCU behavior). BFS yields shortest counterexamples; ties are broken by
//! lexicographic symbol order, so reports are reproducible.

use std::collections::HashMap;

use crate::hwmod::{Composed, Monitor, MonitorKind};
use crate::ltl::{
    eval_prefix, parse, to_monitor, AtomId, LtlError, LtlFormula, SignalValuation, Verdict,
};
use crate::model::{AbstractSymbol, LayoutViolation, MemoryLayout};
use thiserror::Error;

/// Outcome of checking one (monitor, spec) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckResult {
    Verified {
        states_explored: usize,
        transitions: usize,
    },
    Counterexample {
        trace: Vec<AbstractSymbol>,
        violated_at: usize,
    },
}

impl CheckResult {
    pub fn is_verified(&self) -> bool {
        matches!(self, CheckResult::Verified { .. })
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Ltl(#[from] LtlError),
    #[error("invalid layout: {0:?}")]
    Layout(Vec<LayoutViolation>),
    #[error("alphabet/layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid mutation: {0}")]
    BadMutation(String),
    #[error("unknown spec id {0}")]
    UnknownSpec(u32),
}

/// A structural edit applied to a monitor for negative testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub target: MonitorKind,
    pub edit: MutationEdit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MutationEdit {
    /// Remove one disjunct of the Run->Reset trigger guard.
    DropGuard { clause: usize },
    /// Point one edge (guarded or the `otherwise` default) at a new state.
    RedirectEdge {
        state: String,
        edge: EdgeRef,
        new_target: String,
    },
    /// Override the Mealy output of every transition leaving `state`.
    ForceOutput { state: String, output: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeRef {
    Guarded(usize),
    Otherwise,
}

impl std::fmt::Display for Mutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.edit {
            MutationEdit::DropGuard { clause } => {
                write!(f, "{}:drop-guard:{clause}", self.target.name())
            }
            MutationEdit::RedirectEdge { state, edge, new_target } => {
                let e = match edge {
                    EdgeRef::Guarded(i) => i.to_string(),
                    EdgeRef::Otherwise => "otherwise".to_string(),
                };
                write!(f, "{}:redirect-edge:{state}.{e}:{new_target}", self.target.name())
            }
            MutationEdit::ForceOutput { state, output } => {
                write!(f, "{}:force-output:{state}:{}", self.target.name(), *output as u8)
            }
        }
    }
}

/// Parses the CLI mutation descriptor grammar:
///
/// ```text
/// <monitor>:drop-guard:<clause>
/// <monitor>:redirect-edge:<state>.<edge|otherwise>:<target-state>
/// <monitor>:force-output:<state>:<0|1>
/// ```
pub fn parse_mutation(text: &str) -> Result<Mutation, CheckError> {
    let bad = |msg: String| CheckError::BadMutation(msg);
    let mut parts = text.splitn(3, ':');
    let kind = parts
        .next()
        .and_then(MonitorKind::from_name)
        .ok_or_else(|| bad(format!("unknown monitor in `{text}`")))?;
    let edit_kind = parts.next().ok_or_else(|| bad(format!("missing edit in `{text}`")))?;
    let rest = parts.next().ok_or_else(|| bad(format!("missing arguments in `{text}`")))?;
    let edit = match edit_kind {
        "drop-guard" => MutationEdit::DropGuard {
            clause: rest
                .parse()
                .map_err(|_| bad(format!("bad clause index `{rest}`")))?,
        },
        "redirect-edge" => {
            let (edge_spec, target) = rest
                .split_once(':')
                .ok_or_else(|| bad(format!("redirect-edge needs `<state>.<edge>:<target>`, got `{rest}`")))?;
            let (state, edge) = edge_spec
                .split_once('.')
                .ok_or_else(|| bad(format!("bad edge spec `{edge_spec}`")))?;
            let edge = if edge == "otherwise" {
                EdgeRef::Otherwise
            } else {
                EdgeRef::Guarded(
                    edge.parse()
                        .map_err(|_| bad(format!("bad edge index `{edge}`")))?,
                )
            };
            MutationEdit::RedirectEdge {
                state: state.to_string(),
                edge,
                new_target: target.to_string(),
            }
        }
        "force-output" => {
            let (state, bit) = rest
                .split_once(':')
                .ok_or_else(|| bad(format!("force-output needs `<state>:<bit>`, got `{rest}`")))?;
            let output = match bit {
                "0" => false,
                "1" => true,
                _ => return Err(bad(format!("bad output bit `{bit}`"))),
            };
            MutationEdit::ForceOutput { state: state.to_string(), output }
        }
        other => return Err(bad(format!("unknown edit `{other}`"))),
    };
    Ok(Mutation { target: kind, edit })
}

/// Applies a mutation, returning the edited machine; the original is
/// untouched.
pub fn mutate(monitor: &Monitor, mutation: &Mutation) -> Result<Monitor, CheckError> {
    if monitor.kind != mutation.target {
        return Err(CheckError::BadMutation(format!(
            "mutation targets {}, monitor is {}",
            mutation.target.name(),
            monitor.kind.name()
        )));
    }
    let mut edited = monitor.clone();
    match &mutation.edit {
        MutationEdit::DropGuard { clause } => {
            if monitor.num_states() != 2 {
                return Err(CheckError::BadMutation(
                    "drop-guard applies to two-state machines; use redirect-edge".into(),
                ));
            }
            let initial = edited.initial_state();
            let guard = &mut edited.rules_mut()[initial].edges[0].guard;
            if *clause >= guard.clauses.len() {
                return Err(CheckError::BadMutation(format!(
                    "clause {clause} out of range ({} clauses)",
                    guard.clauses.len()
                )));
            }
            guard.clauses.remove(*clause);
        }
        MutationEdit::RedirectEdge { state, edge, new_target } => {
            let sid = edited
                .state_id(state)
                .ok_or_else(|| CheckError::BadMutation(format!("no state `{state}`")))?;
            let tid = edited
                .state_id(new_target)
                .ok_or_else(|| CheckError::BadMutation(format!("no state `{new_target}`")))?;
            match edge {
                EdgeRef::Guarded(i) => {
                    let edges = &mut edited.rules_mut()[sid].edges;
                    let e = edges.get_mut(*i).ok_or_else(|| {
                        CheckError::BadMutation(format!("state `{state}` has no edge {i}"))
                    })?;
                    e.target = tid;
                }
                EdgeRef::Otherwise => edited.rules_mut()[sid].otherwise = tid,
            }
        }
        MutationEdit::ForceOutput { state, output } => {
            let sid = edited
                .state_id(state)
                .ok_or_else(|| CheckError::BadMutation(format!("no state `{state}`")))?;
            edited.output_override_mut()[sid] = Some(*output);
        }
    }
    Ok(edited)
}

/// The shipped spec table, by equation id. The authenticated variant
/// relaxes spec 7 to permit counter writes from measured code.
const SPEC_TABLE: [(u32, &str); 12] = [
    (2, "G(!pc_in_cr & r_en & d_in_kr -> reset)"),
    (3, "G(!reset & pc_in_cr & !X pc_in_cr -> pc_is_crmax | X reset)"),
    (4, "G(!reset & !pc_in_cr & X pc_in_cr -> X pc_is_crmin | X reset)"),
    (5, "G(irq & pc_in_cr -> reset)"),
    (6, "G(!pc_in_cr & (r_en | w_en) & d_in_xs -> reset)"),
    (7, "G(pc_in_cr & w_en & !d_in_xs & !d_in_mr -> reset)"),
    (8, "G(dma_en & dma_in_kr -> reset)"),
    (9, "G(dma_en & dma_in_xs -> reset)"),
    (10, "G(pc_in_cr & dma_en -> reset)"),
    (11, "G(reset -> (reset U pc_is_zero) | G(reset))"),
    (12, "G(!pc_in_cr & w_en & d_in_ctr -> reset)"),
    (13, "G(dma_en & dma_in_ctr -> reset)"),
];

const SPEC_7_AUTH: &str = "G(pc_in_cr & w_en & !d_in_xs & !d_in_mr & !d_in_ctr -> reset)";

/// Spec source text for one id.
pub fn spec_text(id: u32, auth: bool) -> Option<&'static str> {
    if id == 7 && auth {
        return Some(SPEC_7_AUTH);
    }
    SPEC_TABLE.iter().find(|(i, _)| *i == id).map(|(_, t)| *t)
}

/// Parsed spec formula for one id.
pub fn spec_formula(id: u32, auth: bool) -> Result<LtlFormula, CheckError> {
    let text = spec_text(id, auth).ok_or(CheckError::UnknownSpec(id))?;
    Ok(parse(text).expect("shipped spec texts parse"))
}

/// The spec ids checked in each variant.
pub fn spec_ids(auth: bool) -> Vec<u32> {
    if auth {
        (2..=13).collect()
    } else {
        (2..=11).collect()
    }
}

/// Which specs each individual monitor is verified against.
pub fn specs_for_monitor(kind: MonitorKind) -> &'static [u32] {
    match kind {
        MonitorKind::KeyAc => &[2, 11],
        MonitorKind::Atomicity => &[3, 4, 5, 11],
        MonitorKind::ExclusiveStack => &[6, 7, 11],
        MonitorKind::DmaProtect => &[8, 9, 10, 11],
        MonitorKind::AuthCtr => &[12, 13, 11],
    }
}

fn formula_uses_ctr(formula: &LtlFormula) -> bool {
    formula
        .atoms()
        .iter()
        .any(|a| matches!(AtomId::from_name(a), Some(AtomId::DInCtr | AtomId::DmaInCtr)))
}

/// Exhaustively checks one spec against a monitor composition.
///
/// `Verified` means no reachable (monitor x obligation) product state
/// reaches the formula's violation sink under any input symbol; otherwise
/// the shortest counterexample in BFS order is returned.
pub fn check_safety(
    composed: &Composed,
    formula: &LtlFormula,
    layout: &MemoryLayout,
) -> Result<CheckResult, CheckError> {
    layout.validate().map_err(CheckError::Layout)?;
    if formula_uses_ctr(formula) && !layout.has_ctr() {
        return Err(CheckError::LayoutMismatch(
            "formula references CTR atoms but the layout has no CTR region".into(),
        ));
    }
    let automaton = to_monitor(formula)?;

    #[derive(Clone, PartialEq, Eq, Hash)]
    struct Product {
        members: Vec<usize>,
        obligation: usize,
    }

    let initial = Product {
        members: composed.initial_state(),
        obligation: automaton.initial(),
    };
    let mut interned: HashMap<Product, usize> = HashMap::new();
    let mut states: Vec<Product> = vec![initial.clone()];
    let mut parents: Vec<Option<(usize, usize)>> = vec![None];
    interned.insert(initial, 0);

    let symbols: Vec<AbstractSymbol> = AbstractSymbol::alphabet().collect();
    let mut transitions = 0usize;
    let mut cursor = 0usize;
    while cursor < states.len() {
        let current = states[cursor].clone();
        for (sym_idx, sym) in symbols.iter().enumerate() {
            transitions += 1;
            let mut member_state = current.members.clone();
            let reset = composed.step_symbol(&mut member_state, sym);
            let valuation = SignalValuation::from_symbol(sym, reset);
            let next_obligation =
                automaton.step(current.obligation, automaton.project(&valuation));
            if next_obligation == automaton.sink() {
                // Reconstruct the path, then append the violating symbol.
                let mut trace = Vec::new();
                let mut at = cursor;
                while let Some((parent, via)) = parents[at] {
                    trace.push(symbols[via]);
                    at = parent;
                }
                trace.reverse();
                trace.push(*sym);
                let violated_at = trace.len() - 1;
                return Ok(CheckResult::Counterexample { trace, violated_at });
            }
            let next = Product {
                members: member_state,
                obligation: next_obligation,
            };
            if !interned.contains_key(&next) {
                let id = states.len();
                interned.insert(next.clone(), id);
                states.push(next);
                parents.push(Some((cursor, sym_idx)));
            }
        }
        cursor += 1;
    }
    Ok(CheckResult::Verified {
        states_explored: states.len(),
        transitions,
    })
}

/// A full verification report: one result per spec id, in id order.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub entries: Vec<(u32, CheckResult)>,
}

impl CheckReport {
    pub fn all_verified(&self) -> bool {
        self.entries.iter().all(|(_, r)| r.is_verified())
    }

    /// Machine-readable lines: `spec_id,status,states,transitions,counterexample_len`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("spec_id,status,states,transitions,counterexample_len\n");
        for (id, result) in &self.entries {
            match result {
                CheckResult::Verified { states_explored, transitions } => {
                    out.push_str(&format!("{id},verified,{states_explored},{transitions},\n"));
                }
                CheckResult::Counterexample { trace, .. } => {
                    out.push_str(&format!("{id},counterexample,,,{}\n", trace.len()));
                }
            }
        }
        out
    }
}

/// Checks all shipped specs against the composed monitor for `layout`.
pub fn check_all(layout: &MemoryLayout, auth: bool) -> Result<CheckReport, CheckError> {
    if auth && !layout.has_ctr() {
        return Err(CheckError::LayoutMismatch(
            "authenticated checking needs a layout with a CTR region".into(),
        ));
    }
    let composed = Composed::standard(layout);
    check_specs(&composed, &spec_ids(auth), layout, auth)
}

/// Checks a chosen spec subset against a given composition.
pub fn check_specs(
    composed: &Composed,
    ids: &[u32],
    layout: &MemoryLayout,
    auth: bool,
) -> Result<CheckReport, CheckError> {
    let mut entries = Vec::with_capacity(ids.len());
    for &id in ids {
        let formula = spec_formula(id, auth)?;
        entries.push((id, check_safety(composed, &formula, layout)?));
    }
    Ok(CheckReport { entries })
}

/// Replays a counterexample: feeds the symbols through fresh monitor state
/// and evaluates the formula on the resulting valuations.
pub fn replay_counterexample(
    composed: &Composed,
    formula: &LtlFormula,
    trace: &[AbstractSymbol],
) -> Result<Verdict, CheckError> {
    let mut state = composed.initial_state();
    let valuations: Vec<SignalValuation> = trace
        .iter()
        .map(|sym| {
            let reset = composed.step_symbol(&mut state, sym);
            SignalValuation::from_symbol(sym, reset)
        })
        .collect();
    Ok(eval_prefix(formula, &valuations)?)
}

/// Renders a counterexample trace, one symbol per line.
pub fn dump_counterexample(trace: &[AbstractSymbol]) -> String {
    let mut out = String::new();
    for sym in trace {
        out.push_str(&sym.encode());
        out.push('\n');
    }
    out
}

/// The canonical negative-test catalog: two or more mutations per monitor
/// together with the spec id whose check must produce a counterexample.
pub fn acceptance_mutations() -> Vec<(Mutation, u32)> {
    use MonitorKind::*;
    let m = |target, edit| Mutation { target, edit };
    vec![
        (m(KeyAc, MutationEdit::DropGuard { clause: 0 }), 2),
        (
            m(KeyAc, MutationEdit::ForceOutput { state: "Reset".into(), output: false }),
            11,
        ),
        (
            m(
                Atomicity,
                MutationEdit::RedirectEdge {
                    state: "notCR".into(),
                    edge: EdgeRef::Otherwise,
                    new_target: "notCR".into(),
                },
            ),
            4,
        ),
        (
            m(
                Atomicity,
                MutationEdit::RedirectEdge {
                    state: "midCR".into(),
                    edge: EdgeRef::Otherwise,
                    new_target: "midCR".into(),
                },
            ),
            5,
        ),
        (m(ExclusiveStack, MutationEdit::DropGuard { clause: 0 }), 6),
        (m(ExclusiveStack, MutationEdit::DropGuard { clause: 2 }), 7),
        (m(DmaProtect, MutationEdit::DropGuard { clause: 0 }), 8),
        (m(DmaProtect, MutationEdit::DropGuard { clause: 1 }), 9),
        (m(DmaProtect, MutationEdit::DropGuard { clause: 2 }), 10),
        (m(AuthCtr, MutationEdit::DropGuard { clause: 0 }), 12),
        (m(AuthCtr, MutationEdit::DropGuard { clause: 1 }), 13),
    ]
}

/// Builds the standard monitor for `kind` under a layout.
pub fn standard_monitor(kind: MonitorKind, layout: &MemoryLayout) -> Monitor {
    match kind {
        MonitorKind::KeyAc => Monitor::key_ac(),
        MonitorKind::Atomicity => Monitor::atomicity(),
        MonitorKind::ExclusiveStack => Monitor::exclusive_stack(layout.has_ctr()),
        MonitorKind::DmaProtect => Monitor::dma_protect(),
        MonitorKind::AuthCtr => Monitor::auth_ctr(),
    }
}
