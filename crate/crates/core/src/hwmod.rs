//! The hardware monitors as deterministic Mealy machines over the abstract
//! cycle alphabet, and their OR-composition.
//!
//! Each monitor watches the per-cycle bus signals and asserts its one-bit
//! reset output when a security rule is broken. Outputs follow the shared
//! convention: the output is 1 on any transition entering the Reset state
//! and remains 1 while the machine is in it, including the release cycle
//! (program counter back at the reset vector) whose transition leaves the
//! state. A step's output is therefore "source or target is Reset" unless
//! overridden by a mutation.
//!
//! Machines are plain transition tables — ordered guarded edges plus an
//! `otherwise` default per state — so the checker can enumerate, audit and
//! mutate them.

use crate::model::{
    abstract_signals, AbstractSymbol, CycleSignals, MemoryLayout, PcClass, RegionClass,
};
use thiserror::Error;

/// Identifies the five monitor machines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MonitorKind {
    KeyAc,
    Atomicity,
    ExclusiveStack,
    DmaProtect,
    AuthCtr,
}

impl MonitorKind {
    pub fn name(self) -> &'static str {
        match self {
            MonitorKind::KeyAc => "keyac",
            MonitorKind::Atomicity => "atomicity",
            MonitorKind::ExclusiveStack => "stack",
            MonitorKind::DmaProtect => "dma",
            MonitorKind::AuthCtr => "authctr",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "keyac" | "key_ac" => Some(MonitorKind::KeyAc),
            "atomicity" => Some(MonitorKind::Atomicity),
            "stack" | "exclusivestack" | "exclusive_stack" => Some(MonitorKind::ExclusiveStack),
            "dma" | "dmaprotect" | "dma_protect" => Some(MonitorKind::DmaProtect),
            "authctr" | "auth_ctr" => Some(MonitorKind::AuthCtr),
        _ => None,
        }
    }
}

/// Atomic symbol test used in transition guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolTest {
    PcInCr,
    PcIsCrMin,
    PcIsCrMid,
    PcIsCrMax,
    PcIsZero,
    DaddrIn(RegionClass),
    DmaAddrIn(RegionClass),
    Irq,
    REn,
    WEn,
    DmaEn,
}

impl SymbolTest {
    pub fn eval(self, sym: &AbstractSymbol) -> bool {
        match self {
            SymbolTest::PcInCr => sym.pc.in_cr(),
            SymbolTest::PcIsCrMin => sym.pc == PcClass::CrMin,
            SymbolTest::PcIsCrMid => sym.pc == PcClass::CrMid,
            SymbolTest::PcIsCrMax => sym.pc == PcClass::CrMax,
            SymbolTest::PcIsZero => sym.pc == PcClass::Zero,
            SymbolTest::DaddrIn(r) => sym.daddr == r,
            SymbolTest::DmaAddrIn(r) => sym.dmaaddr == r,
            SymbolTest::Irq => sym.irq,
            SymbolTest::REn => sym.r_en,
            SymbolTest::WEn => sym.w_en,
            SymbolTest::DmaEn => sym.dma_en,
        }
    }
}

/// A possibly-negated symbol test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lit {
    pub test: SymbolTest,
    pub positive: bool,
}

impl Lit {
    pub fn pos(test: SymbolTest) -> Self {
        Lit { test, positive: true }
    }

    pub fn neg(test: SymbolTest) -> Self {
        Lit { test, positive: false }
    }

    pub fn eval(&self, sym: &AbstractSymbol) -> bool {
        self.test.eval(sym) == self.positive
    }
}

/// Disjunction of conjunctive clauses over symbol tests.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Guard {
    pub clauses: Vec<Vec<Lit>>,
}

impl Guard {
    pub fn clause(lits: Vec<Lit>) -> Self {
        Guard { clauses: vec![lits] }
    }

    pub fn eval(&self, sym: &AbstractSymbol) -> bool {
        self.clauses
            .iter()
            .any(|clause| clause.iter().all(|lit| lit.eval(sym)))
    }
}

/// One guarded edge.
#[derive(Debug, Clone)]
pub struct Edge {
    pub guard: Guard,
    pub target: usize,
}

/// Outgoing edges of a state: guards are tried in order, `otherwise` takes
/// the rest. Guards of the shipped machines are pairwise disjoint, which
/// the test suite audits exhaustively.
#[derive(Debug, Clone)]
pub struct StateRules {
    pub edges: Vec<Edge>,
    pub otherwise: usize,
}

/// A deterministic Mealy monitor over the abstract alphabet.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub kind: MonitorKind,
    state_names: Vec<&'static str>,
    initial: usize,
    reset_state: usize,
    rules: Vec<StateRules>,
    /// Per-source-state output override installed by mutations.
    output_override: Vec<Option<bool>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HwModError {
    #[error("monitor {0} requires a layout with a CTR region")]
    CtrMissing(&'static str),
}

impl Monitor {
    pub fn state_names(&self) -> &[&'static str] {
        &self.state_names
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    pub fn reset_state(&self) -> usize {
        self.reset_state
    }

    pub fn state_id(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| *n == name)
    }

    pub fn rules(&self) -> &[StateRules] {
        &self.rules
    }

    pub fn rules_mut(&mut self) -> &mut [StateRules] {
        &mut self.rules
    }

    pub fn output_override_mut(&mut self) -> &mut [Option<bool>] {
        &mut self.output_override
    }

    /// One abstract step: returns the successor state and the reset output.
    pub fn step_symbol(&self, state: usize, sym: &AbstractSymbol) -> (usize, bool) {
        let rules = &self.rules[state];
        let target = rules
            .edges
            .iter()
            .find(|e| e.guard.eval(sym))
            .map(|e| e.target)
            .unwrap_or(rules.otherwise);
        let output = match self.output_override[state] {
            Some(forced) => forced,
            None => state == self.reset_state || target == self.reset_state,
        };
        (target, output)
    }

    /// One concrete step per the spec'd signal interface.
    pub fn step_signals(
        &self,
        state: usize,
        signals: &CycleSignals,
        layout: &MemoryLayout,
    ) -> (usize, bool) {
        self.step_symbol(state, &abstract_signals(signals, layout))
    }

    /// The Run->Reset guard of a two-state machine (panics on atomicity,
    /// which has per-state rules).
    pub fn trigger_guard(&self) -> &Guard {
        assert_eq!(self.num_states(), 2, "trigger_guard needs a two-state machine");
        &self.rules[self.initial].edges[0].guard
    }

    /// Key access control: code outside CR reading key ROM forces a reset.
    pub fn key_ac() -> Monitor {
        two_state(
            MonitorKind::KeyAc,
            Guard {
                clauses: vec![vec![
                    Lit::neg(SymbolTest::PcInCr),
                    Lit::pos(SymbolTest::REn),
                    Lit::pos(SymbolTest::DaddrIn(RegionClass::Kr)),
                ]],
            },
        )
    }

    /// Atomicity and controlled invocation: the measured code may only be
    /// entered at its first instruction, left from its last, and never
    /// interrupted.
    pub fn atomicity() -> Monitor {
        let names = vec!["notCR", "fstCR", "midCR", "lastCR", "Reset"];
        let not_cr = 0;
        let fst = 1;
        let mid = 2;
        let last = 3;
        let reset = 4;
        let not_irq = Lit::neg(SymbolTest::Irq);
        let rules = vec![
            // notCR
            StateRules {
                edges: vec![
                    Edge {
                        guard: Guard::clause(vec![Lit::neg(SymbolTest::PcInCr)]),
                        target: not_cr,
                    },
                    Edge {
                        guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsCrMin), not_irq]),
                        target: fst,
                    },
                ],
                otherwise: reset,
            },
            // fstCR
            StateRules {
                edges: vec![
                    Edge {
                        guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsCrMin), not_irq]),
                        target: fst,
                    },
                    Edge {
                        guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsCrMid), not_irq]),
                        target: mid,
                    },
                ],
                otherwise: reset,
            },
            // midCR
            StateRules {
                edges: vec![
                    Edge {
                        guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsCrMid), not_irq]),
                        target: mid,
                    },
                    Edge {
                        guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsCrMax), not_irq]),
                        target: last,
                    },
                ],
                otherwise: reset,
            },
            // lastCR
            StateRules {
                edges: vec![
                    Edge {
                        guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsCrMax), not_irq]),
                        target: last,
                    },
                    Edge {
                        guard: Guard::clause(vec![Lit::neg(SymbolTest::PcInCr), not_irq]),
                        target: not_cr,
                    },
                ],
                otherwise: reset,
            },
            // Reset
            StateRules {
                edges: vec![Edge {
                    guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsZero)]),
                    target: not_cr,
                }],
                otherwise: reset,
            },
        ];
        Monitor {
            kind: MonitorKind::Atomicity,
            state_names: names,
            initial: not_cr,
            reset_state: reset,
            output_override: vec![None; 5],
            rules,
        }
    }

    /// Exclusive stack: only measured code touches XS, and measured code
    /// writes nowhere but XS and MR (plus CTR in the authenticated variant).
    pub fn exclusive_stack(auth: bool) -> Monitor {
        let mut write_clause = vec![
            Lit::pos(SymbolTest::PcInCr),
            Lit::pos(SymbolTest::WEn),
            Lit::neg(SymbolTest::DaddrIn(RegionClass::Xs)),
            Lit::neg(SymbolTest::DaddrIn(RegionClass::Mr)),
        ];
        if auth {
            write_clause.push(Lit::neg(SymbolTest::DaddrIn(RegionClass::Ctr)));
        }
        two_state(
            MonitorKind::ExclusiveStack,
            Guard {
                clauses: vec![
                    vec![
                        Lit::neg(SymbolTest::PcInCr),
                        Lit::pos(SymbolTest::REn),
                        Lit::pos(SymbolTest::DaddrIn(RegionClass::Xs)),
                    ],
                    vec![
                        Lit::neg(SymbolTest::PcInCr),
                        Lit::pos(SymbolTest::WEn),
                        Lit::pos(SymbolTest::DaddrIn(RegionClass::Xs)),
                    ],
                    write_clause,
                ],
            },
        )
    }

    /// DMA protection: DMA may not touch key ROM or the exclusive stack and
    /// must stay off while measured code runs.
    pub fn dma_protect() -> Monitor {
        two_state(
            MonitorKind::DmaProtect,
            Guard {
                clauses: vec![
                    vec![
                        Lit::pos(SymbolTest::DmaEn),
                        Lit::pos(SymbolTest::DmaAddrIn(RegionClass::Kr)),
                    ],
                    vec![
                        Lit::pos(SymbolTest::DmaEn),
                        Lit::pos(SymbolTest::DmaAddrIn(RegionClass::Xs)),
                    ],
                    vec![Lit::pos(SymbolTest::PcInCr), Lit::pos(SymbolTest::DmaEn)],
                ],
            },
        )
    }

    /// Counter protection (authenticated variant): only measured code may
    /// write the persistent counter, and DMA may not touch it at all.
    pub fn auth_ctr() -> Monitor {
        two_state(
            MonitorKind::AuthCtr,
            Guard {
                clauses: vec![
                    vec![
                        Lit::neg(SymbolTest::PcInCr),
                        Lit::pos(SymbolTest::WEn),
                        Lit::pos(SymbolTest::DaddrIn(RegionClass::Ctr)),
                    ],
                    vec![
                        Lit::pos(SymbolTest::DmaEn),
                        Lit::pos(SymbolTest::DmaAddrIn(RegionClass::Ctr)),
                    ],
                ],
            },
        )
    }
}

fn two_state(kind: MonitorKind, trigger: Guard) -> Monitor {
    let run = 0;
    let reset = 1;
    Monitor {
        kind,
        state_names: vec!["Run", "Reset"],
        initial: run,
        reset_state: reset,
        rules: vec![
            StateRules {
                edges: vec![Edge { guard: trigger, target: reset }],
                otherwise: run,
            },
            StateRules {
                edges: vec![Edge {
                    guard: Guard::clause(vec![Lit::pos(SymbolTest::PcIsZero)]),
                    target: run,
                }],
                otherwise: reset,
            },
        ],
        output_override: vec![None; 2],
    }
}

/// The composed hardware module: every enabled monitor stepped on the same
/// signals, reset output the OR of member outputs.
#[derive(Debug, Clone)]
pub struct Composed {
    members: Vec<Monitor>,
}

/// Runtime state of a composition: one state per member.
pub type ComposedState = Vec<usize>;

/// The reset attribution of one step: which members fired, with the clause
/// index for two-state machines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FiredInfo {
    pub members: Vec<(MonitorKind, Option<usize>)>,
}

impl Composed {
    /// The standard composition: key access control, atomicity, exclusive
    /// stack and DMA protection, plus counter protection when the layout
    /// defines CTR.
    pub fn standard(layout: &MemoryLayout) -> Composed {
        let auth = layout.has_ctr();
        let mut members = vec![
            Monitor::key_ac(),
            Monitor::atomicity(),
            Monitor::exclusive_stack(auth),
            Monitor::dma_protect(),
        ];
        if auth {
            members.push(Monitor::auth_ctr());
        }
        Composed { members }
    }

    pub fn from_members(members: Vec<Monitor>) -> Composed {
        Composed { members }
    }

    pub fn members(&self) -> &[Monitor] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Monitor] {
        &mut self.members
    }

    pub fn initial_state(&self) -> ComposedState {
        self.members.iter().map(|m| m.initial_state()).collect()
    }

    /// Steps every member on the same symbol; the composed reset is the OR
    /// of member outputs.
    pub fn step_symbol(&self, state: &mut ComposedState, sym: &AbstractSymbol) -> bool {
        let mut reset = false;
        for (member, s) in self.members.iter().zip(state.iter_mut()) {
            let (next, out) = member.step_symbol(*s, sym);
            *s = next;
            reset |= out;
        }
        reset
    }

    /// Like [`Composed::step_symbol`], also reporting which members fired
    /// and through which guard clause.
    pub fn step_symbol_attributed(
        &self,
        state: &mut ComposedState,
        sym: &AbstractSymbol,
    ) -> (bool, FiredInfo) {
        let mut reset = false;
        let mut fired = FiredInfo::default();
        for (member, s) in self.members.iter().zip(state.iter_mut()) {
            let before = *s;
            let (next, out) = member.step_symbol(before, sym);
            *s = next;
            reset |= out;
            if out && next == member.reset_state() && before != member.reset_state() {
                let clause = if member.num_states() == 2 {
                    member.rules()[before]
                        .edges
                        .first()
                        .and_then(|e| e.guard.clauses.iter().position(|c| {
                            c.iter().all(|lit| lit.eval(sym))
                        }))
                } else {
                    None
                };
                fired.members.push((member.kind, clause));
            }
        }
        (reset, fired)
    }

    pub fn step_signals(
        &self,
        state: &mut ComposedState,
        signals: &CycleSignals,
        layout: &MemoryLayout,
    ) -> bool {
        self.step_symbol(state, &abstract_signals(signals, layout))
    }
}

/// Spec-level step functions for the individual machines. State values are
/// indices into the respective machine's state table.
pub fn keyac_step(
    state: usize,
    signals: &CycleSignals,
    layout: &MemoryLayout,
) -> (usize, bool) {
    Monitor::key_ac().step_signals(state, signals, layout)
}

pub fn atomicity_step(
    state: usize,
    signals: &CycleSignals,
    layout: &MemoryLayout,
) -> (usize, bool) {
    Monitor::atomicity().step_signals(state, signals, layout)
}

pub fn stack_step(state: usize, signals: &CycleSignals, layout: &MemoryLayout) -> (usize, bool) {
    Monitor::exclusive_stack(layout.has_ctr()).step_signals(state, signals, layout)
}

pub fn dma_step(state: usize, signals: &CycleSignals, layout: &MemoryLayout) -> (usize, bool) {
    Monitor::dma_protect().step_signals(state, signals, layout)
}

pub fn authctr_step(
    state: usize,
    signals: &CycleSignals,
    layout: &MemoryLayout,
) -> Result<(usize, bool), HwModError> {
    if !layout.has_ctr() {
        return Err(HwModError::CtrMissing("authctr"));
    }
    Ok(Monitor::auth_ctr().step_signals(state, signals, layout))
}

/// Spec-level composed step.
pub fn composed_step(
    composed: &Composed,
    state: &mut ComposedState,
    signals: &CycleSignals,
    layout: &MemoryLayout,
) -> bool {
    composed.step_signals(state, signals, layout)
}
