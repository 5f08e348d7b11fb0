//! Compilation of checkable formulas into deterministic bad-prefix
//! automata.
//!
//! For `G(psi)` the automaton state is the pending obligation on the next
//! valuation: the set of next valuations that keep `psi` satisfied at the
//! previous position. Reading valuation `v` in state `s` violates iff `v`
//! falls outside the obligation, or the new obligation `row(v)` is empty.
//! The reset-hold shape compiles to the classic idle/armed machine.
//!
//! Transition tables are built with a vectorized evaluator (each subformula
//! evaluates to a bitset over all next valuations at once), deliberately a
//! different evaluation style from the pointwise recursion in
//! [`super::eval`], so the two routes can cross-check each other.

use std::collections::HashMap;

use super::eval::{classify_fragment, Bitset, Fragment, Verdict};
use super::vocab::{AtomId, SignalValuation};
use super::{LtlError, LtlFormula};

/// Deterministic automaton over local valuations whose absorbing `sink`
/// state is reached exactly on bad prefixes.
#[derive(Debug, Clone)]
pub struct BadPrefixAutomaton {
    atoms: Vec<AtomId>,
    initial: usize,
    sink: usize,
    /// `delta[state * valuations + local_bits]`.
    delta: Vec<usize>,
    num_states: usize,
}

impl BadPrefixAutomaton {
    pub fn atoms(&self) -> &[AtomId] {
        &self.atoms
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn valuation_count(&self) -> usize {
        1 << self.atoms.len()
    }

    #[inline]
    pub fn step(&self, state: usize, local_bits: usize) -> usize {
        self.delta[state * self.valuation_count() + local_bits]
    }

    /// Projects a full-vocabulary valuation onto the local bit order.
    pub fn project(&self, v: &SignalValuation) -> usize {
        let mut bits = 0usize;
        for (i, atom) in self.atoms.iter().enumerate() {
            if v.get(*atom) {
                bits |= 1 << i;
            }
        }
        bits
    }

    /// Runs a trace from the initial state; the verdict mirrors
    /// [`super::eval_prefix`].
    pub fn run(&self, trace: &[SignalValuation]) -> Verdict {
        let mut state = self.initial;
        for (i, v) in trace.iter().enumerate() {
            state = self.step(state, self.project(v));
            if state == self.sink {
                return Verdict::Violated(i);
            }
        }
        Verdict::Clean
    }
}

/// Evaluates `psi` for a fixed current valuation, producing the bitset of
/// satisfying next valuations in one pass.
fn row_for(psi: &LtlFormula, atoms: &[AtomId], cur: usize, next_count: usize) -> Bitset {
    fn next_column(bit: usize, next_count: usize) -> Bitset {
        let mut set = Bitset::empty(next_count);
        for v in 0..next_count {
            if v >> bit & 1 != 0 {
                set.set(v);
            }
        }
        set
    }

    fn full(next_count: usize, value: bool) -> Bitset {
        let mut set = Bitset::empty(next_count);
        if value {
            for v in 0..next_count {
                set.set(v);
            }
        }
        set
    }

    fn complement(set: &Bitset, next_count: usize) -> Bitset {
        let mut out = Bitset::empty(next_count);
        for v in 0..next_count {
            if !set.get(v) {
                out.set(v);
            }
        }
        out
    }

    fn union(a: &Bitset, b: &Bitset) -> Bitset {
        Bitset(a.0.iter().zip(&b.0).map(|(x, y)| x | y).collect())
    }

    fn intersect(a: &Bitset, b: &Bitset) -> Bitset {
        Bitset(a.0.iter().zip(&b.0).map(|(x, y)| x & y).collect())
    }

    let bit_of = |name: &str| -> usize {
        let atom = AtomId::from_name(name).expect("validated");
        atoms.iter().position(|a| *a == atom).expect("collected")
    };

    match psi {
        LtlFormula::Atom(name) => full(next_count, cur >> bit_of(name) & 1 != 0),
        LtlFormula::Next(inner) => match inner.as_ref() {
            LtlFormula::Atom(name) => next_column(bit_of(name), next_count),
            _ => unreachable!("validated"),
        },
        LtlFormula::Not(x) => complement(&row_for(x, atoms, cur, next_count), next_count),
        LtlFormula::And(a, b) => intersect(
            &row_for(a, atoms, cur, next_count),
            &row_for(b, atoms, cur, next_count),
        ),
        LtlFormula::Or(a, b) => union(
            &row_for(a, atoms, cur, next_count),
            &row_for(b, atoms, cur, next_count),
        ),
        LtlFormula::Implies(a, b) => union(
            &complement(&row_for(a, atoms, cur, next_count), next_count),
            &row_for(b, atoms, cur, next_count),
        ),
        _ => unreachable!("validated"),
    }
}

/// Compiles a checkable formula into its bad-prefix automaton.
pub fn to_monitor(formula: &LtlFormula) -> Result<BadPrefixAutomaton, LtlError> {
    let fragment = classify_fragment(formula)?;
    match fragment {
        Fragment::Safety { psi, atoms } => {
            assert!(atoms.len() <= 12, "formula has too many atoms to compile");
            let count = 1usize << atoms.len();
            let rows: Vec<Bitset> = (0..count).map(|c| row_for(&psi, &atoms, c, count)).collect();

            // State 0 carries no pending obligation (all next valuations
            // allowed); further obligation states are interned as
            // discovered. `None` marks the sink during exploration.
            let all = {
                let mut s = Bitset::empty(count);
                for v in 0..count {
                    s.set(v);
                }
                s
            };
            let mut interned: HashMap<Vec<u64>, usize> = HashMap::new();
            let mut obligations: Vec<Bitset> = vec![all.clone()];
            interned.insert(all.0, 0);

            let mut delta_rows: Vec<Vec<Option<usize>>> = Vec::new();
            let mut cursor = 0;
            while cursor < obligations.len() {
                let pending = obligations[cursor].clone();
                let mut row_delta: Vec<Option<usize>> = vec![None; count];
                for v in 0..count {
                    if !pending.get(v) || rows[v].is_empty() {
                        continue; // violation: falls to the sink
                    }
                    let id = *interned.entry(rows[v].0.clone()).or_insert_with(|| {
                        obligations.push(rows[v].clone());
                        obligations.len() - 1
                    });
                    row_delta[v] = Some(id);
                }
                delta_rows.push(row_delta);
                cursor += 1;
            }

            let sink = obligations.len();
            let num_states = obligations.len() + 1;
            let mut delta = vec![sink; num_states * count];
            for (state, row) in delta_rows.iter().enumerate() {
                for v in 0..count {
                    delta[state * count + v] = row[v].unwrap_or(sink);
                }
            }
            // The sink row stays absorbing.
            Ok(BadPrefixAutomaton {
                atoms,
                initial: 0,
                sink,
                delta,
                num_states,
            })
        }
        Fragment::ResetHold { a, b } => {
            let atoms = if a == b { vec![a] } else { vec![a, b] };
            let a_bit = atoms.iter().position(|x| *x == a).unwrap();
            let b_bit = atoms.iter().position(|x| *x == b).unwrap();
            let count = 1usize << atoms.len();
            const IDLE: usize = 0;
            const ARMED: usize = 1;
            const SINK: usize = 2;
            let mut delta = vec![SINK; 3 * count];
            for v in 0..count {
                let av = v >> a_bit & 1 != 0;
                let bv = v >> b_bit & 1 != 0;
                delta[IDLE * count + v] = if av && !bv { ARMED } else { IDLE };
                delta[ARMED * count + v] = if bv {
                    IDLE
                } else if av {
                    ARMED
                } else {
                    SINK
                };
                delta[SINK * count + v] = SINK;
            }
            Ok(BadPrefixAutomaton {
                atoms,
                initial: IDLE,
                sink: SINK,
                delta,
                num_states: 3,
            })
        }
    }
}
