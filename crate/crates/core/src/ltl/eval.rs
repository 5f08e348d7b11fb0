//! Finite-prefix bad-prefix evaluation for the supported safety fragment.

use super::vocab::{AtomId, SignalValuation};
use super::{LtlError, LtlFormula};

/// Verdict of a finite-trace evaluation.
///
/// `Violated(i)` means the prefix of length `i + 1` is a bad prefix: no
/// infinite extension of it satisfies the formula, and no shorter prefix is
/// already bad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Violated(usize),
}

/// The two checkable safety shapes.
#[derive(Debug, Clone)]
pub enum Fragment {
    /// `G(psi)` where `psi` is a boolean combination of atoms and
    /// `X`-guarded atoms (at most one `X` nesting level).
    Safety {
        psi: LtlFormula,
        /// Atoms of `psi` in first-occurrence order; local valuations index
        /// bits in this order.
        atoms: Vec<AtomId>,
    },
    /// `G(a -> (a U b) | G(a))` — the reset-hold shape.
    ResetHold { a: AtomId, b: AtomId },
}

impl Fragment {
    /// The formula's atoms in local bit order.
    pub fn atoms(&self) -> Vec<AtomId> {
        match self {
            Fragment::Safety { atoms, .. } => atoms.clone(),
            Fragment::ResetHold { a, b } => {
                if a == b {
                    vec![*a]
                } else {
                    vec![*a, *b]
                }
            }
        }
    }
}

fn resolve_atom(name: &str) -> Result<AtomId, LtlError> {
    AtomId::from_name(name).ok_or_else(|| LtlError::UnknownAtom(name.to_string()))
}

/// Validates that `psi` is a boolean combination of atoms and `X(atom)`.
fn validate_safety_body(psi: &LtlFormula, atoms: &mut Vec<AtomId>) -> Result<(), LtlError> {
    match psi {
        LtlFormula::Atom(name) => {
            let atom = resolve_atom(name)?;
            if !atoms.contains(&atom) {
                atoms.push(atom);
            }
            Ok(())
        }
        LtlFormula::Next(inner) => match inner.as_ref() {
            LtlFormula::Atom(name) => {
                let atom = resolve_atom(name)?;
                if !atoms.contains(&atom) {
                    atoms.push(atom);
                }
                Ok(())
            }
            _ => Err(LtlError::Unsupported(
                "X may only guard a single atom".into(),
            )),
        },
        LtlFormula::Not(x) => validate_safety_body(x, atoms),
        LtlFormula::And(a, b) | LtlFormula::Or(a, b) | LtlFormula::Implies(a, b) => {
            validate_safety_body(a, atoms)?;
            validate_safety_body(b, atoms)
        }
        LtlFormula::Finally(_) => Err(LtlError::Unsupported(
            "F lies outside the safety fragment".into(),
        )),
        LtlFormula::Globally(_) | LtlFormula::Until(..) => Err(LtlError::Unsupported(
            "nested temporal operators are not checkable".into(),
        )),
    }
}

/// Recognizes the reset-hold shape `a -> (a U b) | G(a)` (either disjunct
/// order).
fn match_reset_hold(body: &LtlFormula) -> Option<(&str, &str)> {
    let LtlFormula::Implies(lhs, rhs) = body else {
        return None;
    };
    let LtlFormula::Atom(a0) = lhs.as_ref() else {
        return None;
    };
    let LtlFormula::Or(x, y) = rhs.as_ref() else {
        return None;
    };
    let (until, glob) = match (x.as_ref(), y.as_ref()) {
        (u @ LtlFormula::Until(..), g @ LtlFormula::Globally(_)) => (u, g),
        (g @ LtlFormula::Globally(_), u @ LtlFormula::Until(..)) => (u, g),
        _ => return None,
    };
    let LtlFormula::Until(ua, ub) = until else {
        return None;
    };
    let LtlFormula::Globally(ga) = glob else {
        return None;
    };
    let (LtlFormula::Atom(ua), LtlFormula::Atom(ub), LtlFormula::Atom(ga)) =
        (ua.as_ref(), ub.as_ref(), ga.as_ref())
    else {
        return None;
    };
    if ua == a0 && ga == a0 {
        Some((a0, ub))
    } else {
        None
    }
}

/// Classifies a formula into the checkable fragment.
pub fn classify_fragment(formula: &LtlFormula) -> Result<Fragment, LtlError> {
    let LtlFormula::Globally(body) = formula else {
        return Err(LtlError::Unsupported(
            "checkable formulas have the shape G(...)".into(),
        ));
    };
    if let Some((a, b)) = match_reset_hold(body) {
        return Ok(Fragment::ResetHold {
            a: resolve_atom(a)?,
            b: resolve_atom(b)?,
        });
    }
    let mut atoms = Vec::new();
    validate_safety_body(body, &mut atoms)?;
    Ok(Fragment::Safety {
        psi: (**body).clone(),
        atoms,
    })
}

/// Evaluates `psi` pointwise under a (current, next) pair of local
/// valuations. `next` is `None` at the trace end; `x_assignment` then
/// supplies trial values for the X-guarded atoms.
fn eval_psi(
    psi: &LtlFormula,
    atoms: &[AtomId],
    cur: usize,
    next: usize,
) -> bool {
    let bit_of = |name: &str| -> usize {
        let atom = AtomId::from_name(name).expect("validated");
        atoms.iter().position(|a| *a == atom).expect("collected")
    };
    match psi {
        LtlFormula::Atom(name) => cur >> bit_of(name) & 1 != 0,
        LtlFormula::Next(inner) => match inner.as_ref() {
            LtlFormula::Atom(name) => next >> bit_of(name) & 1 != 0,
            _ => unreachable!("validated"),
        },
        LtlFormula::Not(x) => !eval_psi(x, atoms, cur, next),
        LtlFormula::And(a, b) => {
            eval_psi(a, atoms, cur, next) && eval_psi(b, atoms, cur, next)
        }
        LtlFormula::Or(a, b) => {
            eval_psi(a, atoms, cur, next) || eval_psi(b, atoms, cur, next)
        }
        LtlFormula::Implies(a, b) => {
            !eval_psi(a, atoms, cur, next) || eval_psi(b, atoms, cur, next)
        }
        _ => unreachable!("validated"),
    }
}

fn project(v: &SignalValuation, atoms: &[AtomId]) -> usize {
    let mut bits = 0usize;
    for (i, atom) in atoms.iter().enumerate() {
        if v.get(*atom) {
            bits |= 1 << i;
        }
    }
    bits
}

/// True when `psi` at a position with current valuation `cur` is false for
/// every possible next valuation (i.e. the obligation is unsatisfiable).
fn unsat_for_all_next(psi: &LtlFormula, atoms: &[AtomId], cur: usize) -> bool {
    let n = atoms.len();
    // Quantify over full next valuations; non-X atoms are simply ignored by
    // eval_psi, so this is the forall over the X-guarded atoms.
    (0..1usize << n).all(|next| !eval_psi(psi, atoms, cur, next))
}

/// Bad-prefix evaluation of a formula over a finite trace.
///
/// X obligations at the final position are deferred: the prefix is only bad
/// if no assignment to the next cycle could satisfy them.
pub fn eval_prefix(formula: &LtlFormula, trace: &[SignalValuation]) -> Result<Verdict, LtlError> {
    let fragment = classify_fragment(formula)?;
    match &fragment {
        Fragment::Safety { psi, atoms } => {
            let vals: Vec<usize> = trace.iter().map(|v| project(v, atoms)).collect();
            for i in 0..vals.len() {
                if i >= 1 && !eval_psi(psi, atoms, vals[i - 1], vals[i]) {
                    return Ok(Verdict::Violated(i));
                }
                if unsat_for_all_next(psi, atoms, vals[i]) {
                    return Ok(Verdict::Violated(i));
                }
            }
            Ok(Verdict::Clean)
        }
        Fragment::ResetHold { a, b } => {
            let av: Vec<bool> = trace.iter().map(|v| v.get(*a)).collect();
            let bv: Vec<bool> = trace.iter().map(|v| v.get(*b)).collect();
            // A prefix is bad at the first position d where the obligation
            // raised at some earlier j (a held from j, no b since) sees a
            // drop without release: !a[d] && !b[d].
            for d in 0..trace.len() {
                if av[d] || bv[d] {
                    continue;
                }
                for j in 0..d {
                    let run_holds = (j..d).all(|i| av[i]);
                    let no_release = (j..=d).all(|k| !bv[k]);
                    if av[j] && run_holds && no_release {
                        return Ok(Verdict::Violated(d));
                    }
                }
            }
            Ok(Verdict::Clean)
        }
    }
}

/// Compiled incremental form of [`eval_prefix`], used where one trace is
/// extended one cycle at a time (the exhaustive equivalence harness and the
/// random-simulation tests). Semantically identical to `eval_prefix`.
pub struct PrefixEvaluator {
    kind: CompiledKind,
    atoms: Vec<AtomId>,
}

enum CompiledKind {
    Safety {
        /// `pair_ok[cur]` is a bitset over next valuations v with
        /// `psi(cur, v)` true.
        pair_ok: Vec<Bitset>,
        /// `unsat[cur]`: psi at `cur` is false for every next valuation.
        unsat: Vec<bool>,
    },
    ResetHold { a_bit: usize, b_bit: usize },
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub(crate) struct Bitset(pub(crate) Vec<u64>);

impl Bitset {
    pub(crate) fn empty(width: usize) -> Self {
        Bitset(vec![0; width.div_ceil(64)])
    }

    pub(crate) fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub(crate) fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 != 0
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }
}

/// Cursor over a growing prefix.
#[derive(Clone)]
pub struct PrefixCursor {
    len: usize,
    violated: Option<usize>,
    prev: usize,
    /// ResetHold only: per-position (a, b) history.
    history: Vec<(bool, bool)>,
}

impl PrefixEvaluator {
    pub fn new(formula: &LtlFormula) -> Result<Self, LtlError> {
        let fragment = classify_fragment(formula)?;
        let atoms = fragment.atoms();
        let kind = match &fragment {
            Fragment::Safety { psi, atoms } => {
                let k = atoms.len();
                assert!(k <= 12, "formula has too many atoms to compile");
                let count = 1usize << k;
                let mut pair_ok = Vec::with_capacity(count);
                let mut unsat = Vec::with_capacity(count);
                for cur in 0..count {
                    let mut row = Bitset::empty(count);
                    for next in 0..count {
                        if eval_psi(psi, atoms, cur, next) {
                            row.set(next);
                        }
                    }
                    unsat.push(row.is_empty());
                    pair_ok.push(row);
                }
                CompiledKind::Safety { pair_ok, unsat }
            }
            Fragment::ResetHold { a, b } => CompiledKind::ResetHold {
                a_bit: atoms.iter().position(|x| x == a).unwrap(),
                b_bit: atoms.iter().position(|x| x == b).unwrap(),
            },
        };
        Ok(PrefixEvaluator { kind, atoms })
    }

    pub fn atoms(&self) -> &[AtomId] {
        &self.atoms
    }

    pub fn start(&self) -> PrefixCursor {
        PrefixCursor {
            len: 0,
            violated: None,
            prev: 0,
            history: Vec::new(),
        }
    }

    /// Extends the prefix with a local valuation (bits in `atoms()` order)
    /// and returns the verdict for the extended prefix.
    pub fn extend(&self, cursor: &mut PrefixCursor, local: usize) -> Verdict {
        let d = cursor.len;
        cursor.len += 1;
        if let Some(i) = cursor.violated {
            return Verdict::Violated(i);
        }
        match &self.kind {
            CompiledKind::Safety { pair_ok, unsat } => {
                let pair_falsified = d >= 1 && !pair_ok[cursor.prev].get(local);
                if pair_falsified || unsat[local] {
                    cursor.violated = Some(d);
                }
                cursor.prev = local;
            }
            CompiledKind::ResetHold { a_bit, b_bit } => {
                let a = local >> *a_bit & 1 != 0;
                let b = local >> *b_bit & 1 != 0;
                cursor.history.push((a, b));
                if !a && !b {
                    for j in 0..d {
                        let run_holds = (j..d).all(|i| cursor.history[i].0);
                        let no_release = (j..=d).all(|k| !cursor.history[k].1);
                        if cursor.history[j].0 && run_holds && no_release {
                            cursor.violated = Some(d);
                            break;
                        }
                    }
                }
            }
        }
        match cursor.violated {
            Some(i) => Verdict::Violated(i),
            None => Verdict::Clean,
        }
    }

    /// Projects a full-vocabulary valuation to the local bit order.
    pub fn project(&self, v: &SignalValuation) -> usize {
        project(v, &self.atoms)
    }

    /// Runs a whole trace through a fresh cursor.
    pub fn run(&self, trace: &[SignalValuation]) -> Verdict {
        let mut cursor = self.start();
        let mut verdict = Verdict::Clean;
        for v in trace {
            verdict = self.extend(&mut cursor, self.project(v));
            if let Verdict::Violated(_) = verdict {
                return verdict;
            }
        }
        verdict
    }
}
