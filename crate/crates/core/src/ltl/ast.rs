use std::fmt;

/// LTL formula over named atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LtlFormula {
    Atom(String),
    Not(Box<LtlFormula>),
    And(Box<LtlFormula>, Box<LtlFormula>),
    Or(Box<LtlFormula>, Box<LtlFormula>),
    Implies(Box<LtlFormula>, Box<LtlFormula>),
    Next(Box<LtlFormula>),
    Finally(Box<LtlFormula>),
    Globally(Box<LtlFormula>),
    Until(Box<LtlFormula>, Box<LtlFormula>),
}

impl LtlFormula {
    pub fn atom(name: &str) -> Self {
        LtlFormula::Atom(name.to_string())
    }

    pub fn negate(f: LtlFormula) -> Self {
        LtlFormula::Not(Box::new(f))
    }

    pub fn and(a: LtlFormula, b: LtlFormula) -> Self {
        LtlFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: LtlFormula, b: LtlFormula) -> Self {
        LtlFormula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: LtlFormula, b: LtlFormula) -> Self {
        LtlFormula::Implies(Box::new(a), Box::new(b))
    }

    pub fn next(f: LtlFormula) -> Self {
        LtlFormula::Next(Box::new(f))
    }

    pub fn globally(f: LtlFormula) -> Self {
        LtlFormula::Globally(Box::new(f))
    }

    pub fn until(a: LtlFormula, b: LtlFormula) -> Self {
        LtlFormula::Until(Box::new(a), Box::new(b))
    }

    /// Atom names in first-occurrence order, deduplicated.
    pub fn atoms(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            LtlFormula::Atom(name) => {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
            LtlFormula::Not(f)
            | LtlFormula::Next(f)
            | LtlFormula::Finally(f)
            | LtlFormula::Globally(f) => f.collect_atoms(out),
            LtlFormula::And(a, b)
            | LtlFormula::Or(a, b)
            | LtlFormula::Implies(a, b)
            | LtlFormula::Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            LtlFormula::Implies(..) => 0,
            LtlFormula::Or(..) => 1,
            LtlFormula::And(..) => 2,
            LtlFormula::Until(..) => 3,
            LtlFormula::Not(..)
            | LtlFormula::Next(..)
            | LtlFormula::Finally(..)
            | LtlFormula::Globally(..) => 4,
            LtlFormula::Atom(..) => 5,
        }
    }
}

fn write_child(
    f: &mut fmt::Formatter<'_>,
    child: &LtlFormula,
    parent_prec: u8,
    allow_equal: bool,
) -> fmt::Result {
    let needs_parens = if allow_equal {
        child.precedence() < parent_prec
    } else {
        child.precedence() <= parent_prec
    };
    if needs_parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for LtlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LtlFormula::Atom(name) => f.write_str(name),
            LtlFormula::Not(x) => {
                f.write_str("!")?;
                write_child(f, x, self.precedence(), true)
            }
            LtlFormula::Next(x) => {
                f.write_str("X ")?;
                write_child(f, x, self.precedence(), true)
            }
            LtlFormula::Finally(x) => {
                f.write_str("F ")?;
                write_child(f, x, self.precedence(), true)
            }
            LtlFormula::Globally(x) => {
                f.write_str("G ")?;
                write_child(f, x, self.precedence(), true)
            }
            LtlFormula::And(a, b) => {
                // Left-associative in the grammar.
                write_child(f, a, self.precedence(), true)?;
                f.write_str(" & ")?;
                write_child(f, b, self.precedence(), false)
            }
            LtlFormula::Or(a, b) => {
                write_child(f, a, self.precedence(), true)?;
                f.write_str(" | ")?;
                write_child(f, b, self.precedence(), false)
            }
            LtlFormula::Implies(a, b) => {
                // Right-associative: parenthesize a left implication.
                write_child(f, a, self.precedence(), false)?;
                f.write_str(" -> ")?;
                write_child(f, b, self.precedence(), true)
            }
            LtlFormula::Until(a, b) => {
                // Left-associative: parenthesize a right until.
                write_child(f, a, self.precedence(), true)?;
                f.write_str(" U ")?;
                write_child(f, b, self.precedence(), false)
            }
        }
    }
}

/// Renders a formula in the concrete grammar accepted by [`super::parse`].
pub fn pretty_print(f: &LtlFormula) -> String {
    f.to_string()
}
