//! Quantifier-free formulas over expressions: set predicates and the negated
//! certificate conditions handed to the solver.

use super::{EvalError, Expr, Function};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Relation {
    fn smt_op(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
            Relation::Eq | Relation::Ne => "=",
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
            Relation::Eq => "==",
            Relation::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Atom(Expr, Relation, Expr),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Not(Box<Formula>),
}

impl Formula {
    pub fn atom(lhs: Expr, rel: Relation, rhs: impl Into<Expr>) -> Formula {
        Formula::Atom(lhs, rel, rhs.into())
    }

    /// Conjunction; flattens nested conjunctions and drops `True`.
    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    /// Disjunction; flattens nested disjunctions and drops `False`.
    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Not(inner) => *inner,
            other => Formula::Not(Box::new(other)),
        }
    }

    /// Top-level conjuncts (the formula itself when it is not a conjunction).
    pub fn conjuncts(&self) -> Vec<&Formula> {
        match self {
            Formula::And(parts) => parts.iter().collect(),
            other => vec![other],
        }
    }

    /// Exact truth value at a point.
    pub fn holds(&self, x: &[f64], u: &[f64]) -> Result<bool, EvalError> {
        Ok(match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Atom(a, rel, b) => {
                let (a, b) = (a.eval(x, u)?, b.eval(x, u)?);
                match rel {
                    Relation::Lt => a < b,
                    Relation::Le => a <= b,
                    Relation::Gt => a > b,
                    Relation::Ge => a >= b,
                    Relation::Eq => a == b,
                    Relation::Ne => a != b,
                }
            }
            Formula::And(parts) => {
                for p in parts {
                    if !p.holds(x, u)? {
                        return Ok(false);
                    }
                }
                true
            }
            Formula::Or(parts) => {
                for p in parts {
                    if p.holds(x, u)? {
                        return Ok(true);
                    }
                }
                false
            }
            Formula::Not(inner) => !inner.holds(x, u)?,
        })
    }

    /// Signed robustness: positive when the formula holds with room to
    /// spare, negative when it fails. Strictness is ignored.
    pub fn robustness(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Formula::True => f64::INFINITY,
            Formula::False => f64::NEG_INFINITY,
            Formula::Atom(a, rel, b) => {
                let (a, b) = (a.eval(x, u)?, b.eval(x, u)?);
                match rel {
                    Relation::Lt | Relation::Le => b - a,
                    Relation::Gt | Relation::Ge => a - b,
                    Relation::Eq => -(a - b).abs(),
                    // an excluded point is excluded outright, whatever the tolerance
                    Relation::Ne if a == b => f64::NEG_INFINITY,
                    Relation::Ne => (a - b).abs(),
                }
            }
            Formula::And(parts) => {
                let mut acc = f64::INFINITY;
                for p in parts {
                    acc = acc.min(p.robustness(x, u)?);
                }
                acc
            }
            Formula::Or(parts) => {
                let mut acc = f64::NEG_INFINITY;
                for p in parts {
                    acc = acc.max(p.robustness(x, u)?);
                }
                acc
            }
            Formula::Not(inner) => -inner.robustness(x, u)?,
        })
    }

    /// True when the formula holds up to an absolute tolerance.
    pub fn holds_within(&self, x: &[f64], u: &[f64], tol: f64) -> Result<bool, EvalError> {
        Ok(self.robustness(x, u)? >= -tol)
    }

    pub fn functions(&self) -> Vec<Function> {
        let mut out = Vec::new();
        self.visit_exprs(&mut |e| out.extend(e.functions()));
        out.sort();
        out.dedup();
        out
    }

    pub fn visit_exprs(&self, f: &mut impl FnMut(&Expr)) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(a, _, b) => {
                f(a);
                f(b);
            }
            Formula::And(parts) | Formula::Or(parts) => {
                parts.iter().for_each(|p| p.visit_exprs(f));
            }
            Formula::Not(inner) => inner.visit_exprs(f),
        }
    }

    pub fn to_smtlib(&self) -> String {
        match self {
            Formula::True => "true".into(),
            Formula::False => "false".into(),
            Formula::Atom(a, rel, b) => {
                let atom = format!("({} {} {})", rel.smt_op(), a.to_smtlib(), b.to_smtlib());
                if *rel == Relation::Ne {
                    format!("(not {atom})")
                } else {
                    atom
                }
            }
            Formula::And(parts) => nary("and", parts),
            Formula::Or(parts) => nary("or", parts),
            Formula::Not(inner) => format!("(not {})", inner.to_smtlib()),
        }
    }

    /// Readable rendering, e.g. `x0**2 + x1**2 <= 1 && (x0 != 0 || x1 != 0)`.
    pub fn to_infix(&self) -> String {
        match self {
            Formula::True => "true".into(),
            Formula::False => "false".into(),
            Formula::Atom(a, rel, b) => format!("{a} {} {b}", rel.symbol()),
            Formula::And(parts) => join_infix(parts, " && "),
            Formula::Or(parts) => join_infix(parts, " || "),
            Formula::Not(inner) => format!("!({})", inner.to_infix()),
        }
    }
}

fn nary(op: &str, parts: &[Formula]) -> String {
    let inner: Vec<String> = parts.iter().map(Formula::to_smtlib).collect();
    format!("({op} {})", inner.join(" "))
}

fn join_infix(parts: &[Formula], sep: &str) -> String {
    parts
        .iter()
        .map(|p| match p {
            Formula::And(_) | Formula::Or(_) => format!("({})", p.to_infix()),
            _ => p.to_infix(),
        })
        .collect::<Vec<_>>()
        .join(sep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattening_and_units() {
        let a = Formula::atom(Expr::state(0), Relation::Gt, 0.0);
        let f = Formula::and([Formula::True, Formula::and([a.clone(), a.clone()])]);
        assert_eq!(f.conjuncts().len(), 2);
        assert_eq!(Formula::or([Formula::False]), Formula::False);
        assert_eq!(Formula::and([a.clone(), Formula::False]), Formula::False);
        assert_eq!(Formula::not(Formula::not(a.clone())), a);
    }

    #[test]
    fn smt_disequality() {
        let f = Formula::atom(Expr::state(1), Relation::Ne, 0.0);
        assert_eq!(f.to_smtlib(), "(not (= x1 0.0))");
    }

    #[test]
    fn robustness_signs() {
        let inside = Formula::and([
            Formula::atom(Expr::state(0), Relation::Ge, 0.0),
            Formula::atom(Expr::state(0), Relation::Le, 1.0),
        ]);
        assert_eq!(inside.robustness(&[0.25], &[]).unwrap(), 0.25);
        assert_eq!(inside.robustness(&[1.5], &[]).unwrap(), -0.5);
        assert!(inside.holds_within(&[1.0 + 1e-9], &[], 1e-6).unwrap());
        assert!(!inside.holds(&[1.0 + 1e-9], &[]).unwrap());
        assert_eq!(Formula::not(inside).robustness(&[1.5], &[]).unwrap(), 0.5);
        let away = Formula::atom(Expr::state(0), Relation::Ne, 0.0);
        assert!(!away.holds_within(&[0.0], &[], 1.0).unwrap());
        assert!(away.holds_within(&[1e-300], &[], 0.0).unwrap());
    }
}
