//! Expression IR shared by the learner and the verifier.
//!
//! One tree is interpreted two ways: numerically ([`Expr::eval`],
//! [`Expr::eval_batch`], [`Expr::differentiate`]) and symbolically
//! ([`Expr::to_smtlib`]). Subtrees are reference counted so the unrolled
//! networks, their derivatives and closed-loop substitutions share structure
//! instead of copying it.

mod diff;
mod eval;
mod formula;
mod parse;
mod print;
mod smt;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub use eval::EvalError;
pub use formula::{Formula, Relation};
pub use parse::ParseError;
pub use smt::exact_decimal;

/// Elementary functions allowed in expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Sigmoid,
    Tanh,
    Softplus,
}

impl Function {
    pub const ALL: [Function; 6] = [
        Function::Sin,
        Function::Cos,
        Function::Exp,
        Function::Sigmoid,
        Function::Tanh,
        Function::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Exp => "exp",
            Function::Sigmoid => "sigmoid",
            Function::Tanh => "tanh",
            Function::Softplus => "softplus",
        }
    }

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }

    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Function::Sin => v.sin(),
            Function::Cos => v.cos(),
            Function::Exp => v.exp(),
            Function::Sigmoid => sigmoid(v),
            Function::Tanh => v.tanh(),
            Function::Softplus => softplus(v),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Arithmetic expression over state variables `x0..` and inputs `u0..`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    State(usize),
    Input(usize),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    /// Integer power; the exponent is never negative.
    Pow(Arc<Expr>, u32),
    Call(Function, Arc<Expr>),
}

/// Either kind of variable, used by differentiation and substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    State(usize),
    Input(usize),
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn state(i: usize) -> Expr {
        Expr::State(i)
    }

    pub fn input(i: usize) -> Expr {
        Expr::Input(i)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    // Folding constructors. They only fold constants and 0/1 identities.

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(v) => Expr::Const(-v),
            Expr::Neg(inner) => Arc::unwrap_or_clone(inner),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 0.0 => Expr::Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(a: Expr, exponent: u32) -> Expr {
        match (exponent, a.as_const()) {
            (0, _) => Expr::Const(1.0),
            (1, _) => a,
            (_, Some(v)) => Expr::Const(v.powi(exponent as i32)),
            _ => Expr::Pow(Arc::new(a), exponent),
        }
    }

    pub fn call(f: Function, a: Expr) -> Expr {
        match a.as_const() {
            Some(v) => Expr::Const(f.apply(v)),
            None => Expr::Call(f, Arc::new(a)),
        }
    }

    /// Left-folded sum; the empty sum is `0`.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms
            .into_iter()
            .fold(Expr::Const(0.0), Expr::add)
    }

    /// Number of nodes when the tree is fully expanded (shared subtrees are
    /// counted once per use).
    pub fn node_count(&self) -> usize {
        1 + match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => 0,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.node_count(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.node_count() + b.node_count()
            }
        }
    }

    /// Largest state index plus one (0 when no state variable occurs).
    pub fn state_arity(&self) -> usize {
        self.fold_vars(0, &mut |acc, v| match v {
            Var::State(i) => acc.max(i + 1),
            Var::Input(_) => acc,
        })
    }

    /// Largest input index plus one (0 when no input variable occurs).
    pub fn input_arity(&self) -> usize {
        self.fold_vars(0, &mut |acc, v| match v {
            Var::Input(i) => acc.max(i + 1),
            Var::State(_) => acc,
        })
    }

    pub fn contains_input(&self) -> bool {
        self.input_arity() > 0
    }

    fn fold_vars<A: Copy>(&self, acc: A, f: &mut impl FnMut(A, Var) -> A) -> A {
        match self {
            Expr::Const(_) => acc,
            Expr::State(i) => f(acc, Var::State(*i)),
            Expr::Input(i) => f(acc, Var::Input(*i)),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.fold_vars(acc, f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let acc = a.fold_vars(acc, f);
                b.fold_vars(acc, f)
            }
        }
    }

    /// Every function symbol used in the tree.
    pub fn functions(&self) -> Vec<Function> {
        let mut out = Vec::new();
        self.collect_functions(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_functions(&self, out: &mut Vec<Function>) {
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => {}
            Expr::Call(f, a) => {
                out.push(*f);
                a.collect_functions(out);
            }
            Expr::Neg(a) | Expr::Pow(a, _) => a.collect_functions(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_functions(out);
                b.collect_functions(out);
            }
        }
    }

    /// True when the tree only uses `+ - * /` and integer powers.
    pub fn is_polynomial(&self) -> bool {
        self.functions().is_empty()
    }

    /// Replaces variables by expressions. Shared subtrees are rewritten once.
    pub fn substitute(&self, f: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        let mut memo = HashMap::new();
        self.substitute_memo(f, &mut memo)
    }

    fn substitute_memo(
        &self,
        f: &dyn Fn(Var) -> Option<Expr>,
        memo: &mut HashMap<*const Expr, Expr>,
    ) -> Expr {
        let child = |a: &Arc<Expr>, memo: &mut HashMap<*const Expr, Expr>| -> Expr {
            let key = Arc::as_ptr(a);
            if let Some(done) = memo.get(&key) {
                return done.clone();
            }
            let out = a.substitute_memo(f, memo);
            memo.insert(key, out.clone());
            out
        };
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::State(i) => f(Var::State(*i)).unwrap_or(Expr::State(*i)),
            Expr::Input(i) => f(Var::Input(*i)).unwrap_or(Expr::Input(*i)),
            Expr::Neg(a) => Expr::neg(child(a, memo)),
            Expr::Add(a, b) => {
                let a = child(a, memo);
                Expr::add(a, child(b, memo))
            }
            Expr::Sub(a, b) => {
                let a = child(a, memo);
                Expr::sub(a, child(b, memo))
            }
            Expr::Mul(a, b) => {
                let a = child(a, memo);
                Expr::mul(a, child(b, memo))
            }
            Expr::Div(a, b) => {
                let a = child(a, memo);
                Expr::div(a, child(b, memo))
            }
            Expr::Pow(a, n) => Expr::pow(child(a, memo), *n),
            Expr::Call(func, a) => Expr::call(*func, child(a, memo)),
        }
    }

    /// Substitutes `u_j := inputs[j]`.
    pub fn substitute_inputs(&self, inputs: &[Expr]) -> Expr {
        self.substitute(&|v| match v {
            Var::Input(j) => inputs.get(j).cloned(),
            Var::State(_) => None,
        })
    }

    /// Substitutes `x_i := states[i]`.
    pub fn substitute_states(&self, states: &[Expr]) -> Expr {
        self.substitute(&|v| match v {
            Var::State(i) => states.get(i).cloned(),
            Var::Input(_) => None,
        })
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::Const(v)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print_infix())
    }
}

/// The vector field of a model: one expression per state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpr {
    pub components: Vec<Expr>,
}

impl VectorExpr {
    pub fn new(components: Vec<Expr>) -> Self {
        VectorExpr { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| c.eval(x, u)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding_identities() {
        let x = Expr::state(0);
        assert_eq!(Expr::add(Expr::Const(0.0), x.clone()), x);
        assert_eq!(Expr::mul(Expr::Const(1.0), x.clone()), x);
        assert_eq!(Expr::mul(Expr::Const(0.0), x.clone()), Expr::Const(0.0));
        assert_eq!(Expr::pow(x.clone(), 1), x);
        assert_eq!(Expr::pow(x.clone(), 0), Expr::Const(1.0));
        assert_eq!(Expr::add(Expr::Const(2.0), Expr::Const(3.0)), Expr::Const(5.0));
        assert_eq!(Expr::sub(Expr::Const(0.0), x.clone()), Expr::Neg(Arc::new(x)));
    }

    #[test]
    fn arities() {
        let e = Expr::parse("x1 + u2 * sin(x0)", 2, 3).unwrap();
        assert_eq!(e.state_arity(), 2);
        assert_eq!(e.input_arity(), 3);
        assert!(!e.is_polynomial());
        assert_eq!(e.functions(), vec![Function::Sin]);
    }

    #[test]
    fn substitution_closes_inputs() {
        let f = Expr::parse("x1 - x0**3 + u0", 2, 1).unwrap();
        let ctrl = Expr::parse("-x0 - x1", 2, 0).unwrap();
        let closed = f.substitute_inputs(&[ctrl]);
        assert!(!closed.contains_input());
        let v = closed.eval(&[1.0, 2.0], &[]).unwrap();
        assert_eq!(v, 2.0 - 1.0 + (-1.0 - 2.0));
    }
}
