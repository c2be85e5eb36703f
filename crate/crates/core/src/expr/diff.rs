use std::collections::HashMap;
use std::sync::Arc;

use super::{Expr, Function, Var};

type Memo = HashMap<*const Expr, Expr>;

fn d_child(a: &Arc<Expr>, wrt: Var, memo: &mut Memo) -> Expr {
    let key = Arc::as_ptr(a);
    if let Some(done) = memo.get(&key) {
        return done.clone();
    }
    let out = d(a, wrt, memo);
    memo.insert(key, out.clone());
    out
}

fn d(e: &Expr, wrt: Var, memo: &mut Memo) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::State(i) => Expr::Const(if wrt == Var::State(*i) { 1.0 } else { 0.0 }),
        Expr::Input(i) => Expr::Const(if wrt == Var::Input(*i) { 1.0 } else { 0.0 }),
        Expr::Neg(a) => Expr::neg(d_child(a, wrt, memo)),
        Expr::Add(a, b) => {
            let da = d_child(a, wrt, memo);
            Expr::add(da, d_child(b, wrt, memo))
        }
        Expr::Sub(a, b) => {
            let da = d_child(a, wrt, memo);
            Expr::sub(da, d_child(b, wrt, memo))
        }
        Expr::Mul(a, b) => {
            let da = d_child(a, wrt, memo);
            let db = d_child(b, wrt, memo);
            Expr::add(
                Expr::mul(da, (**b).clone()),
                Expr::mul((**a).clone(), db),
            )
        }
        Expr::Div(a, b) => {
            let da = d_child(a, wrt, memo);
            let db = d_child(b, wrt, memo);
            if db.is_zero() {
                return Expr::div(da, (**b).clone());
            }
            Expr::div(
                Expr::sub(
                    Expr::mul(da, (**b).clone()),
                    Expr::mul((**a).clone(), db),
                ),
                Expr::pow((**b).clone(), 2),
            )
        }
        Expr::Pow(a, n) => {
            let da = d_child(a, wrt, memo);
            if da.is_zero() || *n == 0 {
                return Expr::Const(0.0);
            }
            Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                da,
            )
        }
        Expr::Call(f, a) => {
            let da = d_child(a, wrt, memo);
            if da.is_zero() {
                return Expr::Const(0.0);
            }
            let inner = (**a).clone();
            let outer = match f {
                Function::Sin => Expr::call(Function::Cos, inner),
                Function::Cos => Expr::neg(Expr::call(Function::Sin, inner)),
                Function::Exp => e.clone(),
                Function::Sigmoid => {
                    Expr::mul(e.clone(), Expr::sub(Expr::Const(1.0), e.clone()))
                }
                Function::Tanh => Expr::sub(Expr::Const(1.0), Expr::pow(e.clone(), 2)),
                Function::Softplus => Expr::call(Function::Sigmoid, inner),
            };
            Expr::mul(outer, da)
        }
    }
}

impl Expr {
    /// Exact partial derivative with respect to state `x_i`.
    pub fn differentiate(&self, i: usize) -> Expr {
        self.differentiate_var(Var::State(i))
    }

    pub fn differentiate_var(&self, wrt: Var) -> Expr {
        d(self, wrt, &mut Memo::new())
    }

    /// `[∂e/∂x_0, …, ∂e/∂x_{n-1}]`.
    pub fn gradient(&self, n: usize) -> Vec<Expr> {
        (0..n).map(|i| self.differentiate(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Expr {
        Expr::parse(s, 2, 1).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(parse("x0**3").differentiate(0), parse("3*x0**2"));
        assert_eq!(parse("x1 - x0**3").differentiate(1), Expr::Const(1.0));
        assert_eq!(parse("sin(x0)").differentiate(0), parse("cos(x0)"));
    }

    #[test]
    fn input_derivatives() {
        let f = parse("x1 + 2*u0*x0");
        assert_eq!(f.differentiate_var(Var::Input(0)), parse("2*x0"));
        assert_eq!(f.differentiate(1), Expr::Const(1.0));
    }

    #[test]
    fn transcendental_rules_match_finite_differences() {
        for src in [
            "sigmoid(x0*x1)",
            "tanh(2*x0 - x1)",
            "softplus(x0)*exp(x1)",
            "cos(x0)/(2 + x1**2)",
        ] {
            let e = parse(src);
            let x = [0.3, -0.7];
            for i in 0..2 {
                let h = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (e.eval(&xp, &[0.0]).unwrap() - e.eval(&xm, &[0.0]).unwrap()) / (2.0 * h);
                let exact = e.differentiate(i).eval(&x, &[0.0]).unwrap();
                assert!((fd - exact).abs() < 1e-7, "{src} d/dx{i}: {fd} vs {exact}");
            }
        }
    }
}
