use thiserror::Error;

use super::Expr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero{}", sample_suffix(*.sample))]
    DivisionByZero { sample: Option<usize> },
    #[error("variable {name} is not bound{}", sample_suffix(*.sample))]
    Unbound { name: String, sample: Option<usize> },
    #[error("batch shapes disagree: {states} state rows, {inputs} input rows")]
    ShapeMismatch { states: usize, inputs: usize },
}

fn sample_suffix(sample: Option<usize>) -> String {
    sample.map(|i| format!(" at sample {i}")).unwrap_or_default()
}

impl EvalError {
    pub fn at_sample(self, index: usize) -> EvalError {
        match self {
            EvalError::DivisionByZero { .. } => EvalError::DivisionByZero {
                sample: Some(index),
            },
            EvalError::Unbound { name, .. } => EvalError::Unbound {
                name,
                sample: Some(index),
            },
            other => other,
        }
    }
}

impl Expr {
    /// Evaluates at one point.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::State(i) => *x.get(*i).ok_or_else(|| EvalError::Unbound {
                name: format!("x{i}"),
                sample: None,
            })?,
            Expr::Input(i) => *u.get(*i).ok_or_else(|| EvalError::Unbound {
                name: format!("u{i}"),
                sample: None,
            })?,
            Expr::Neg(a) => -a.eval(x, u)?,
            Expr::Add(a, b) => a.eval(x, u)? + b.eval(x, u)?,
            Expr::Sub(a, b) => a.eval(x, u)? - b.eval(x, u)?,
            Expr::Mul(a, b) => a.eval(x, u)? * b.eval(x, u)?,
            Expr::Div(a, b) => {
                let num = a.eval(x, u)?;
                let den = b.eval(x, u)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero { sample: None });
                }
                num / den
            }
            Expr::Pow(a, n) => a.eval(x, u)?.powi(*n as i32),
            Expr::Call(f, a) => f.apply(a.eval(x, u)?),
        })
    }

    /// Evaluates row by row. `inputs` may be empty when the expression has
    /// no input variables.
    pub fn eval_batch(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
        if !inputs.is_empty() && inputs.len() != states.len() {
            return Err(EvalError::ShapeMismatch {
                states: states.len(),
                inputs: inputs.len(),
            });
        }
        states
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let u = inputs.get(i).map(Vec::as_slice).unwrap_or(&[]);
                self.eval(x, u).map_err(|e| e.at_sample(i))
            })
            .collect()
    }
}
