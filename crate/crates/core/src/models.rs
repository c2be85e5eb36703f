//! Dynamical models, closed-loop composition and a fixed-step simulator.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, ParseError, VectorExpr};
use crate::nnet::{NetError, Network};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model shape: {0}")]
    Shape(String),
    #[error("cannot parse component {index} of the vector field: {source}")]
    Parse { index: usize, source: ParseError },
    #[error("model has inputs; close the loop with a controller first")]
    NotAutonomous,
    #[error("model has no inputs, there is nothing to control")]
    Autonomous,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

impl fmt::Display for TimeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeDomain::Continuous => "CONTINUOUS",
            TimeDomain::Discrete => "DISCRETE",
        })
    }
}

impl FromStr for TimeDomain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "CONTINUOUS" => Ok(TimeDomain::Continuous),
            "DISCRETE" => Ok(TimeDomain::Discrete),
            other => Err(format!("unknown time domain `{other}`")),
        }
    }
}

/// `ẋ = f(x, u)` (continuous) or `x⁺ = f(x, u)` (discrete).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalModel {
    n_vars: usize,
    n_inputs: usize,
    field: VectorExpr,
    time: TimeDomain,
}

impl DynamicalModel {
    pub fn new(field: VectorExpr, n_vars: usize, n_inputs: usize, time: TimeDomain) -> Result<Self, ModelError> {
        if field.dim() != n_vars {
            return Err(ModelError::Shape(format!(
                "{} field components for {n_vars} state variables",
                field.dim()
            )));
        }
        for (i, c) in field.components.iter().enumerate() {
            if c.state_arity() > n_vars || c.input_arity() > n_inputs {
                return Err(ModelError::Shape(format!("component {i} references an undeclared variable")));
            }
        }
        Ok(DynamicalModel {
            n_vars,
            n_inputs,
            field,
            time,
        })
    }

    /// Parses each component; the input count is the largest `u` index + 1.
    pub fn parse<S: AsRef<str>>(system: &[S], n_vars: usize, time: TimeDomain) -> Result<Self, ModelError> {
        let components = system
            .iter()
            .enumerate()
            .map(|(index, s)| {
                Expr::parse(s.as_ref(), n_vars, usize::MAX).map_err(|source| ModelError::Parse { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n_inputs = components.iter().map(Expr::input_arity).max().unwrap_or(0);
        DynamicalModel::new(VectorExpr::new(components), n_vars, n_inputs, time)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn field(&self) -> &VectorExpr {
        &self.field
    }

    pub fn time_domain(&self) -> TimeDomain {
        self.time
    }

    pub fn is_autonomous(&self) -> bool {
        self.n_inputs == 0
    }

    pub fn is_polynomial(&self) -> bool {
        self.field.components.iter().all(Expr::is_polynomial)
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.field.eval(x, u)
    }

    /// `∂f_i/∂u_j` as expressions, indexed `[i][j]`.
    pub fn input_jacobian(&self) -> Vec<Vec<Expr>> {
        self.field
            .components
            .iter()
            .map(|c| (0..self.n_inputs).map(|j| c.differentiate_var(crate::Var::Input(j))).collect())
            .collect()
    }

    /// Substitutes `u := k(x)` given the controller expressions.
    pub fn close_with(&self, control: &[Expr]) -> Result<DynamicalModel, ModelError> {
        if self.is_autonomous() {
            return Err(ModelError::Autonomous);
        }
        if control.len() != self.n_inputs {
            return Err(ModelError::Shape(format!(
                "controller has {} outputs, model has {} inputs",
                control.len(),
                self.n_inputs
            )));
        }
        let components = self.field.components.iter().map(|c| c.substitute_inputs(control)).collect();
        DynamicalModel::new(VectorExpr::new(components), self.n_vars, 0, self.time)
    }

    pub fn close_loop(&self, controller: &Network) -> Result<ClosedLoopModel, ModelError> {
        if self.is_autonomous() {
            return Err(ModelError::Autonomous);
        }
        if controller.input_dim() != self.n_vars || controller.output_dim() != self.n_inputs {
            return Err(ModelError::Shape(format!(
                "controller maps {} -> {}, model needs {} -> {}",
                controller.input_dim(),
                controller.output_dim(),
                self.n_vars,
                self.n_inputs
            )));
        }
        let control = controller.to_state_expression()?;
        let closed = self.close_with(&control)?;
        Ok(ClosedLoopModel {
            open: self.clone(),
            control,
            closed,
        })
    }

    /// `V̇ = Σ ∂V/∂xᵢ·fᵢ` (continuous) or `ΔV = V(f(x)) − V(x)` (discrete).
    pub fn lie_expr(&self, v: &Expr) -> Result<Expr, ModelError> {
        if !self.is_autonomous() {
            return Err(ModelError::NotAutonomous);
        }
        Ok(match self.time {
            TimeDomain::Continuous => Expr::sum(
                v.gradient(self.n_vars)
                    .into_iter()
                    .zip(&self.field.components)
                    .map(|(dv, fi)| Expr::mul(dv, fi.clone())),
            ),
            TimeDomain::Discrete => Expr::sub(v.substitute_states(&self.field.components), v.clone()),
        })
    }

    /// Lie update in both interpretations: batched numbers from the network
    /// values and gradients, and one expression for the verifier.
    pub fn lie_update(
        &self,
        states: &[Vec<f64>],
        values: &[f64],
        gradients: &[Vec<f64>],
        v: &Expr,
    ) -> Result<(Vec<f64>, Expr), ModelError> {
        let expr = self.lie_expr(v)?;
        let mut out = Vec::with_capacity(states.len());
        for (s, x) in states.iter().enumerate() {
            let f = self.eval(x, &[]).map_err(|e| e.at_sample(s))?;
            out.push(match self.time {
                TimeDomain::Continuous => gradients[s].iter().zip(&f).map(|(g, fi)| g * fi).sum(),
                TimeDomain::Discrete => v.eval(&f, &[]).map_err(|e| e.at_sample(s))? - values[s],
            });
        }
        Ok((out, expr))
    }

    /// Fixed-step trajectory: RK4 for continuous models, map iteration for
    /// discrete ones. Stops early on a non-finite state.
    pub fn simulate(&self, x0: &[f64], steps: usize, dt: f64) -> Result<Trajectory, ModelError> {
        if !self.is_autonomous() {
            return Err(ModelError::NotAutonomous);
        }
        if x0.len() != self.n_vars {
            return Err(ModelError::Shape(format!("initial state has {} entries", x0.len())));
        }
        let f = |x: &[f64]| self.eval(x, &[]);
        let mut rows = vec![(0.0, x0.to_vec())];
        let mut x = x0.to_vec();
        for k in 1..=steps {
            let next = match self.time {
                TimeDomain::Discrete => f(&x),
                TimeDomain::Continuous => rk4_step(&f, &x, dt),
            };
            let next = match next {
                Ok(v) if v.iter().all(|c| c.is_finite()) => v,
                Ok(_) => {
                    return Ok(Trajectory {
                        rows,
                        aborted: Some(format!("non-finite state at step {k}")),
                    })
                }
                Err(e) => {
                    return Ok(Trajectory {
                        rows,
                        aborted: Some(format!("{e} at step {k}")),
                    })
                }
            };
            x = next;
            rows.push((k as f64 * dt, x.clone()));
        }
        Ok(Trajectory { rows, aborted: None })
    }
}

fn rk4_step(f: &impl Fn(&[f64]) -> Result<Vec<f64>, EvalError>, x: &[f64], dt: f64) -> Result<Vec<f64>, EvalError> {
    let shift = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1 = f(x)?;
    let k2 = f(&shift(&k1, dt / 2.0))?;
    let k3 = f(&shift(&k2, dt / 2.0))?;
    let k4 = f(&shift(&k3, dt))?;
    Ok((0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// A controlled model with `u := controller(x)` substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub open: DynamicalModel,
    pub control: Vec<Expr>,
    pub closed: DynamicalModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<(f64, Vec<f64>)>,
    /// Reason the simulation stopped early, if it did.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        &self.rows.last().expect("trajectory always has its initial row").1
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.rows.first().map(|r| r.1.len()).unwrap_or(0);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((0..n).map(|i| format!("x{i}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in &self.rows {
            let cells: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, NetworkShape};

    fn eq10() -> DynamicalModel {
        DynamicalModel::parse(&["x1 - x0**3", "-x0"], 2, TimeDomain::Continuous).unwrap()
    }

    fn linear_controller(w: &[f64]) -> Network {
        let shape = NetworkShape::new(2, vec![], vec![], 1, false).unwrap();
        let mut net = Network::init(shape, &[], 0).unwrap();
        net.set_layer(0, w, None).unwrap();
        net
    }

    #[test]
    fn parse_counts_inputs() {
        let m = DynamicalModel::parse(&["x1 - x0**3", "u0"], 2, TimeDomain::Continuous).unwrap();
        assert_eq!(m.n_inputs(), 1);
        assert!(!m.is_autonomous());
        assert!(DynamicalModel::parse(&["x2"], 1, TimeDomain::Continuous).is_err());
        assert!(DynamicalModel::parse(&["x0"], 2, TimeDomain::Continuous).is_err());
    }

    #[test]
    fn close_loop_substitutes_controller() {
        let m = DynamicalModel::parse(&["x1 - x0**3", "u0"], 2, TimeDomain::Continuous).unwrap();
        let cl = m.close_loop(&linear_controller(&[-1.0, -1.0])).unwrap();
        let expect = DynamicalModel::parse(&["x1 - x0**3", "-1*x0 + -1*x1"], 2, TimeDomain::Continuous).unwrap();
        for x in [[1.0, 2.0], [-0.3, 0.7], [0.0, 0.0]] {
            assert_eq!(cl.closed.eval(&x, &[]).unwrap(), expect.eval(&x, &[]).unwrap());
        }
        assert!(cl.closed.is_autonomous());
        assert!(matches!(eq10().close_loop(&linear_controller(&[1.0, 1.0])), Err(ModelError::Autonomous)));
    }

    #[test]
    fn closed_loop_matches_open_loop_with_numeric_control() {
        let m = DynamicalModel::parse(&["x1 + u0 * x0", "sin(x0) - u0"], 2, TimeDomain::Continuous).unwrap();
        let shape = NetworkShape::new(2, vec![3], vec![Activation::Tanh], 1, true).unwrap();
        let ctrl = Network::init(shape, &[], 9).unwrap();
        let cl = m.close_loop(&ctrl).unwrap();
        for x in [[1.0, 2.0], [-0.5, 0.1]] {
            let u = ctrl.forward(&x);
            let open = m.eval(&x, &u).unwrap();
            let closed = cl.closed.eval(&x, &[]).unwrap();
            for i in 0..2 {
                assert!((open[i] - closed[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lie_derivative_examples() {
        let m = eq10();
        let v = Expr::parse("x0**2 + x1**2", 2, 0).unwrap();
        let states = vec![vec![1.0, 2.0], vec![0.0, 0.5]];
        let values = vec![5.0, 0.25];
        let grads = vec![vec![2.0, 4.0], vec![0.0, 1.0]];
        let (num, sym) = m.lie_update(&states, &values, &grads, &v).unwrap();
        assert_eq!(num, vec![-2.0, 0.0]);
        assert_eq!(sym.eval(&[1.0, 2.0], &[]).unwrap(), -2.0);
        assert_eq!(sym.eval(&[0.0, 0.5], &[]).unwrap(), 0.0);
        // V̇ = -2 x0^4 identically
        for x in [[0.3, -0.8], [1.5, 0.1]] {
            let got = sym.eval(&x, &[]).unwrap();
            assert!((got + 2.0 * x[0].powi(4)).abs() < 1e-12);
        }

        let d = DynamicalModel::parse(&["0.5*x0", "0.5*x1"], 2, TimeDomain::Discrete).unwrap();
        let (num, sym) = d.lie_update(&[vec![2.0, 0.0]], &[4.0], &[vec![4.0, 0.0]], &v).unwrap();
        assert_eq!(num, vec![-3.0]);
        assert_eq!(sym.eval(&[2.0, 0.0], &[]).unwrap(), -3.0);
    }

    #[test]
    fn rk4_exponential_decay() {
        let m = DynamicalModel::parse(&["-x0"], 1, TimeDomain::Continuous).unwrap();
        let traj = m.simulate(&[1.0], 100, 0.01).unwrap();
        assert_eq!(traj.rows.len(), 101);
        assert!((traj.last()[0] - (-1.0f64).exp()).abs() < 1e-5);
        assert!((traj.rows[100].0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let m = DynamicalModel::parse(&["-x0"], 1, TimeDomain::Continuous).unwrap();
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            (m.simulate(&[1.0], steps, dt).unwrap().last()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    #[test]
    fn discrete_and_degenerate_simulation() {
        let d = DynamicalModel::parse(&["0.5*x0"], 1, TimeDomain::Discrete).unwrap();
        assert_eq!(d.simulate(&[8.0], 3, 1.0).unwrap().last(), &[1.0]);

        let zero = DynamicalModel::parse(&["0", "0"], 2, TimeDomain::Continuous).unwrap();
        let traj = zero.simulate(&[0.3, -0.2], 10, 0.1).unwrap();
        assert!(traj.rows.iter().all(|r| r.1 == vec![0.3, -0.2]));

        let blow = DynamicalModel::parse(&["x0**2"], 1, TimeDomain::Discrete).unwrap();
        let traj = blow.simulate(&[1e200], 5, 1.0).unwrap();
        assert!(traj.aborted.is_some());
        assert_eq!(traj.rows.len(), 1);
    }

    #[test]
    fn csv_header() {
        let d = DynamicalModel::parse(&["0.5*x0", "x1"], 2, TimeDomain::Discrete).unwrap();
        let mut buf = Vec::new();
        d.simulate(&[1.0, 2.0], 1, 1.0).unwrap().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x0,x1\n0,1,2\n1,0.5,2\n");
    }
}
