//! Full-batch training of certificate (and controller) networks against the
//! condition list of a certificate.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{cosine, CandidateExprs, Condition, Mask, Quantity, Region, Role, Threshold, Which, LEARN_MARGIN};
use crate::domains::DomainError;
use crate::expr::{EvalError, Expr};
use crate::models::{DynamicalModel, TimeDomain};
use crate::nnet::{NetError, Network, Tape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs with zero certificate loss.
    pub patience: usize,
    /// Weight of the `‖u‖²` term of the control loss.
    pub control_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 1000,
            patience: 10,
            control_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err("epoch budget and patience must be positive".into());
        }
        if !(self.control_penalty >= 0.0) {
            return Err("control penalty must be non-negative".into());
        }
        Ok(())
    }
}

/// Certificate network(s) and optional controller being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub primary: Network,
    pub secondary: Option<Network>,
    pub controller: Option<Network>,
}

impl Candidate {
    fn net(&self, which: Which) -> Option<&Network> {
        match which {
            Which::Primary => Some(&self.primary),
            Which::Secondary => self.secondary.as_ref(),
        }
    }

    pub fn levels(&self) -> BTreeMap<String, f64> {
        self.primary.levels().into_iter().collect()
    }

    /// Exact symbolic form of the current parameters.
    pub fn freeze(&self) -> Result<CandidateExprs, NetError> {
        let first = |n: &Network| n.to_state_expression().map(|mut v| v.remove(0));
        Ok(CandidateExprs {
            primary: Some(first(&self.primary)?),
            secondary: self.secondary.as_ref().map(first).transpose()?,
            controller: self.controller.as_ref().map(Network::to_state_expression).transpose()?,
            levels: self.levels(),
        })
    }
}

/// Training samples, keyed by region label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub regions: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Dataset {
    /// Initial data: `counts[role]` points per region, falling back to the
    /// count of XD and then to 1000. Each region gets its own seed stream.
    pub fn sample(regions: &[Region], counts: &BTreeMap<Role, usize>, seed: u64) -> Result<Dataset, DomainError> {
        let mut out = BTreeMap::new();
        for (k, r) in regions.iter().enumerate() {
            let count = counts
                .get(&r.role)
                .or_else(|| counts.get(&Role::XD))
                .copied()
                .unwrap_or(1000);
            let stream = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1);
            out.insert(r.label.clone(), r.sample(count, stream)?);
        }
        Ok(Dataset { regions: out })
    }

    pub fn get(&self, label: &str) -> &[Vec<f64>] {
        self.regions.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn push(&mut self, label: &str, points: impl IntoIterator<Item = Vec<f64>>) {
        self.regions.entry(label.to_string()).or_default().extend(points);
    }

    pub fn sizes(&self) -> BTreeMap<String, usize> {
        self.regions.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn total(&self) -> usize {
        self.regions.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub name: String,
    /// Samples passing the (relaxed) masks.
    pub samples: usize,
    /// Samples whose relu term is positive.
    pub violations: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Sum of the condition terms.
    pub certificate_loss: f64,
    pub control_loss: f64,
    pub conditions: Vec<ConditionStats>,
}

impl Evaluation {
    pub fn total(&self) -> f64 {
        self.certificate_loss + self.control_loss
    }

    pub fn violations(&self) -> usize {
        self.conditions.iter().map(|c| c.violations).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub evaluation: Evaluation,
    pub epochs: usize,
    #[serde(with = "secs")]
    pub learn_time: Duration,
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Adaptive-moment optimiser with the usual defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Per-sample forward results of one certificate network.
#[derive(Default)]
struct FnEval {
    tape: Tape,
    tape_next: Tape,
    value: f64,
    lie: f64,
    next: f64,
    g_value: f64,
    g_lie: f64,
    g_next: f64,
}

impl FnEval {
    fn reset(&mut self) {
        self.value = 0.0;
        self.lie = 0.0;
        self.next = 0.0;
        self.g_value = 0.0;
        self.g_lie = 0.0;
        self.g_next = 0.0;
    }

    fn quantity(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Value => self.value,
            Quantity::Lie => self.lie,
            Quantity::Successor => self.next,
            Quantity::Level(_) => unreachable!("level conditions carry no data"),
        }
    }

    fn add_grad(&mut self, q: Quantity, g: f64) {
        match q {
            Quantity::Value => self.g_value += g,
            Quantity::Lie => self.g_lie += g,
            Quantity::Successor => self.g_next += g,
            Quantity::Level(_) => unreachable!(),
        }
    }
}

#[derive(Default)]
struct SampleEval {
    field: Vec<f64>,
    u: Vec<f64>,
    ctrl_tape: Tape,
    jacobian: Vec<Vec<f64>>,
    fns: [Option<FnEval>; 2],
    g_field: Vec<f64>,
}

fn slot(w: Which) -> usize {
    match w {
        Which::Primary => 0,
        Which::Secondary => 1,
    }
}

/// Gradients for every network of a candidate.
struct Grads {
    primary: Vec<f64>,
    secondary: Vec<f64>,
    controller: Vec<f64>,
}

impl Grads {
    fn zeros(c: &Candidate) -> Grads {
        Grads {
            primary: vec![0.0; c.primary.num_params()],
            secondary: vec![0.0; c.secondary.as_ref().map_or(0, Network::num_params)],
            controller: vec![0.0; c.controller.as_ref().map_or(0, Network::num_params)],
        }
    }

    fn all_finite(&self) -> bool {
        self.primary.iter().chain(&self.secondary).chain(&self.controller).all(|g| g.is_finite())
    }
}

/// Per-sample buffers kept between epochs so the hot loop does not
/// allocate.
#[derive(Default)]
struct Workspace {
    regions: BTreeMap<String, Vec<SampleEval>>,
}

/// The training problem: conditions, model and the fixed per-sample data.
pub struct Objective<'a> {
    conds: &'a [Condition],
    model: &'a DynamicalModel,
    jacobian: Vec<Vec<Expr>>,
    /// Open-loop field values for autonomous models, by region label.
    fixed_fields: BTreeMap<String, Vec<Vec<f64>>>,
    control_penalty: f64,
}

impl<'a> Objective<'a> {
    pub fn new(conds: &'a [Condition], model: &'a DynamicalModel, data: &Dataset, control_penalty: f64) -> Result<Self, LearnError> {
        let mut fixed_fields = BTreeMap::new();
        if model.is_autonomous() {
            for (label, pts) in &data.regions {
                let f = pts
                    .iter()
                    .enumerate()
                    .map(|(s, x)| model.eval(x, &[]).map_err(|e| e.at_sample(s)))
                    .collect::<Result<Vec<_>, _>>()?;
                fixed_fields.insert(label.clone(), f);
            }
        }
        Ok(Objective {
            conds,
            model,
            jacobian: model.input_jacobian(),
            fixed_fields,
            control_penalty,
        })
    }

    /// Loss and condition statistics; fills `grads` when given.
    fn run(&self, cand: &Candidate, data: &Dataset, mut grads: Option<&mut Grads>, ws: &mut Workspace) -> Result<Evaluation, LearnError> {
        let levels = cand.levels();
        let discrete = self.model.time_domain() == TimeDomain::Discrete;
        let n = self.model.n_vars();
        let m = self.model.n_inputs();
        let zero_n = vec![0.0; n];
        let zero_m = vec![0.0; m];

        let mut stats: Vec<ConditionStats> = self
            .conds
            .iter()
            .map(|c| ConditionStats {
                name: c.name.clone(),
                samples: 0,
                violations: 0,
                loss: 0.0,
            })
            .collect();

        // data-free level conditions
        for (ci, c) in self.conds.iter().enumerate() {
            if let Quantity::Level(name) = c.quantity {
                let q = levels.get(name).copied().unwrap_or(0.0);
                let thr = c.threshold.resolve(&levels);
                let s = c.slack(q, thr);
                let term = (LEARN_MARGIN - s).max(0.0);
                stats[ci].samples = 1;
                stats[ci].loss = term;
                if term > 0.0 {
                    stats[ci].violations = 1;
                    if let (Some(g), Some(idx)) = (grads.as_deref_mut(), cand.primary.level_index(name)) {
                        g.primary[idx] += -dslack_dq(c);
                    }
                }
            }
        }

        let mut control_cos = 0.0;
        let mut control_effort = 0.0;
        let total_points = data.total().max(1) as f64;
        let controlled = cand.controller.is_some() && !self.model.is_autonomous();

        let mut labels: Vec<&str> = Vec::new();
        for c in self.conds.iter().filter(|c| !c.is_data_free()) {
            if !labels.contains(&c.region.label.as_str()) {
                labels.push(&c.region.label);
            }
        }

        for label in labels {
            let pts = data.get(label);
            if pts.is_empty() {
                continue;
            }
            let here: Vec<usize> = (0..self.conds.len())
                .filter(|&i| !self.conds[i].is_data_free() && self.conds[i].region.label == label)
                .collect();
            let mut needed = [false; 2];
            for &i in &here {
                needed[slot(self.conds[i].function)] = true;
                for mk in &self.conds[i].masks {
                    needed[slot(mk.function())] = true;
                }
            }

            // forward
            let samples = ws.regions.entry(label.to_string()).or_default();
            samples.truncate(pts.len());
            samples.resize_with(pts.len(), SampleEval::default);
            for (s, x) in pts.iter().enumerate() {
                let se = &mut samples[s];
                if controlled {
                    let ctrl = cand.controller.as_ref().unwrap();
                    se.u = ctrl.forward_tangent(x, &zero_n, &mut se.ctrl_tape).0;
                    se.field = self.model.eval(x, &se.u).map_err(|e| e.at_sample(s))?;
                    se.jacobian.resize_with(n, Vec::new);
                    for (row, exprs) in se.jacobian.iter_mut().zip(&self.jacobian) {
                        row.clear();
                        for e in exprs {
                            row.push(e.eval(x, &se.u).map_err(|e| e.at_sample(s))?);
                        }
                    }
                } else {
                    match self.fixed_fields.get(label) {
                        Some(f) if f.len() == pts.len() => se.field.clone_from(&f[s]),
                        _ => se.field = self.model.eval(x, &zero_m).map_err(|e| e.at_sample(s))?,
                    }
                }
                se.g_field.clear();
                se.g_field.resize(n, 0.0);
                let field = &se.field;
                for w in [Which::Primary, Which::Secondary] {
                    if !needed[slot(w)] {
                        se.fns[slot(w)] = None;
                        continue;
                    }
                    let net = cand
                        .net(w)
                        .ok_or_else(|| LearnError::Data("condition refers to a missing secondary network".into()))?;
                    let fe = se.fns[slot(w)].get_or_insert_with(FnEval::default);
                    fe.reset();
                    if discrete {
                        fe.value = net.forward_tangent(x, &zero_n, &mut fe.tape).0[0];
                        fe.next = net.forward_tangent(field, &zero_n, &mut fe.tape_next).0[0];
                        fe.lie = fe.next - fe.value;
                    } else {
                        let (v, d) = net.forward_tangent(x, field, &mut fe.tape);
                        fe.value = v[0];
                        fe.lie = d[0];
                    }
                }
            }

            // condition terms
            for &ci in &here {
                let c = &self.conds[ci];
                let thr = c.threshold.resolve(&levels);
                let level_idx = match c.threshold {
                    Threshold::Level(name) => cand.primary.level_index(name),
                    _ => None,
                };
                let active: Vec<usize> = (0..samples.len())
                    .filter(|&s| {
                        c.masks.iter().all(|mk| {
                            let v = samples[s].fns[slot(mk.function())].as_ref().unwrap().value;
                            mask_relaxed(*mk, v, &levels)
                        })
                    })
                    .collect();
                let count = active.len();
                stats[ci].samples = count;
                if count == 0 {
                    continue;
                }
                let inv = 1.0 / count as f64;
                let dq = dslack_dq(c);
                let mut total = 0.0;
                for &s in &active {
                    let fe = samples[s].fns[slot(c.function)].as_mut().unwrap();
                    let q = fe.quantity(c.quantity);
                    let slack = c.slack(q, thr);
                    let term = c.margin(&pts[s]) - slack;
                    if term > 0.0 {
                        total += term;
                        stats[ci].violations += 1;
                        if grads.is_some() {
                            // dL/dslack = −inv
                            fe.add_grad(c.quantity, -inv * dq);
                            if let (Some(g), Some(idx)) = (grads.as_deref_mut(), level_idx) {
                                g.primary[idx] += -inv * dslack_dthreshold(c);
                            }
                        }
                    }
                }
                stats[ci].loss = total * inv;
            }

            // control loss over every sample of every region
            if controlled {
                for (s, se) in samples.iter_mut().enumerate() {
                    let d = &pts[s];
                    control_cos += cosine(d, &se.field);
                    control_effort += se.u.iter().map(|v| v * v).sum::<f64>();
                    if grads.is_some() {
                        let g = cosine_grad_f(d, &se.field);
                        for i in 0..n {
                            se.g_field[i] += g[i] / total_points;
                        }
                    }
                }
            }

            // backward
            let Some(g) = grads.as_deref_mut() else { continue };
            for se in samples.iter_mut() {
                for w in [Which::Primary, Which::Secondary] {
                    let Some(fe) = se.fns[slot(w)].as_ref() else { continue };
                    if fe.g_value == 0.0 && fe.g_lie == 0.0 && fe.g_next == 0.0 {
                        continue;
                    }
                    let net = cand.net(w).unwrap();
                    let target = match w {
                        Which::Primary => &mut g.primary,
                        Which::Secondary => &mut g.secondary,
                    };
                    if discrete {
                        net.backward_tangent(&fe.tape, &[fe.g_value - fe.g_lie], &[0.0], target);
                        let (gy, _) = net.backward_tangent(&fe.tape_next, &[fe.g_next + fe.g_lie], &[0.0], target);
                        for i in 0..n {
                            se.g_field[i] += gy[i];
                        }
                    } else {
                        let (_, gxdot) = net.backward_tangent(&fe.tape, &[fe.g_value], &[fe.g_lie], target);
                        for i in 0..n {
                            se.g_field[i] += gxdot[i];
                        }
                    }
                }
                if controlled {
                    let ctrl = cand.controller.as_ref().unwrap();
                    let mut gu = vec![0.0; m];
                    for (j, gj) in gu.iter_mut().enumerate() {
                        *gj = (0..n).map(|i| se.jacobian[i][j] * se.g_field[i]).sum::<f64>()
                            + 2.0 * self.control_penalty * se.u[j] / total_points;
                    }
                    if gu.iter().any(|v| *v != 0.0) {
                        ctrl.backward_tangent(&se.ctrl_tape, &gu, &zero_m, &mut g.controller);
                    }
                }
            }
        }

        let certificate_loss: f64 = stats.iter().map(|s| s.loss).sum();
        let control_loss = if controlled {
            (control_cos + self.control_penalty * control_effort) / total_points
        } else {
            0.0
        };
        Ok(Evaluation {
            certificate_loss,
            control_loss,
            conditions: stats,
        })
    }

    pub fn evaluate(&self, cand: &Candidate, data: &Dataset) -> Result<Evaluation, LearnError> {
        self.run(cand, data, None, &mut Workspace::default())
    }

    /// Loss gradients as flat vectors for (primary, secondary, controller).
    pub fn gradients(&self, cand: &Candidate, data: &Dataset) -> Result<(Evaluation, [Vec<f64>; 3]), LearnError> {
        let mut g = Grads::zeros(cand);
        let ev = self.run(cand, data, Some(&mut g), &mut Workspace::default())?;
        Ok((ev, [g.primary, g.secondary, g.controller]))
    }
}

fn mask_relaxed(mask: Mask, value: f64, levels: &BTreeMap<String, f64>) -> bool {
    mask.holds_relaxed(value, levels)
}

/// ∂slack/∂quantity.
fn dslack_dq(c: &Condition) -> f64 {
    use crate::expr::Relation::*;
    match c.relation {
        Gt | Ge => 1.0,
        Lt | Le => -1.0,
        Eq | Ne => 0.0,
    }
}

fn dslack_dthreshold(c: &Condition) -> f64 {
    -dslack_dq(c)
}

/// ∂cos(d, f)/∂f with the same `1e−8` regulariser as the loss.
fn cosine_grad_f(d: &[f64], f: &[f64]) -> Vec<f64> {
    let dot: f64 = d.iter().zip(f).map(|(a, b)| a * b).sum();
    let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = nd * nf + 1e-8;
    f.iter()
        .zip(d)
        .map(|(fk, dk)| {
            let norm_term = if nf > 0.0 { dot * nd * fk / (nf * den * den) } else { 0.0 };
            dk / den - norm_term
        })
        .collect()
}

/// Trains in place, warm-starting from the current parameters.
pub fn train(
    cand: &mut Candidate,
    conds: &[Condition],
    data: &Dataset,
    model: &DynamicalModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LearnError> {
    let start = Instant::now();
    let objective = Objective::new(conds, model, data, cfg.control_penalty)?;
    let mut opt = [
        Adam::new(cand.primary.num_params(), cfg.learning_rate),
        Adam::new(cand.secondary.as_ref().map_or(0, Network::num_params), cfg.learning_rate),
        Adam::new(cand.controller.as_ref().map_or(0, Network::num_params), cfg.learning_rate),
    ];
    let mut ws = Workspace::default();
    let mut zero_streak = 0;
    let mut epochs = 0;
    let mut last = None;
    while epochs < cfg.max_epochs {
        let mut g = Grads::zeros(cand);
        let ev = objective.run(cand, data, Some(&mut g), &mut ws)?;
        epochs += 1;
        if !ev.total().is_finite() || !g.all_finite() {
            return Err(LearnError::NonFinite { epoch: epochs });
        }
        let done = ev.certificate_loss == 0.0;
        last = Some(ev);
        if done {
            // a satisfied candidate is left untouched
            zero_streak += 1;
            if zero_streak >= cfg.patience {
                break;
            }
            continue;
        }
        zero_streak = 0;
        opt[0].step(cand.primary.params_mut(), &g.primary);
        if let Some(s) = cand.secondary.as_mut() {
            opt[1].step(s.params_mut(), &g.secondary);
        }
        if let Some(c) = cand.controller.as_mut() {
            opt[2].step(c.params_mut(), &g.controller);
        }
    }
    // report the loss of the returned parameters
    let evaluation = if zero_streak > 0 {
        last.expect("at least one epoch ran")
    } else {
        objective.evaluate(cand, data)?
    };
    Ok(TrainOutcome {
        evaluation,
        epochs,
        learn_time: start.elapsed(),
    })
}
