//! Certificate kinds: which sets they need, which pointwise conditions they
//! impose, and the negated conditions ("constraint groups") sent to the
//! verifier.
//!
//! Every kind is described by a list of [`Condition`]s. The learner reads the
//! list to build its loss, the verifier reads the same list to build the
//! negated formulas, so the two sides can never disagree about what a
//! certificate means.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{Domain, DomainError};
use crate::expr::{Expr, Formula, Relation};
use crate::models::{DynamicalModel, ModelError, TimeDomain};

/// Training margin inside every relu.
pub const LEARN_MARGIN: f64 = 0.05;
/// Required decrease rate for the reach-type certificates.
pub const DECREASE_RATE: f64 = 1e-4;
/// Half-width of the zero-level band `|B| ≤ BAND` in verifier encodings.
pub const BAND: f64 = 1e-4;
/// Half-width of the same band on training data; much wider than [`BAND`]
/// so the band is actually populated by samples.
pub const TRAIN_BELT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertError {
    #[error("{kind} certificates need the set {role}")]
    MissingRole { kind: CertificateKind, role: Role },
    #[error("{kind} certificates do not use the set {role}")]
    UnexpectedRole { kind: CertificateKind, role: Role },
    #[error("{kind} certificates are not defined for {time} time")]
    TimeDomain { kind: CertificateKind, time: TimeDomain },
    #[error("set {role} has dimension {got}, the model has {expected} states")]
    Dimension { role: Role, got: usize, expected: usize },
    #[error("set relation violated: {0}")]
    Relation(String),
    #[error("{0}")]
    Candidate(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Set roles, named as in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    XD,
    XI,
    XU,
    XS,
    XG,
    XF,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::XD, Role::XI, Role::XU, Role::XS, Role::XG, Role::XF];

    pub fn name(self) -> &'static str {
        match self {
            Role::XD => "XD",
            Role::XI => "XI",
            Role::XU => "XU",
            Role::XS => "XS",
            Role::XG => "XG",
            Role::XF => "XF",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .ok_or_else(|| format!("unknown set role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CertificateKind {
    Lyapunov,
    Roa,
    Barrier,
    Swa,
    Rwa,
    Rswa,
    Rar,
}

impl CertificateKind {
    pub const ALL: [CertificateKind; 7] = [
        CertificateKind::Lyapunov,
        CertificateKind::Roa,
        CertificateKind::Barrier,
        CertificateKind::Swa,
        CertificateKind::Rwa,
        CertificateKind::Rswa,
        CertificateKind::Rar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CertificateKind::Lyapunov => "Lyapunov",
            CertificateKind::Roa => "ROA",
            CertificateKind::Barrier => "Barrier",
            CertificateKind::Swa => "SWA",
            CertificateKind::Rwa => "RWA",
            CertificateKind::Rswa => "RSWA",
            CertificateKind::Rar => "RAR",
        }
    }

    pub fn required_roles(self) -> &'static [Role] {
        use Role::*;
        match self {
            CertificateKind::Lyapunov => &[XD],
            CertificateKind::Roa => &[XD, XI],
            CertificateKind::Barrier | CertificateKind::Swa => &[XD, XI, XU],
            CertificateKind::Rwa => &[XD, XI, XS, XG],
            CertificateKind::Rswa => &[XD, XI, XS, XF],
            CertificateKind::Rar => &[XD, XS, XI, XG, XF],
        }
    }

    /// Certified by a pair of functions (a secondary network is trained).
    pub fn two_functions(self) -> bool {
        matches!(self, CertificateKind::Swa | CertificateKind::Rar)
    }

    pub fn supports(self, time: TimeDomain) -> bool {
        time == TimeDomain::Continuous || matches!(self, CertificateKind::Lyapunov | CertificateKind::Barrier)
    }

    /// Trainable level values owned by the primary network.
    pub fn levels(self) -> &'static [&'static str] {
        match self {
            CertificateKind::Roa => &["beta"],
            CertificateKind::Rswa => &["gamma"],
            _ => &[],
        }
    }

    /// Conditions are about an equilibrium at the origin: the primary
    /// function should vanish there, so its network carries no bias.
    pub fn primary_is_stability(self) -> bool {
        matches!(self, CertificateKind::Lyapunov | CertificateKind::Roa | CertificateKind::Swa)
    }

    /// Symbols used for the primary and secondary function in reports.
    pub fn function_names(self) -> (&'static str, Option<&'static str>) {
        match self {
            CertificateKind::Barrier => ("B", None),
            CertificateKind::Swa => ("V", Some("B")),
            CertificateKind::Rar => ("V", Some("W")),
            _ => ("V", None),
        }
    }
}

impl fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CertificateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        CertificateKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown certificate `{s}`"))
    }
}

/// Role → domain map for one problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SetAssignment {
    pub sets: BTreeMap<Role, Domain>,
}

impl SetAssignment {
    pub fn new(sets: impl IntoIterator<Item = (Role, Domain)>) -> Self {
        SetAssignment {
            sets: sets.into_iter().collect(),
        }
    }

    pub fn get(&self, role: Role) -> Option<&Domain> {
        self.sets.get(&role)
    }

    fn need(&self, kind: CertificateKind, role: Role) -> Result<&Domain, CertError> {
        self.get(role).ok_or(CertError::MissingRole { kind, role })
    }

    /// Roles must match the kind exactly and every set must live in `n`
    /// dimensions.
    pub fn validate(&self, kind: CertificateKind, n: usize) -> Result<(), CertError> {
        for role in kind.required_roles() {
            self.need(kind, *role)?;
        }
        for (role, d) in &self.sets {
            if !kind.required_roles().contains(role) {
                return Err(CertError::UnexpectedRole { kind, role: *role });
            }
            if d.dim() != n {
                return Err(CertError::Dimension {
                    role: *role,
                    got: d.dim(),
                    expected: n,
                });
            }
        }
        Ok(())
    }

    /// Sampled check of `XG ⊂ XF` and `XU ∩ XF = ∅`.
    pub fn check_relations(&self, samples: usize, seed: u64) -> Result<(), CertError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let (Some(g), Some(f)) = (self.get(Role::XG), self.get(Role::XF)) {
            if let Some(p) = g.sample_with(samples, &mut rng)?.into_iter().find(|p| !f.contains(p)) {
                return Err(CertError::Relation(format!("XG is not contained in XF (e.g. {p:?})")));
            }
        }
        if let (Some(u), Some(f)) = (self.get(Role::XU), self.get(Role::XF)) {
            let hit = u.sample_with(samples, &mut rng)?.into_iter().find(|p| f.contains(p));
            let hit = match hit {
                Some(p) => Some(p),
                None => f.sample_with(samples, &mut rng)?.into_iter().find(|p| u.contains(p)),
            };
            if let Some(p) = hit {
                return Err(CertError::Relation(format!("XU intersects XF (e.g. {p:?})")));
            }
        }
        Ok(())
    }
}

/// The set a condition ranges over, with the label its data is stored under.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: String,
    /// Role whose sample count and enrichment radius apply.
    pub role: Role,
    pub domain: Domain,
    /// The topological boundary of `domain` rather than the set itself.
    pub boundary: bool,
}

impl Region {
    fn set(role: Role, domain: &Domain) -> Region {
        Region {
            label: role.name().to_string(),
            role,
            domain: domain.clone(),
            boundary: false,
        }
    }

    /// `outer ∖ inner`, optionally removing only the interior of `inner`.
    fn minus(outer_role: Role, outer: &Domain, inner_role: Role, inner: &Domain, interior: bool) -> Result<Region, CertError> {
        let removed = if interior { inner.interior() } else { inner.clone() };
        Ok(Region {
            label: format!("{outer_role}\\{inner_role}"),
            role: outer_role,
            domain: Domain::difference(outer.clone(), removed)?,
            boundary: false,
        })
    }

    fn boundary_of(role: Role, domain: &Domain) -> Result<Region, CertError> {
        // a torus excludes a small ball around the origin; the relevant
        // boundary is the outer sphere
        let domain = match domain {
            Domain::Torus {
                center, outer_radius, ..
            } => Domain::sphere(center.clone(), *outer_radius)?,
            Domain::Sphere { .. } | Domain::Rectangle { .. } | Domain::Ellipsoid { .. } => domain.clone(),
            other => return Err(DomainError::UnsupportedBoundary(other.kind_name()).into()),
        };
        Ok(Region {
            label: format!("d{role}"),
            role,
            domain,
            boundary: true,
        })
    }

    pub fn predicate(&self) -> Formula {
        if self.boundary {
            Formula::and([
                self.domain.closure().membership(),
                Formula::not(self.domain.interior().membership()),
            ])
        } else {
            self.domain.membership()
        }
    }

    /// Numeric membership up to `tol` (boundary samples are only accurate
    /// to rounding error).
    pub fn contains_within(&self, x: &[f64], tol: f64) -> bool {
        self.predicate().holds_within(x, &[], tol).unwrap_or(false)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, DomainError> {
        if self.boundary {
            self.domain.boundary_sample(count, seed)
        } else {
            self.domain.sample(count, seed)
        }
    }

    pub fn characteristic_radius(&self) -> f64 {
        self.domain.characteristic_radius()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Which {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// `F(x)`
    Value,
    /// `Ḟ(x) = ∇F·f` (continuous) or `F(f(x)) − F(x)` (discrete)
    Lie,
    /// `F(f(x))`, discrete only
    Successor,
    /// A level value on its own; the condition has no data.
    Level(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Zero,
    Level(&'static str),
    Const(f64),
}

impl Threshold {
    pub fn resolve(self, levels: &BTreeMap<String, f64>) -> f64 {
        match self {
            Threshold::Zero => 0.0,
            Threshold::Const(c) => c,
            Threshold::Level(name) => levels.get(name).copied().unwrap_or(0.0),
        }
    }
}

/// Restricts a condition to part of its region, in terms of a function value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mask {
    /// `F ≤ t`
    Below(Which, Threshold),
    /// `F ≥ t`
    Above(Which, Threshold),
    /// `|F| ≤ BAND` (verifier) or `|F| ≤ TRAIN_BELT` (training)
    Band(Which),
}

impl Mask {
    pub fn function(self) -> Which {
        match self {
            Mask::Below(w, _) | Mask::Above(w, _) | Mask::Band(w) => w,
        }
    }

    /// Exact mask test used for verification.
    pub fn holds(self, value: f64, levels: &BTreeMap<String, f64>) -> bool {
        match self {
            Mask::Below(_, t) => value <= t.resolve(levels),
            Mask::Above(_, t) => value >= t.resolve(levels),
            Mask::Band(_) => value.abs() <= BAND,
        }
    }

    /// Relaxed mask used on training data: a superset of the exact mask, so
    /// zero loss implies the condition on every exactly-masked sample.
    pub fn holds_relaxed(self, value: f64, levels: &BTreeMap<String, f64>) -> bool {
        match self {
            Mask::Below(_, t) => value <= t.resolve(levels) + LEARN_MARGIN,
            Mask::Above(_, t) => value >= t.resolve(levels) - LEARN_MARGIN,
            Mask::Band(_) => value.abs() <= TRAIN_BELT,
        }
    }

    fn formula(self, f: &Expr, levels: &BTreeMap<String, f64>) -> Formula {
        match self {
            Mask::Below(_, t) => Formula::atom(f.clone(), Relation::Le, t.resolve(levels)),
            Mask::Above(_, t) => Formula::atom(f.clone(), Relation::Ge, t.resolve(levels)),
            Mask::Band(_) => Formula::and([
                Formula::atom(f.clone(), Relation::Le, BAND),
                Formula::atom(f.clone(), Relation::Ge, -BAND),
            ]),
        }
    }
}

/// One pointwise requirement: `quantity(function) relation threshold` for
/// every `x` in `region` that passes all masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub function: Which,
    pub quantity: Quantity,
    pub relation: Relation,
    pub threshold: Threshold,
    pub region: Region,
    pub masks: Vec<Mask>,
    /// The origin is removed from the region.
    pub exclude_origin: bool,
}

impl Condition {
    /// Signed slack: non-negative iff the condition holds (ignoring
    /// strictness).
    pub fn slack(&self, q: f64, threshold: f64) -> f64 {
        match self.relation {
            Relation::Gt | Relation::Ge => q - threshold,
            Relation::Lt | Relation::Le => threshold - q,
            Relation::Eq | Relation::Ne => unreachable!("conditions are inequalities"),
        }
    }

    /// Training margin at `x`: scaled by `‖x‖²` when the origin is excluded,
    /// since there the conditions necessarily degenerate.
    pub fn margin(&self, x: &[f64]) -> f64 {
        if self.exclude_origin {
            LEARN_MARGIN * x.iter().map(|v| v * v).sum::<f64>()
        } else {
            LEARN_MARGIN
        }
    }

    pub fn is_data_free(&self) -> bool {
        matches!(self.quantity, Quantity::Level(_))
    }
}

fn negate(rel: Relation) -> Relation {
    match rel {
        Relation::Lt => Relation::Ge,
        Relation::Le => Relation::Gt,
        Relation::Gt => Relation::Le,
        Relation::Ge => Relation::Lt,
        Relation::Eq => Relation::Ne,
        Relation::Ne => Relation::Eq,
    }
}

struct Builder<'a> {
    kind: CertificateKind,
    sets: &'a SetAssignment,
    out: Vec<Condition>,
}

impl Builder<'_> {
    fn role(&self, role: Role) -> Result<&Domain, CertError> {
        self.sets.need(self.kind, role)
    }

    fn push(&mut self, name: String, function: Which, quantity: Quantity, relation: Relation, threshold: Threshold, region: Region, masks: Vec<Mask>, exclude_origin: bool) {
        self.out.push(Condition {
            name,
            function,
            quantity,
            relation,
            threshold,
            region,
            masks,
            exclude_origin,
        });
    }

    /// `F > 0` and `Ḟ < 0` on `XD ∖ {0}`, optionally within a sublevel.
    fn lyapunov(&mut self, f: &str, which: Which, sublevel: Option<&'static str>) -> Result<(), CertError> {
        let xd = Region::set(Role::XD, self.role(Role::XD)?);
        let masks: Vec<Mask> = sublevel.map(|l| Mask::Below(which, Threshold::Level(l))).into_iter().collect();
        self.push(format!("{f}_positive"), which, Quantity::Value, Relation::Gt, Threshold::Zero, xd.clone(), masks.clone(), true);
        self.push(format!("{f}_decrease"), which, Quantity::Lie, Relation::Lt, Threshold::Zero, xd, masks, true);
        Ok(())
    }

    fn barrier(&mut self, f: &str, which: Which, time: TimeDomain) -> Result<(), CertError> {
        let xi = Region::set(Role::XI, self.role(Role::XI)?);
        let xu = Region::set(Role::XU, self.role(Role::XU)?);
        let xd = Region::set(Role::XD, self.role(Role::XD)?);
        self.push(format!("{f}_initial"), which, Quantity::Value, Relation::Le, Threshold::Zero, xi, vec![], false);
        self.push(format!("{f}_unsafe"), which, Quantity::Value, Relation::Gt, Threshold::Zero, xu, vec![], false);
        match time {
            TimeDomain::Continuous => self.push(
                format!("{f}_flow"),
                which,
                Quantity::Lie,
                Relation::Lt,
                Threshold::Zero,
                xd,
                vec![Mask::Band(which)],
                false,
            ),
            // {B ≤ 0} is forward invariant iff every state in it maps back into it
            TimeDomain::Discrete => self.push(
                format!("{f}_invariant"),
                which,
                Quantity::Successor,
                Relation::Le,
                Threshold::Zero,
                xd,
                vec![Mask::Below(which, Threshold::Zero)],
                false,
            ),
        }
        Ok(())
    }

    /// `F ≤ 0` on XI, `F > 0` on `XD ∖ int(XS)`.
    fn reach_base(&mut self, f: &str, which: Which) -> Result<(), CertError> {
        let xi = Region::set(Role::XI, self.role(Role::XI)?);
        let outside = Region::minus(Role::XD, self.role(Role::XD)?, Role::XS, self.role(Role::XS)?, true)?;
        self.push(format!("{f}_initial"), which, Quantity::Value, Relation::Le, Threshold::Zero, xi, vec![], false);
        self.push(format!("{f}_safe"), which, Quantity::Value, Relation::Gt, Threshold::Zero, outside, vec![], false);
        Ok(())
    }

    fn rwa(&mut self, f: &str, which: Which) -> Result<(), CertError> {
        self.reach_base(f, which)?;
        let region = Region::minus(Role::XS, self.role(Role::XS)?, Role::XG, self.role(Role::XG)?, false)?;
        self.push(
            format!("{f}_decrease"),
            which,
            Quantity::Lie,
            Relation::Le,
            Threshold::Const(-DECREASE_RATE),
            region,
            vec![Mask::Below(which, Threshold::Zero)],
            false,
        );
        Ok(())
    }
}

/// The condition list of a certificate kind over concrete sets.
pub fn conditions(kind: CertificateKind, time: TimeDomain, sets: &SetAssignment) -> Result<Vec<Condition>, CertError> {
    if !kind.supports(time) {
        return Err(CertError::TimeDomain { kind, time });
    }
    let mut b = Builder {
        kind,
        sets,
        out: Vec::new(),
    };
    let p = Which::Primary;
    match kind {
        CertificateKind::Lyapunov => b.lyapunov("V", p, None)?,
        CertificateKind::Roa => {
            b.lyapunov("V", p, Some("beta"))?;
            let xi = Region::set(Role::XI, b.role(Role::XI)?);
            let edge = Region::boundary_of(Role::XD, b.role(Role::XD)?)?;
            b.push("V_initial".into(), p, Quantity::Value, Relation::Le, Threshold::Level("beta"), xi, vec![], false);
            b.push("V_boundary".into(), p, Quantity::Value, Relation::Gt, Threshold::Level("beta"), edge, vec![], false);
        }
        CertificateKind::Barrier => b.barrier("B", p, time)?,
        CertificateKind::Swa => {
            b.lyapunov("V", p, None)?;
            b.barrier("B", Which::Secondary, time)?;
        }
        CertificateKind::Rwa => b.rwa("V", p)?,
        CertificateKind::Rswa => {
            b.reach_base("V", p)?;
            let xs = b.role(Role::XS)?.clone();
            let outside_final = Region::minus(Role::XS, &xs, Role::XF, b.role(Role::XF)?, false)?;
            b.push(
                "V_contain".into(),
                p,
                Quantity::Value,
                Relation::Gt,
                Threshold::Level("gamma"),
                outside_final,
                vec![],
                false,
            );
            b.push(
                "V_decrease".into(),
                p,
                Quantity::Lie,
                Relation::Le,
                Threshold::Const(-DECREASE_RATE),
                Region::set(Role::XS, &xs),
                vec![Mask::Above(p, Threshold::Level("gamma")), Mask::Below(p, Threshold::Zero)],
                false,
            );
            b.push(
                "gamma_negative".into(),
                p,
                Quantity::Level("gamma"),
                Relation::Lt,
                Threshold::Zero,
                Region::set(Role::XS, &xs),
                vec![],
                false,
            );
        }
        CertificateKind::Rar => {
            b.rwa("V", p)?;
            let s = Which::Secondary;
            let xg = Region::set(Role::XG, b.role(Role::XG)?);
            let xf = Region::set(Role::XF, b.role(Role::XF)?);
            let outside = Region::minus(Role::XD, b.role(Role::XD)?, Role::XF, b.role(Role::XF)?, true)?;
            b.push("W_goal".into(), s, Quantity::Value, Relation::Le, Threshold::Zero, xg, vec![], false);
            b.push("W_final".into(), s, Quantity::Value, Relation::Gt, Threshold::Zero, outside, vec![], false);
            b.push("W_flow".into(), s, Quantity::Lie, Relation::Lt, Threshold::Zero, xf, vec![Mask::Band(s)], false);
        }
    }
    Ok(b.out)
}

/// Distinct regions of a condition list, in first-use order.
pub fn regions(conds: &[Condition]) -> Vec<Region> {
    let mut out: Vec<Region> = Vec::new();
    for c in conds.iter().filter(|c| !c.is_data_free()) {
        if !out.iter().any(|r| r.label == c.region.label) {
            out.push(c.region.clone());
        }
    }
    out
}

/// A frozen candidate in symbolic form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateExprs {
    pub primary: Option<Expr>,
    pub secondary: Option<Expr>,
    /// Controller outputs `u0..`, when the model is controlled.
    pub controller: Option<Vec<Expr>>,
    pub levels: BTreeMap<String, f64>,
}

impl CandidateExprs {
    pub fn function(&self, which: Which) -> Option<&Expr> {
        match which {
            Which::Primary => self.primary.as_ref(),
            Which::Secondary => self.secondary.as_ref(),
        }
    }

    /// The autonomous model the certificate is about.
    pub fn closed_model(&self, model: &DynamicalModel) -> Result<DynamicalModel, CertError> {
        match (&self.controller, model.is_autonomous()) {
            (_, true) => Ok(model.clone()),
            (Some(ctrl), false) => Ok(model.close_with(ctrl)?),
            (None, false) => Err(CertError::Candidate("the model has inputs but no controller was given".into())),
        }
    }
}

/// How the origin is removed from stability regions in solver queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginExclusion {
    /// `x0 ≠ 0 ∨ x1 ≠ 0 ∨ …`
    Disjunction,
    /// The domain itself (a torus) already excludes a ball around the origin.
    Domain,
}

/// The negation of one condition over its region; satisfiable iff the
/// condition has a counterexample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGroup {
    pub name: String,
    /// Index of the originating condition.
    pub condition: usize,
    pub formula: Formula,
}

impl ConstraintGroup {
    /// Whether `x` genuinely violates the condition, up to `tol`.
    pub fn is_witness(&self, x: &[f64], tol: f64) -> bool {
        self.formula.holds_within(x, &[], tol).unwrap_or(false)
    }
}

/// The symbolic quantity of a condition.
pub fn quantity_expr(cond: &Condition, cand: &CandidateExprs, closed: &DynamicalModel) -> Result<Expr, CertError> {
    let missing = || CertError::Candidate(format!("condition {} needs a function that was not supplied", cond.name));
    Ok(match cond.quantity {
        Quantity::Level(name) => Expr::Const(cand.levels.get(name).copied().unwrap_or(0.0)),
        q => {
            let f = cand.function(cond.function).ok_or_else(missing)?;
            match q {
                Quantity::Value => f.clone(),
                Quantity::Lie => closed.lie_expr(f)?,
                Quantity::Successor => f.substitute_states(&closed.field().components),
                Quantity::Level(_) => unreachable!(),
            }
        }
    })
}

pub fn constraint_groups(
    conds: &[Condition],
    cand: &CandidateExprs,
    model: &DynamicalModel,
    origin: OriginExclusion,
) -> Result<Vec<ConstraintGroup>, CertError> {
    let closed = cand.closed_model(model)?;
    let n = model.n_vars();
    let mut groups = Vec::with_capacity(conds.len());
    for (i, c) in conds.iter().enumerate() {
        let q = quantity_expr(c, cand, &closed)?;
        let violated = Formula::atom(q, negate(c.relation), c.threshold.resolve(&cand.levels));
        let mut parts = vec![violated, c.region.predicate()];
        for m in &c.masks {
            let f = cand.function(m.function()).ok_or_else(|| CertError::Candidate(format!("mask of {} needs a missing function", c.name)))?;
            parts.push(m.formula(f, &cand.levels));
        }
        if c.exclude_origin && origin == OriginExclusion::Disjunction {
            parts.push(Formula::or((0..n).map(|k| Formula::atom(Expr::state(k), Relation::Ne, 0.0))));
        }
        groups.push(ConstraintGroup {
            name: c.name.clone(),
            condition: i,
            formula: Formula::and(parts),
        });
    }
    Ok(groups)
}

/// `mean(relu(margin − slack))`; zero for an empty batch.
pub fn condition_loss(slacks: &[f64], margins: &[f64]) -> f64 {
    if slacks.is_empty() {
        return 0.0;
    }
    slacks
        .iter()
        .zip(margins)
        .map(|(s, m)| (m - s).max(0.0))
        .sum::<f64>()
        / slacks.len() as f64
}

/// Mean cosine similarity between states and the closed-loop field, plus
/// `lambda · mean‖u‖²`.
pub fn control_loss(states: &[Vec<f64>], fields: &[Vec<f64>], inputs: &[Vec<f64>], lambda: f64) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let n = states.len() as f64;
    let cos: f64 = states.iter().zip(fields).map(|(d, f)| cosine(d, f)).sum::<f64>() / n;
    let effort: f64 = inputs.iter().map(|u| u.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
    cos + lambda * effort
}

pub(crate) fn cosine(d: &[f64], f: &[f64]) -> f64 {
    let dot: f64 = d.iter().zip(f).map(|(a, b)| a * b).sum();
    let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (nd * nf + 1e-8)
}

/// Random perturbations for [`crate::cegis`] enrichment.
pub(crate) fn gaussian_neighbours<R: Rng>(x: &[f64], sigma: f64, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    (0..count)
        .map(|_| x.iter().map(|v| v + normal.sample(rng)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(r: f64) -> Domain {
        Domain::sphere(vec![0.0, 0.0], r).unwrap()
    }

    fn interval(a: f64, b: f64) -> Domain {
        Domain::rectangle(vec![a], vec![b]).unwrap()
    }

    fn square(h: f64) -> Domain {
        Domain::rectangle(vec![-h, -h], vec![h, h]).unwrap()
    }

    fn v_only(src: &str, n: usize) -> CandidateExprs {
        CandidateExprs {
            primary: Some(Expr::parse(src, n, 0).unwrap()),
            ..Default::default()
        }
    }

    #[test]
    fn names_and_roles() {
        for k in CertificateKind::ALL {
            assert_eq!(k.name().parse::<CertificateKind>().unwrap(), k);
        }
        assert_eq!(CertificateKind::Rar.required_roles().len(), 5);
        assert!(CertificateKind::Swa.two_functions() && CertificateKind::Rar.two_functions());
        assert!(!CertificateKind::Rwa.supports(TimeDomain::Discrete));
        assert!(CertificateKind::Barrier.supports(TimeDomain::Discrete));
        let sets = SetAssignment::new([(Role::XD, sphere(1.0))]);
        assert!(sets.validate(CertificateKind::Lyapunov, 2).is_ok());
        assert!(matches!(
            sets.validate(CertificateKind::Roa, 2),
            Err(CertError::MissingRole { role: Role::XI, .. })
        ));
        assert!(matches!(
            SetAssignment::new([(Role::XD, sphere(1.0)), (Role::XU, sphere(0.5))]).validate(CertificateKind::Lyapunov, 2),
            Err(CertError::UnexpectedRole { .. })
        ));
        assert!(matches!(sets.validate(CertificateKind::Lyapunov, 3), Err(CertError::Dimension { .. })));
    }

    #[test]
    fn set_relations_are_sampled() {
        let good = SetAssignment::new([(Role::XG, square(0.3)), (Role::XF, square(0.6))]);
        assert!(good.check_relations(10_000, 0).is_ok());
        let bad = SetAssignment::new([(Role::XG, square(0.7)), (Role::XF, square(0.6))]);
        assert!(bad.check_relations(10_000, 0).is_err());
        let overlap = SetAssignment::new([(Role::XU, square(1.0)), (Role::XF, square(0.6))]);
        assert!(overlap.check_relations(10_000, 0).is_err());
    }

    #[test]
    fn lyapunov_loss_example() {
        // V = [−0.2, 0.3], V̇ = [0.1, −0.5], margin 0
        let positivity = condition_loss(&[-0.2, 0.3], &[0.0, 0.0]);
        let decrease = condition_loss(&[-0.1, 0.5], &[0.0, 0.0]);
        assert!((positivity + decrease - 0.15).abs() < 1e-15);
        assert_eq!(condition_loss(&[0.3, 0.2], &[0.05, 0.05]), 0.0);
        assert_eq!(condition_loss(&[], &[]), 0.0);
    }

    #[test]
    fn barrier_initial_violation_term() {
        let sets = SetAssignment::new([
            (Role::XD, interval(-5.0, 5.0)),
            (Role::XI, interval(-0.5, 0.5)),
            (Role::XU, interval(2.0, 3.0)),
        ]);
        let conds = conditions(CertificateKind::Barrier, TimeDomain::Continuous, &sets).unwrap();
        let init = &conds[0];
        assert_eq!(init.name, "B_initial");
        let s = init.slack(0.3, 0.0);
        let m = init.margin(&[0.1]);
        assert!((condition_loss(&[s], &[m]) - (0.3 + LEARN_MARGIN)).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_group_shape() {
        let sets = SetAssignment::new([(Role::XD, sphere(1.0))]);
        let model = DynamicalModel::parse(&["x1 - x0**3", "-x0"], 2, TimeDomain::Continuous).unwrap();
        let conds = conditions(CertificateKind::Lyapunov, TimeDomain::Continuous, &sets).unwrap();
        let groups = constraint_groups(&conds, &v_only("x0**2 + x1**2", 2), &model, OriginExclusion::Disjunction).unwrap();
        assert_eq!(groups.len(), 2);
        let g = &groups[1];
        assert_eq!(g.name, "V_decrease");
        let parts = g.formula.conjuncts();
        assert_eq!(parts.len(), 3);
        assert!(matches!(parts[0], Formula::Atom(_, Relation::Ge, _)));
        assert_eq!(parts[1].to_infix(), "x0**2 + x1**2 <= 1");
        assert_eq!(parts[2].to_infix(), "x0 != 0 || x1 != 0");
        // V̇ = −2 x0⁴ vanishes on x0 = 0
        assert!(g.is_witness(&[0.0, 0.5], 0.0));
        assert!(!g.is_witness(&[0.5, 0.0], 1e-9));
        assert!(!g.is_witness(&[0.0, 0.0], 0.0));

        let torus = SetAssignment::new([(Role::XD, Domain::torus(vec![0.0, 0.0], 1.0, 0.01).unwrap())]);
        let conds = conditions(CertificateKind::Lyapunov, TimeDomain::Continuous, &torus).unwrap();
        let groups = constraint_groups(&conds, &v_only("x0**2 + x1**2", 2), &model, OriginExclusion::Domain).unwrap();
        assert_eq!(groups[1].formula.conjuncts().len(), 3); // violated atom + two torus bounds
    }

    #[test]
    fn toy_barrier_has_no_witness_on_samples() {
        let sets = SetAssignment::new([
            (Role::XD, interval(-5.0, 5.0)),
            (Role::XI, interval(-0.5, 0.5)),
            (Role::XU, interval(2.0, 3.0)),
        ]);
        let model = DynamicalModel::parse(&["-x0"], 1, TimeDomain::Continuous).unwrap();
        let conds = conditions(CertificateKind::Barrier, TimeDomain::Continuous, &sets).unwrap();
        let groups = constraint_groups(&conds, &v_only("x0 - 1", 1), &model, OriginExclusion::Disjunction).unwrap();
        assert_eq!(groups.len(), 3);
        for g in &groups {
            for k in 0..=1000 {
                let x = -5.0 + 10.0 * k as f64 / 1000.0;
                assert!(!g.is_witness(&[x], 0.0), "{} at {x}", g.name);
            }
        }
        // widening XU to [0.4, 3] breaks the unsafe condition at 0.4
        let wide = SetAssignment::new([
            (Role::XD, interval(-5.0, 5.0)),
            (Role::XI, interval(-0.5, 0.5)),
            (Role::XU, interval(0.4, 3.0)),
        ]);
        let conds = conditions(CertificateKind::Barrier, TimeDomain::Continuous, &wide).unwrap();
        let groups = constraint_groups(&conds, &v_only("x0 - 1", 1), &model, OriginExclusion::Disjunction).unwrap();
        assert!(groups[1].is_witness(&[0.4], 0.0));
    }

    #[test]
    fn two_function_kinds_are_unions() {
        let sets = SetAssignment::new([(Role::XD, square(2.0)), (Role::XI, square(0.5)), (Role::XU, Domain::rectangle(vec![1.0, 1.0], vec![1.5, 1.5]).unwrap())]);
        let swa = conditions(CertificateKind::Swa, TimeDomain::Continuous, &sets).unwrap();
        let lyap = conditions(CertificateKind::Lyapunov, TimeDomain::Continuous, &SetAssignment::new([(Role::XD, square(2.0))])).unwrap();
        let barrier = conditions(CertificateKind::Barrier, TimeDomain::Continuous, &sets).unwrap();
        let names: Vec<_> = swa.iter().map(|c| c.name.clone()).collect();
        let expect: Vec<_> = lyap.iter().chain(&barrier).map(|c| c.name.clone()).collect();
        assert_eq!(names, expect);
        assert!(swa[2..].iter().all(|c| c.function == Which::Secondary));

        let rar_sets = SetAssignment::new([
            (Role::XD, square(3.5)),
            (Role::XS, square(3.0)),
            (Role::XI, square(1.5)),
            (Role::XG, square(0.3)),
            (Role::XF, square(0.6)),
        ]);
        let rar = conditions(CertificateKind::Rar, TimeDomain::Continuous, &rar_sets).unwrap();
        let names: Vec<_> = rar.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["V_initial", "V_safe", "V_decrease", "W_goal", "W_final", "W_flow"]);
        let labels: Vec<_> = regions(&rar).into_iter().map(|r| r.label).collect();
        assert_eq!(labels, ["XI", "XD\\XS", "XS\\XG", "XG", "XD\\XF", "XF"]);
    }

    #[test]
    fn rswa_containment_is_set_membership() {
        let sets = SetAssignment::new([
            (Role::XD, square(3.5)),
            (Role::XS, square(3.0)),
            (Role::XI, square(1.5)),
            (Role::XF, square(0.6)),
        ]);
        let conds = conditions(CertificateKind::Rswa, TimeDomain::Continuous, &sets).unwrap();
        let model = DynamicalModel::parse(&["x1", "-x0 - x1"], 2, TimeDomain::Continuous).unwrap();
        let mut cand = v_only("x0**2 + x1**2 - 1", 2);
        cand.levels.insert("gamma".into(), -0.9);
        let groups = constraint_groups(&conds, &cand, &model, OriginExclusion::Disjunction).unwrap();
        let contain = groups.iter().find(|g| g.name == "V_contain").unwrap();
        // V ≤ γ means ‖x‖ ≤ 0.316, inside XF: no witness anywhere
        for x in [[0.2, 0.2], [0.0, 0.3], [1.0, 1.0], [0.7, 0.0]] {
            assert!(!contain.is_witness(&x, 0.0));
        }
        cand.levels.insert("gamma".into(), -0.2);
        let groups = constraint_groups(&conds, &cand, &model, OriginExclusion::Disjunction).unwrap();
        let contain = groups.iter().find(|g| g.name == "V_contain").unwrap();
        // ‖x‖² = 0.64 ≤ 0.8 but x ∉ XF
        assert!(contain.is_witness(&[0.8, 0.0], 0.0));
        let level = groups.iter().find(|g| g.name == "gamma_negative").unwrap();
        assert!(!level.is_witness(&[0.0, 0.0], 0.0));
    }

    #[test]
    fn roa_boundary_region() {
        let sets = SetAssignment::new([(Role::XD, Domain::torus(vec![0.0, 0.0], 1.0, 0.1).unwrap()), (Role::XI, sphere(0.3))]);
        let conds = conditions(CertificateKind::Roa, TimeDomain::Continuous, &sets).unwrap();
        let edge = &conds.iter().find(|c| c.name == "V_boundary").unwrap().region;
        assert!(edge.boundary);
        for p in edge.sample(100, 3).unwrap() {
            assert!(edge.contains_within(&p, 1e-9));
        }
        assert!(!edge.contains_within(&[0.5, 0.0], 1e-9));
    }

    #[test]
    fn discrete_barrier_uses_successor() {
        let sets = SetAssignment::new([
            (Role::XD, interval(-5.0, 5.0)),
            (Role::XI, interval(-0.5, 0.5)),
            (Role::XU, interval(2.0, 3.0)),
        ]);
        let model = DynamicalModel::parse(&["0.5*x0"], 1, TimeDomain::Discrete).unwrap();
        let conds = conditions(CertificateKind::Barrier, TimeDomain::Discrete, &sets).unwrap();
        let groups = constraint_groups(&conds, &v_only("x0 - 1", 1), &model, OriginExclusion::Disjunction).unwrap();
        assert_eq!(groups[2].name, "B_invariant");
        for k in 0..=100 {
            let x = -5.0 + k as f64 / 10.0;
            assert!(!groups[2].is_witness(&[x], 0.0));
        }
        assert!(conditions(CertificateKind::Rar, TimeDomain::Discrete, &sets).is_err());
    }

    #[test]
    fn control_loss_examples() {
        let d = vec![vec![1.0, 2.0], vec![-0.5, 0.3]];
        let neg: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        let none: Vec<Vec<f64>> = vec![vec![], vec![]];
        assert!((control_loss(&d, &neg, &none, 0.0) + 1.0).abs() < 1e-7);
        assert!((control_loss(&d, &d, &none, 0.0) - 1.0).abs() < 1e-7);
        let one = control_loss(&[vec![1.0]], &[vec![-1.0]], &[vec![2.0]], 1.0);
        assert!((one - (-1.0 + 4.0)).abs() < 1e-7);
    }
}
