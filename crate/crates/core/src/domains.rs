//! Geometric sets: symbolic membership predicates, seeded samplers and the
//! textual constructors used in configuration files.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::expr::{Expr, Formula, Relation};

/// Rejection samplers give up when fewer than this fraction of draws land
/// inside the set after [`REJECTION_WINDOW`] trials.
pub const MIN_ACCEPTANCE: f64 = 1e-4;
pub const REJECTION_WINDOW: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("degenerate domain: acceptance rate {rate:.2e} after {trials} trials")]
    Degenerate { rate: f64, trials: u64 },
    #[error("boundary sampling is not supported for {0} domains")]
    UnsupportedBoundary(&'static str),
    #[error("cannot parse domain `{text}`: {reason}")]
    Parse { text: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Sphere {
        center: Vec<f64>,
        radius: f64,
        closed: bool,
    },
    Rectangle {
        lower: Vec<f64>,
        upper: Vec<f64>,
        closed: bool,
    },
    /// Ball of `outer_radius` minus the ball of `inner_radius`.
    Torus {
        center: Vec<f64>,
        outer_radius: f64,
        inner_radius: f64,
        closed: bool,
    },
    /// Axis-aligned ellipsoid.
    Ellipsoid {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        closed: bool,
    },
    Difference(Box<Domain>, Box<Domain>),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, DomainError> {
    Err(DomainError::Invalid(msg.into()))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Domain {
    pub fn sphere(center: Vec<f64>, radius: f64) -> Result<Domain, DomainError> {
        if center.is_empty() || !all_finite(&center) || !(radius > 0.0) || !radius.is_finite() {
            return invalid(format!("sphere needs a finite center and radius > 0, got {radius}"));
        }
        Ok(Domain::Sphere {
            center,
            radius,
            closed: true,
        })
    }

    pub fn rectangle(lower: Vec<f64>, upper: Vec<f64>) -> Result<Domain, DomainError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return invalid("rectangle bounds must have equal, non-zero length");
        }
        if !all_finite(&lower) || !all_finite(&upper) {
            return invalid("rectangle bounds must be finite");
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] >= upper[i]) {
            return invalid(format!(
                "rectangle needs lower < upper on every axis (axis {i}: {} >= {})",
                lower[i], upper[i]
            ));
        }
        Ok(Domain::Rectangle {
            lower,
            upper,
            closed: true,
        })
    }

    pub fn torus(center: Vec<f64>, outer_radius: f64, inner_radius: f64) -> Result<Domain, DomainError> {
        if center.is_empty() || !all_finite(&center) {
            return invalid("torus needs a finite center");
        }
        if !(inner_radius > 0.0 && inner_radius < outer_radius && outer_radius.is_finite()) {
            return invalid(format!(
                "torus needs 0 < inner < outer, got inner {inner_radius}, outer {outer_radius}"
            ));
        }
        Ok(Domain::Torus {
            center,
            outer_radius,
            inner_radius,
            closed: true,
        })
    }

    pub fn ellipsoid(center: Vec<f64>, semi_axes: Vec<f64>) -> Result<Domain, DomainError> {
        if center.len() != semi_axes.len() || center.is_empty() {
            return invalid("ellipsoid center and semi-axes must have equal, non-zero length");
        }
        if !all_finite(&center) || semi_axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return invalid("ellipsoid semi-axes must be finite and positive");
        }
        Ok(Domain::Ellipsoid {
            center,
            semi_axes,
            closed: true,
        })
    }

    pub fn difference(outer: Domain, inner: Domain) -> Result<Domain, DomainError> {
        if outer.dim() != inner.dim() {
            return invalid(format!(
                "difference of domains with dimensions {} and {}",
                outer.dim(),
                inner.dim()
            ));
        }
        Ok(Domain::Difference(Box::new(outer), Box::new(inner)))
    }

    /// Same set with strict inequalities.
    pub fn open(mut self) -> Domain {
        self.set_closed(false);
        self
    }

    fn set_closed(&mut self, value: bool) {
        match self {
            Domain::Sphere { closed, .. }
            | Domain::Rectangle { closed, .. }
            | Domain::Torus { closed, .. }
            | Domain::Ellipsoid { closed, .. } => *closed = value,
            Domain::Difference(..) => {}
        }
    }

    /// Interior of the set (strict inequalities throughout).
    pub fn interior(&self) -> Domain {
        match self {
            Domain::Difference(a, b) => Domain::Difference(Box::new(a.interior()), Box::new(b.closure())),
            other => other.clone().open(),
        }
    }

    /// Closure of the set (non-strict inequalities throughout).
    pub fn closure(&self) -> Domain {
        match self {
            Domain::Difference(a, b) => Domain::Difference(Box::new(a.closure()), Box::new(b.interior())),
            other => {
                let mut d = other.clone();
                d.set_closed(true);
                d
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Domain::Sphere { .. } => "Sphere",
            Domain::Rectangle { .. } => "Rectangle",
            Domain::Torus { .. } => "Torus",
            Domain::Ellipsoid { .. } => "Ellipsoid",
            Domain::Difference(..) => "Difference",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Sphere { center, .. }
            | Domain::Torus { center, .. }
            | Domain::Ellipsoid { center, .. } => center.len(),
            Domain::Rectangle { lower, .. } => lower.len(),
            Domain::Difference(a, _) => a.dim(),
        }
    }

    /// Typical length scale of the set, used to size perturbations.
    pub fn characteristic_radius(&self) -> f64 {
        match self {
            Domain::Sphere { radius, .. } => *radius,
            Domain::Rectangle { lower, upper, .. } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (u - l) / 2.0)
                .fold(0.0, f64::max),
            Domain::Torus { outer_radius, .. } => *outer_radius,
            Domain::Ellipsoid { semi_axes, .. } => semi_axes.iter().cloned().fold(0.0, f64::max),
            Domain::Difference(a, _) => a.characteristic_radius(),
        }
    }

    /// Symbolic membership predicate over `x0..x{n-1}`.
    pub fn membership(&self) -> Formula {
        match self {
            Domain::Sphere {
                center,
                radius,
                closed,
            } => Formula::atom(
                squared_distance(center, None),
                le(*closed),
                radius * radius,
            ),
            Domain::Rectangle {
                lower,
                upper,
                closed,
            } => Formula::and((0..lower.len()).flat_map(|i| {
                [
                    Formula::atom(Expr::Const(lower[i]), le(*closed), Expr::state(i)),
                    Formula::atom(Expr::state(i), le(*closed), upper[i]),
                ]
            })),
            Domain::Torus {
                center,
                outer_radius,
                inner_radius,
                closed,
            } => {
                let d = squared_distance(center, None);
                Formula::and([
                    Formula::atom(Expr::Const(inner_radius * inner_radius), le(*closed), d.clone()),
                    Formula::atom(d, le(*closed), outer_radius * outer_radius),
                ])
            }
            Domain::Ellipsoid {
                center,
                semi_axes,
                closed,
            } => Formula::atom(squared_distance(center, Some(semi_axes)), le(*closed), 1.0),
            Domain::Difference(a, b) => Formula::and([a.membership(), Formula::not(b.membership())]),
        }
    }

    /// Numeric membership; agrees with [`Domain::membership`] evaluated exactly.
    pub fn contains(&self, x: &[f64]) -> bool {
        let cmp = |a: f64, b: f64, closed: bool| if closed { a <= b } else { a < b };
        match self {
            Domain::Sphere {
                center,
                radius,
                closed,
            } => cmp(sq_dist(center, None, x), radius * radius, *closed),
            Domain::Rectangle {
                lower,
                upper,
                closed,
            } => (0..lower.len()).all(|i| cmp(lower[i], x[i], *closed) && cmp(x[i], upper[i], *closed)),
            Domain::Torus {
                center,
                outer_radius,
                inner_radius,
                closed,
            } => {
                let d = sq_dist(center, None, x);
                cmp(inner_radius * inner_radius, d, *closed) && cmp(d, outer_radius * outer_radius, *closed)
            }
            Domain::Ellipsoid {
                center,
                semi_axes,
                closed,
            } => cmp(sq_dist(center, Some(semi_axes), x), 1.0, *closed),
            Domain::Difference(a, b) => a.contains(x) && !b.contains(x),
        }
    }

    /// `count` points drawn uniformly from the set, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, DomainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(count, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, DomainError> {
        let mut out = Vec::with_capacity(count);
        let mut trials: u64 = 0;
        while out.len() < count {
            let p = self.proposal(rng);
            trials += 1;
            if self.contains(&p) {
                out.push(p);
            }
            if trials % REJECTION_WINDOW == 0 {
                let rate = out.len() as f64 / trials as f64;
                if rate < MIN_ACCEPTANCE {
                    return Err(DomainError::Degenerate { rate, trials });
                }
            }
        }
        Ok(out)
    }

    /// One draw from the proposal distribution: exact for the primitive
    /// shapes, the outer set for the compound ones.
    fn proposal<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Domain::Sphere { center, radius, .. } => ball_point(center, &vec![*radius; center.len()], rng),
            Domain::Rectangle { lower, upper, .. } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
                .collect(),
            Domain::Torus {
                center,
                outer_radius,
                ..
            } => ball_point(center, &vec![*outer_radius; center.len()], rng),
            Domain::Ellipsoid {
                center, semi_axes, ..
            } => ball_point(center, semi_axes, rng),
            Domain::Difference(a, _) => a.proposal(rng),
        }
    }

    /// `count` points on the topological boundary of a sphere, rectangle or
    /// ellipsoid.
    pub fn boundary_sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, DomainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Domain::Sphere { center, radius, .. } => Ok((0..count)
                .map(|_| surface_point(center, &vec![*radius; center.len()], &mut rng))
                .collect()),
            Domain::Ellipsoid {
                center, semi_axes, ..
            } => Ok((0..count)
                .map(|_| surface_point(center, semi_axes, &mut rng))
                .collect()),
            Domain::Rectangle { lower, upper, .. } => {
                let n = lower.len();
                let widths: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
                // face i has area prod_{j != i} width_j (both sides)
                let areas: Vec<f64> = (0..n)
                    .map(|i| (0..n).filter(|&j| j != i).map(|j| widths[j]).product())
                    .collect();
                let total: f64 = areas.iter().sum::<f64>() * 2.0;
                Ok((0..count)
                    .map(|_| {
                        let mut pick = rng.gen::<f64>() * total;
                        let mut face = (n - 1, true);
                        'find: for (i, a) in areas.iter().enumerate() {
                            for upper_side in [false, true] {
                                if pick < *a {
                                    face = (i, upper_side);
                                    break 'find;
                                }
                                pick -= a;
                            }
                        }
                        let mut p: Vec<f64> = (0..n)
                            .map(|j| lower[j] + widths[j] * rng.gen::<f64>())
                            .collect();
                        p[face.0] = if face.1 { upper[face.0] } else { lower[face.0] };
                        p
                    })
                    .collect())
            }
            other => Err(DomainError::UnsupportedBoundary(other.kind_name())),
        }
    }
}

fn le(closed: bool) -> Relation {
    if closed {
        Relation::Le
    } else {
        Relation::Lt
    }
}

/// `sum_i ((x_i - c_i) / a_i)^2` built with the folding constructors, so a
/// zero center gives `x0*x0 + ...`.
fn squared_distance(center: &[f64], scale: Option<&[f64]>) -> Expr {
    Expr::sum(center.iter().enumerate().map(|(i, c)| {
        let mut d = Expr::sub(Expr::state(i), Expr::Const(*c));
        if let Some(a) = scale {
            d = Expr::div(d, Expr::Const(a[i]));
        }
        Expr::pow(d, 2)
    }))
}

/// Numeric twin of [`squared_distance`], same operation order.
fn sq_dist(center: &[f64], scale: Option<&[f64]>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, c) in center.iter().enumerate() {
        let mut d = x[i] - c;
        if let Some(a) = scale {
            if a[i] != 1.0 {
                d /= a[i];
            }
        }
        acc += d * d;
    }
    acc
}

fn unit_direction<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn ball_point<R: Rng>(center: &[f64], axes: &[f64], rng: &mut R) -> Vec<f64> {
    let n = center.len();
    let dir = unit_direction(n, rng);
    let r = rng.gen::<f64>().powf(1.0 / n as f64);
    (0..n).map(|i| center[i] + axes[i] * r * dir[i]).collect()
}

fn surface_point<R: Rng>(center: &[f64], axes: &[f64], rng: &mut R) -> Vec<f64> {
    let dir = unit_direction(center.len(), rng);
    (0..center.len()).map(|i| center[i] + axes[i] * dir[i]).collect()
}

struct Vector<'a>(&'a [f64]);

impl fmt::Display for Vector<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = |closed: &bool| if *closed { "" } else { "Open" };
        match self {
            Domain::Sphere {
                center,
                radius,
                closed,
            } => write!(f, "{}Sphere({}, {radius})", open(closed), Vector(center)),
            Domain::Rectangle {
                lower,
                upper,
                closed,
            } => write!(f, "{}Rectangle({}, {})", open(closed), Vector(lower), Vector(upper)),
            Domain::Torus {
                center,
                outer_radius,
                inner_radius,
                closed,
            } => write!(
                f,
                "{}Torus({}, {outer_radius}, {inner_radius})",
                open(closed),
                Vector(center)
            ),
            Domain::Ellipsoid {
                center,
                semi_axes,
                closed,
            } => write!(f, "{}Ellipsoid({}, {})", open(closed), Vector(center), Vector(semi_axes)),
            Domain::Difference(a, b) => write!(f, "Difference({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone)]
enum Arg {
    Num(f64),
    Vec(Vec<f64>),
}

fn parse_args(text: &str) -> Result<Vec<Arg>, String> {
    let mut args = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        if let Some(stripped) = rest.strip_prefix('[') {
            let end = stripped.find(']').ok_or("unterminated `[`")?;
            let items = stripped[..end]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| format!("bad number `{s}`")))
                .collect::<Result<Vec<_>, _>>()?;
            args.push(Arg::Vec(items));
            rest = stripped[end + 1..].trim_start();
        } else {
            let end = rest.find(',').unwrap_or(rest.len());
            let token = rest[..end].trim();
            args.push(Arg::Num(
                token.parse::<f64>().map_err(|_| format!("bad number `{token}`"))?,
            ));
            rest = &rest[end..];
        }
        rest = rest.trim_start();
        if let Some(stripped) = rest.strip_prefix(',') {
            rest = stripped.trim_start();
            if rest.is_empty() {
                return Err("trailing `,`".into());
            }
        } else if !rest.is_empty() {
            return Err(format!("expected `,` before `{rest}`"));
        }
    }
    Ok(args)
}

impl FromStr for Domain {
    type Err = DomainError;

    /// Parses `Sphere([c...], r)`, `Rectangle([lb...], [ub...])`,
    /// `Torus([c...], r_o, r_i)`, `Ellipsoid([c...], [a...])`, and the
    /// `OpenSphere` / `OpenRectangle` variants.
    fn from_str(text: &str) -> Result<Domain, DomainError> {
        let fail = |reason: String| DomainError::Parse {
            text: text.to_string(),
            reason,
        };
        let s = text.trim();
        let open = s.find('(').ok_or_else(|| fail("missing `(`".into()))?;
        if !s.ends_with(')') {
            return Err(fail("missing closing `)`".into()));
        }
        let name = s[..open].trim();
        let args = parse_args(&s[open + 1..s.len() - 1]).map_err(fail)?;
        let built = match (name, args.as_slice()) {
            ("Sphere", [Arg::Vec(c), Arg::Num(r)]) => Domain::sphere(c.clone(), *r),
            ("OpenSphere", [Arg::Vec(c), Arg::Num(r)]) => Domain::sphere(c.clone(), *r).map(Domain::open),
            ("Rectangle", [Arg::Vec(l), Arg::Vec(u)]) => Domain::rectangle(l.clone(), u.clone()),
            ("OpenRectangle", [Arg::Vec(l), Arg::Vec(u)]) => {
                Domain::rectangle(l.clone(), u.clone()).map(Domain::open)
            }
            ("Torus", [Arg::Vec(c), Arg::Num(ro), Arg::Num(ri)]) => Domain::torus(c.clone(), *ro, *ri),
            ("OpenTorus", [Arg::Vec(c), Arg::Num(ro), Arg::Num(ri)]) => {
                Domain::torus(c.clone(), *ro, *ri).map(Domain::open)
            }
            ("Ellipsoid", [Arg::Vec(c), Arg::Vec(a)]) => Domain::ellipsoid(c.clone(), a.clone()),
            ("OpenEllipsoid", [Arg::Vec(c), Arg::Vec(a)]) => Domain::ellipsoid(c.clone(), a.clone()).map(Domain::open),
            (
                "Sphere" | "OpenSphere" | "Rectangle" | "OpenRectangle" | "Torus" | "OpenTorus" | "Ellipsoid"
                | "OpenEllipsoid",
                _,
            ) => {
                return Err(fail(format!("wrong arguments for {name}")))
            }
            _ => return Err(fail(format!("unknown domain kind `{name}`"))),
        };
        built.map_err(|e| fail(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_kinds() -> Vec<Domain> {
        vec![
            Domain::sphere(vec![0.0, 0.0], 1.0).unwrap(),
            Domain::sphere(vec![0.5, -1.0, 2.0], 0.3).unwrap().open(),
            Domain::rectangle(vec![-3.5, -3.5], vec![3.5, 3.5]).unwrap(),
            Domain::rectangle(vec![0.0, 1.0], vec![0.1, 2.0]).unwrap().open(),
            Domain::torus(vec![0.0, 0.0], 1.0, 0.01).unwrap(),
            Domain::ellipsoid(vec![1.0, 0.0], vec![1.0, 2.0]).unwrap(),
            Domain::difference(
                Domain::rectangle(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap(),
                Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            )
            .unwrap(),
        ]
    }

    #[test]
    fn predicate_examples() {
        let s: Domain = "Sphere([0,0], 1.0)".parse().unwrap();
        assert_eq!(s.membership().to_infix(), "x0**2 + x1**2 <= 1");
        let t: Domain = "Torus([0,0], 1.0, 0.01)".parse().unwrap();
        assert_eq!(
            t.membership().to_infix(),
            format!("{} <= x0**2 + x1**2 && x0**2 + x1**2 <= 1", 0.01 * 0.01)
        );
        let r: Domain = "Rectangle([-3.5, -3.5], [3.5, 3.5])".parse().unwrap();
        assert_eq!(
            r.membership().to_infix(),
            "-3.5 <= x0 && x0 <= 3.5 && -3.5 <= x1 && x1 <= 3.5"
        );
    }

    #[test]
    fn sampler_predicate_coherence() {
        for d in all_kinds() {
            let pts = d.sample(10_000, 3).unwrap();
            assert_eq!(pts.len(), 10_000);
            let pred = d.membership();
            for p in &pts {
                assert!(pred.holds(p, &[]).unwrap(), "{d}: {p:?}");
            }
        }
    }

    #[test]
    fn difference_excludes_inner() {
        let inner = Domain::sphere(vec![0.0, 0.0], 0.5).unwrap();
        let d = Domain::difference(Domain::sphere(vec![0.0, 0.0], 1.0).unwrap(), inner.clone()).unwrap();
        let pred = inner.membership();
        for p in d.sample(5_000, 11).unwrap() {
            assert!(!pred.holds(&p, &[]).unwrap());
        }
    }

    #[test]
    fn sampling_examples() {
        let s = Domain::sphere(vec![0.0, 0.0], 1.0).unwrap();
        let pts = s.sample(1000, 42).unwrap();
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().all(|p| p[0] * p[0] + p[1] * p[1] <= 1.0));

        let t = Domain::torus(vec![0.0, 0.0], 1.0, 0.01).unwrap();
        for p in t.sample(500, 7).unwrap() {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((0.01..=1.0).contains(&r));
        }

        // mean of U([0,1]^2) is (0.5, 0.5); standard error ~ 0.29/sqrt(1e5)
        let r = Domain::rectangle(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let pts = r.sample(100_000, 1).unwrap();
        for axis in 0..2 {
            let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / pts.len() as f64;
            assert!((mean - 0.5).abs() < 0.02, "axis {axis}: {mean}");
        }
        assert!(r.sample(0, 1).unwrap().is_empty());
    }

    #[test]
    fn sphere_radius_distribution_is_uniform_in_area() {
        // P(|x| <= 1/2) = 1/4 in two dimensions.
        let s = Domain::sphere(vec![0.0, 0.0], 1.0).unwrap();
        let pts = s.sample(40_000, 5).unwrap();
        let frac = pts.iter().filter(|p| p[0] * p[0] + p[1] * p[1] <= 0.25).count() as f64 / 40_000.0;
        assert!((frac - 0.25).abs() < 0.01, "{frac}");
    }

    #[test]
    fn determinism() {
        for d in all_kinds() {
            assert_eq!(d.sample(100, 9).unwrap(), d.sample(100, 9).unwrap());
        }
    }

    #[test]
    fn boundary_examples() {
        let s = Domain::sphere(vec![0.0, 0.0], 1.0).unwrap();
        for p in s.boundary_sample(200, 1).unwrap() {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-9);
        }
        let r = Domain::rectangle(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        for p in r.boundary_sample(200, 2).unwrap() {
            assert!(p.iter().any(|v| *v == 0.0 || *v == 1.0), "{p:?}");
            assert!(r.contains(&p));
        }
        let e = Domain::ellipsoid(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        for p in e.boundary_sample(200, 3).unwrap() {
            assert!((p[0] * p[0] + (p[1] / 2.0).powi(2) - 1.0).abs() < 1e-9);
        }
        let t = Domain::torus(vec![0.0, 0.0], 1.0, 0.5).unwrap();
        assert!(matches!(
            t.boundary_sample(1, 0),
            Err(DomainError::UnsupportedBoundary("Torus"))
        ));
    }

    #[test]
    fn degenerate_difference() {
        let outer = Domain::rectangle(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let inner = Domain::rectangle(vec![-1.0, -1.0], vec![2.0, 2.0]).unwrap();
        let d = Domain::difference(outer, inner).unwrap();
        assert!(matches!(d.sample(1, 0), Err(DomainError::Degenerate { .. })));
    }

    #[test]
    fn invalid_parameters() {
        assert!(Domain::rectangle(vec![1.0], vec![0.0]).is_err());
        assert!(Domain::torus(vec![0.0], 0.5, 1.0).is_err());
        assert!(Domain::sphere(vec![0.0], -1.0).is_err());
        assert!(Domain::ellipsoid(vec![0.0], vec![0.0]).is_err());
        assert!("Cube([0], 1)".parse::<Domain>().is_err());
        assert!("Sphere([0,0])".parse::<Domain>().is_err());
    }

    #[test]
    fn display_parses_back() {
        for d in all_kinds().into_iter().filter(|d| !matches!(d, Domain::Difference(..))) {
            let text = d.to_string();
            let closed_only = !text.starts_with("Open")
                || matches!(d, Domain::Sphere { .. } | Domain::Rectangle { .. });
            if closed_only {
                assert_eq!(text.parse::<Domain>().unwrap(), d, "{text}");
            }
        }
    }
}
