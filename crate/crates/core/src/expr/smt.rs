use num_bigint::BigUint;

use super::{Expr, Function};

/// Exact decimal expansion of a finite `f64`, e.g. `0.1` becomes
/// `0.1000000000000000055511151231257827021181583404541015625`.
///
/// The sign is dropped; callers handle negation. Always contains a decimal
/// point so SMT-LIB reads it as a real.
pub fn exact_decimal(v: f64) -> String {
    assert!(v.is_finite(), "cannot emit non-finite constant {v}");
    let v = v.abs();
    if v == 0.0 {
        return "0.0".to_string();
    }
    let bits = v.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    };
    if exp >= 0 {
        let int = BigUint::from(mantissa) << (exp as usize);
        return format!("{int}.0");
    }
    // mantissa * 2^exp = mantissa * 5^k / 10^k with k = -exp
    let k = (-exp) as usize;
    let digits = (BigUint::from(mantissa) * BigUint::from(5u32).pow(k as u32)).to_string();
    let (int_part, frac_part) = if digits.len() > k {
        let split = digits.len() - k;
        (digits[..split].to_string(), digits[split..].to_string())
    } else {
        ("0".to_string(), format!("{}{}", "0".repeat(k - digits.len()), digits))
    };
    let frac_part = frac_part.trim_end_matches('0');
    if frac_part.is_empty() {
        format!("{int_part}.0")
    } else {
        format!("{int_part}.{frac_part}")
    }
}

/// Negation is always written `(- 0.0 e)`.
fn negate(inner: &str) -> String {
    format!("(- 0.0 {inner})")
}

pub(crate) fn constant(v: f64) -> String {
    if v.is_sign_negative() && v != 0.0 {
        negate(&exact_decimal(v))
    } else {
        exact_decimal(v)
    }
}

fn write(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(v) => out.push_str(&constant(*v)),
        Expr::State(i) => out.push_str(&format!("x{i}")),
        Expr::Input(i) => out.push_str(&format!("u{i}")),
        Expr::Neg(a) => {
            out.push_str("(- 0.0 ");
            write(out, a);
            out.push(')');
        }
        Expr::Add(a, b) => binary(out, "+", a, b),
        Expr::Sub(a, b) => binary(out, "-", a, b),
        Expr::Mul(a, b) => binary(out, "*", a, b),
        Expr::Div(a, b) => binary(out, "/", a, b),
        Expr::Pow(a, n) => match n {
            0 => out.push_str("1.0"),
            1 => write(out, a),
            _ => {
                let mut base = String::new();
                write(&mut base, a);
                out.push_str("(*");
                for _ in 0..*n {
                    out.push(' ');
                    out.push_str(&base);
                }
                out.push(')');
            }
        },
        Expr::Call(f, a) => {
            let mut arg = String::new();
            write(&mut arg, a);
            let text = match f {
                Function::Sin => format!("(sin {arg})"),
                Function::Cos => format!("(cos {arg})"),
                Function::Exp => format!("(exp {arg})"),
                Function::Sigmoid => format!("(/ 1.0 (+ 1.0 (exp {})))", negate(&arg)),
                Function::Tanh => {
                    format!("(- (/ 2.0 (+ 1.0 (exp (* (- 0.0 2.0) {arg})))) 1.0)")
                }
                Function::Softplus => format!("(log (+ 1.0 (exp {arg})))"),
            };
            out.push_str(&text);
        }
    }
}

fn binary(out: &mut String, op: &str, a: &Expr, b: &Expr) {
    out.push('(');
    out.push_str(op);
    out.push(' ');
    write(out, a);
    out.push(' ');
    write(out, b);
    out.push(')');
}

impl Expr {
    /// Fully parenthesised SMT-LIB 2 term over reals `x0..` / `u0..`.
    pub fn to_smtlib(&self) -> String {
        let mut out = String::new();
        write(&mut out, self);
        out
    }
}
