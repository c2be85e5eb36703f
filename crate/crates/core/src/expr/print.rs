use super::Expr;

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => PREC_ADD,
        Expr::Mul(..) | Expr::Div(..) => PREC_MUL,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Const(v) if v.is_sign_negative() => PREC_UNARY,
        Expr::Pow(..) => PREC_POW,
        Expr::Const(_) | Expr::State(_) | Expr::Input(_) | Expr::Call(..) => PREC_ATOM,
    }
}

fn write_child(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
        write(out, e);
        out.push(')');
    } else {
        write(out, e);
    }
}

fn write(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(v) => out.push_str(&format!("{v}")),
        Expr::State(i) => out.push_str(&format!("x{i}")),
        Expr::Input(i) => out.push_str(&format!("u{i}")),
        Expr::Neg(a) => {
            out.push('-');
            // `-(2)` keeps a negated literal from folding into a constant.
            let parens = precedence(a) < PREC_UNARY || matches!(**a, Expr::Const(_));
            write_child(out, a, parens);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            write_child(out, a, precedence(a) < PREC_ADD);
            out.push_str(if matches!(e, Expr::Add(..)) { " + " } else { " - " });
            write_child(out, b, precedence(b) <= PREC_ADD);
        }
        Expr::Mul(a, b) | Expr::Div(a, b) => {
            write_child(out, a, precedence(a) < PREC_MUL);
            out.push_str(if matches!(e, Expr::Mul(..)) { "*" } else { "/" });
            write_child(out, b, precedence(b) <= PREC_MUL);
        }
        Expr::Pow(a, n) => {
            write_child(out, a, precedence(a) < PREC_ATOM);
            out.push_str(&format!("**{n}"));
        }
        Expr::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write(out, a);
            out.push(')');
        }
    }
}

impl Expr {
    /// Human-readable infix text; `Expr::parse` reads it back to the same tree.
    pub fn print_infix(&self) -> String {
        let mut out = String::new();
        write(&mut out, self);
        out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    #[test]
    fn examples() {
        let e = Expr::Sub(
            Arc::new(Expr::State(1)),
            Arc::new(Expr::Pow(Arc::new(Expr::State(0)), 3)),
        );
        assert_eq!(e.print_infix(), "x1 - x0**3");
        assert_eq!(Expr::Const(0.5).print_infix(), "0.5");
        assert_eq!(Expr::Neg(Arc::new(Expr::State(0))).print_infix(), "-x0");
    }

    #[test]
    fn tricky_round_trips() {
        for src in [
            "x0 - (x1 - x2)",
            "x0/(x1*x2)",
            "(-x0)**2",
            "(-2)**2",
            "-(2)",
            "-2**2",
            "x0 * -0.5",
            "--x0",
            "sigmoid(x0 + 1)*tanh(-x1)",
            "(x0**2)**3",
        ] {
            let e = Expr::parse(src, 3, 0).unwrap();
            let printed = e.print_infix();
            assert_eq!(Expr::parse(&printed, 3, 0).unwrap(), e, "{src} -> {printed}");
        }
    }
}
