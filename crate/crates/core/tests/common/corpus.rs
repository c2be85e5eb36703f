//! Loader for the polynomial backend corpus in `tests/data`.

use std::path::Path;

use certsynth_core::{Expr, Formula, Relation};

pub struct Case {
    pub line: usize,
    pub expected_sat: bool,
    pub n_vars: usize,
    pub formula: Formula,
}

fn atom(text: &str, n: usize) -> Formula {
    let rels = [
        ("<=", Relation::Le),
        (">=", Relation::Ge),
        ("!=", Relation::Ne),
        ("==", Relation::Eq),
        ("<", Relation::Lt),
        (">", Relation::Gt),
    ];
    let (sym, rel) = rels.iter().find(|(s, _)| text.contains(s)).unwrap_or_else(|| panic!("no relation in {text:?}"));
    let (l, r) = text.split_once(sym).unwrap();
    let parse = |s: &str| Expr::parse(s.trim(), n, 0).unwrap_or_else(|e| panic!("{s:?}: {e}"));
    Formula::atom(parse(l), *rel, parse(r))
}

pub fn load(path: &Path) -> Vec<Case> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, body) = line.split_once(':').expect("missing ':'");
        let mut head = head.split_whitespace();
        let expected_sat = match head.next() {
            Some("sat") => true,
            Some("unsat") => false,
            other => panic!("line {}: bad verdict {other:?}", i + 1),
        };
        let n_vars: usize = head.next().and_then(|n| n.parse().ok()).expect("n_vars");
        let formula = Formula::and(
            body.split(';')
                .map(|c| Formula::or(c.split('|').map(|a| atom(a, n_vars)))),
        );
        cases.push(Case {
            line: i + 1,
            expected_sat,
            n_vars,
            formula,
        });
    }
    cases
}
