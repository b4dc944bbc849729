//! Prefix-notation formula reader, e.g. `(always 0 99 (geq dist_m 2.0))`.

use super::formula::{Comparison, Formula, Interval, Predicate, DEFAULT_SCALE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(src: &str) -> Vec<String> {
    src.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn read(tokens: &[String], pos: &mut usize) -> Result<Sexp> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| Error::Argument("unexpected end of formula".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    Some(_) => items.push(read(tokens, pos)?),
                    None => return Err(Error::Argument("unbalanced `(` in formula".into())),
                }
            }
        }
        ")" => Err(Error::Argument("unexpected `)` in formula".into())),
        atom => Ok(Sexp::Atom(atom.to_string())),
    }
}

fn atom(s: &Sexp) -> Result<&str> {
    match s {
        Sexp::Atom(a) => Ok(a),
        Sexp::List(_) => Err(Error::Argument("expected an atom, found a list".into())),
    }
}

fn number(s: &Sexp) -> Result<f64> {
    let a = atom(s)?;
    a.parse().map_err(|_| Error::Argument(format!("expected a number, found `{a}`")))
}

fn step(s: &Sexp) -> Result<usize> {
    let a = atom(s)?;
    a.parse().map_err(|_| Error::Argument(format!("expected a step index, found `{a}`")))
}

fn arity(op: &str, args: &[Sexp], n: usize) -> Result<()> {
    if args.len() != n {
        return Err(Error::Argument(format!("`{op}` takes {n} arguments, got {}", args.len())));
    }
    Ok(())
}

fn build(s: &Sexp) -> Result<Formula> {
    let items = match s {
        Sexp::Atom(a) if a == "true" => return Ok(Formula::True),
        Sexp::Atom(a) => return Err(Error::Argument(format!("unknown atom `{a}`"))),
        Sexp::List(items) => items,
    };
    let (head, args) = items
        .split_first()
        .ok_or_else(|| Error::Argument("empty list in formula".into()))?;
    let op = atom(head)?;
    match op {
        "geq" | "leq" => {
            if !(args.len() == 2 || args.len() == 3) {
                return Err(Error::Argument(format!("`{op}` takes 2 or 3 arguments")));
            }
            let cmp = if op == "geq" { Comparison::Geq } else { Comparison::Leq };
            let scale = match args.get(2) {
                Some(s) => number(s)?,
                None => DEFAULT_SCALE,
            };
            Ok(Formula::Pred(Predicate::new(atom(&args[0])?, cmp, number(&args[1])?, scale)?))
        }
        "not" => {
            arity(op, args, 1)?;
            Ok(Formula::not(build(&args[0])?))
        }
        "and" | "or" => {
            if args.len() < 2 {
                return Err(Error::Argument(format!("`{op}` takes at least 2 arguments")));
            }
            let mut acc = build(&args[0])?;
            for a in &args[1..] {
                let rhs = build(a)?;
                acc = if op == "and" { Formula::and(acc, rhs) } else { Formula::or(acc, rhs) };
            }
            Ok(acc)
        }
        "always" | "eventually" => {
            arity(op, args, 3)?;
            let i = Interval::new(step(&args[0])?, step(&args[1])?)?;
            let body = build(&args[2])?;
            Ok(if op == "always" { Formula::always(i, body) } else { Formula::eventually(i, body) })
        }
        "until" => {
            arity(op, args, 4)?;
            let i = Interval::new(step(&args[0])?, step(&args[1])?)?;
            Ok(Formula::until(i, build(&args[2])?, build(&args[3])?))
        }
        other => Err(Error::Argument(format!("unknown operator `{other}`"))),
    }
}

pub fn parse_formula(src: &str) -> Result<Formula> {
    let tokens = tokenize(src);
    let mut pos = 0;
    let sexp = read(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::Argument("trailing input after formula".into()));
    }
    build(&sexp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_safety_property() {
        let f = parse_formula("(always 0 99 (geq dist_m 2.0))").unwrap();
        assert_eq!(f, Formula::min_distance("dist_m", 2.0, 99).unwrap());
        assert_eq!(f.lookahead(), 99);
    }

    #[test]
    fn display_round_trips() {
        let src = "(or (until 1 3 (leq v 5.0 10.0) true) (not (eventually 0 2 (geq x -1.5))))";
        let f = parse_formula(src).unwrap();
        assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn n_ary_and_folds_left() {
        let f = parse_formula("(and true true (geq x 1))").unwrap();
        assert!(matches!(f, Formula::And(ref a, _) if matches!(**a, Formula::And(_, _))));
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "",
            "(always 0 9",
            "(always 9 0 true)",
            "(geq x)",
            "(frob true)",
            "(geq x 1 -2)",
            "(not true) extra",
            "()",
        ] {
            assert!(parse_formula(bad).is_err(), "accepted `{bad}`");
        }
    }
}
