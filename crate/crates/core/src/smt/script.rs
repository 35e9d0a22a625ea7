use std::collections::HashMap;
use std::fmt::Write;

use super::term::{Sort, Term};
use crate::error::{Error, Result};

/// A complete solver query: declarations, assertions, one `check-sat`, and
/// an optional `get-value` over declared constants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub logic: String,
    pub options: Vec<(String, String)>,
    pub declarations: Vec<(String, Sort)>,
    pub assertions: Vec<Term>,
    pub get_values: Vec<String>,
}

impl Script {
    pub fn new(logic: impl Into<String>) -> Self {
        Script { logic: logic.into(), ..Default::default() }
    }

    pub fn declare(&mut self, name: impl Into<String>, sort: Sort) {
        self.declarations.push((name.into(), sort));
    }

    pub fn assert(&mut self, t: Term) {
        self.assertions.push(t);
    }

    pub fn option(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.options.push((key.into(), value.into()));
    }

    pub fn request_value(&mut self, name: impl Into<String>) {
        self.get_values.push(name.into());
    }

    /// Deterministic SMT-LIB2 text. Fails on undeclared or doubly declared
    /// symbols and on ill-sorted terms.
    pub fn emit(&self) -> Result<String> {
        let mut env: HashMap<&str, Sort> = HashMap::new();
        for (name, sort) in &self.declarations {
            if env.insert(name, *sort).is_some() {
                return Err(Error::Emission(format!("{name} declared twice")));
            }
        }
        for (i, a) in self.assertions.iter().enumerate() {
            let mut scope = Scope { globals: &env, bound: Vec::new() };
            match scope.sort_of(a)? {
                Sort::Bool => {}
                Sort::Real => {
                    return Err(Error::Emission(format!("assertion {i} is not Boolean")))
                }
            }
        }
        for name in &self.get_values {
            if !env.contains_key(name.as_str()) {
                return Err(Error::Emission(format!("get-value of undeclared {name}")));
            }
        }

        let mut out = String::new();
        for (k, v) in &self.options {
            let _ = writeln!(out, "(set-option :{k} {v})");
        }
        let _ = writeln!(out, "(set-logic {})", self.logic);
        for (name, sort) in &self.declarations {
            let _ = writeln!(out, "(declare-fun {name} () {})", sort.smt_name());
        }
        for a in &self.assertions {
            out.push_str("(assert ");
            a.write_smt(&mut out);
            out.push_str(")\n");
        }
        out.push_str("(check-sat)\n");
        if !self.get_values.is_empty() {
            let _ = writeln!(out, "(get-value ({}))", self.get_values.join(" "));
        }
        Ok(out)
    }
}

struct Scope<'a> {
    globals: &'a HashMap<&'a str, Sort>,
    bound: Vec<(String, Sort)>,
}

impl Scope<'_> {
    fn sort_of(&mut self, t: &Term) -> Result<Sort> {
        let expect = |s: Sort, want: Sort, what: &str| {
            if s == want {
                Ok(())
            } else {
                Err(Error::Emission(format!("{what} expects {want:?} operands")))
            }
        };
        Ok(match t {
            Term::Real(_) => Sort::Real,
            Term::Bool(_) => Sort::Bool,
            Term::Var(name) => {
                if let Some((_, s)) = self.bound.iter().rev().find(|(b, _)| b == name) {
                    *s
                } else {
                    *self
                        .globals
                        .get(name.as_str())
                        .ok_or_else(|| Error::Emission(format!("undeclared variable {name}")))?
                }
            }
            Term::Add(ts) | Term::Mul(ts) => {
                for x in ts {
                    let s = self.sort_of(x)?;
                    expect(s, Sort::Real, "arithmetic")?;
                }
                Sort::Real
            }
            Term::Neg(x) => {
                let s = self.sort_of(x)?;
                expect(s, Sort::Real, "negation")?;
                Sort::Real
            }
            Term::Ite(c, a, b) => {
                let sc = self.sort_of(c)?;
                expect(sc, Sort::Bool, "ite condition")?;
                let sa = self.sort_of(a)?;
                let sb = self.sort_of(b)?;
                if sa != sb {
                    return Err(Error::Emission("ite branches differ in sort".into()));
                }
                sa
            }
            Term::Cmp(_, a, b) => {
                let sa = self.sort_of(a)?;
                expect(sa, Sort::Real, "comparison")?;
                let sb = self.sort_of(b)?;
                expect(sb, Sort::Real, "comparison")?;
                Sort::Bool
            }
            Term::And(ts) | Term::Or(ts) | Term::AtLeast(ts, _) => {
                for x in ts {
                    let s = self.sort_of(x)?;
                    expect(s, Sort::Bool, "connective")?;
                }
                Sort::Bool
            }
            Term::Not(x) => {
                let s = self.sort_of(x)?;
                expect(s, Sort::Bool, "not")?;
                Sort::Bool
            }
            Term::Implies(a, b) => {
                let sa = self.sort_of(a)?;
                expect(sa, Sort::Bool, "implication")?;
                let sb = self.sort_of(b)?;
                expect(sb, Sort::Bool, "implication")?;
                Sort::Bool
            }
            Term::Forall(vars, body) => {
                let depth = self.bound.len();
                self.bound.extend(vars.iter().map(|v| (v.clone(), Sort::Real)));
                let s = self.sort_of(body);
                self.bound.truncate(depth);
                expect(s?, Sort::Bool, "forall body")?;
                Sort::Bool
            }
            Term::Let(name, value, body) => {
                let sv = self.sort_of(value)?;
                self.bound.push((name.clone(), sv));
                let s = self.sort_of(body);
                self.bound.pop();
                s?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;

    fn contradiction() -> Script {
        let mut s = Script::new("QF_LRA");
        s.declare("x", Sort::Real);
        s.assert(Term::gt(Term::var("x"), Term::real(int(0))));
        s.assert(Term::lt(Term::var("x"), Term::real(int(0))));
        s
    }

    #[test]
    fn emits_deterministically() {
        let s = contradiction();
        let a = s.emit().unwrap();
        assert_eq!(a, s.emit().unwrap());
        assert_eq!(
            a,
            "(set-logic QF_LRA)\n(declare-fun x () Real)\n(assert (> x 0.0))\n(assert (< x 0.0))\n(check-sat)\n"
        );
    }

    #[test]
    fn rejects_undeclared() {
        let mut s = contradiction();
        s.assert(Term::gt(Term::var("y"), Term::real(int(0))));
        assert!(matches!(s.emit(), Err(Error::Emission(_))));
        let mut s = contradiction();
        s.request_value("z");
        assert!(s.emit().is_err());
        let mut s = contradiction();
        s.declare("x", Sort::Real);
        assert!(s.emit().is_err());
    }

    #[test]
    fn rejects_ill_sorted() {
        let mut s = Script::new("QF_LRA");
        s.declare("p", Sort::Bool);
        s.assert(Term::gt(Term::var("p"), Term::real(int(0))));
        assert!(s.emit().is_err());
        let mut s = Script::new("QF_LRA");
        s.declare("x", Sort::Real);
        s.assert(Term::var("x"));
        assert!(s.emit().is_err());
    }

    #[test]
    fn bound_variables_scope() {
        let mut s = Script::new("NRA");
        s.declare("w", Sort::Real);
        let body = Term::gt(Term::var("w"), Term::var("x"));
        s.assert(Term::forall(vec!["x".into()], body));
        assert!(s.emit().is_ok());
        // `x` is not visible outside its quantifier.
        s.assert(Term::gt(Term::var("x"), Term::real(int(0))));
        assert!(s.emit().is_err());
    }
}
