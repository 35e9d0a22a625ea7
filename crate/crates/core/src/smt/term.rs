//! Formula terms over reals and Booleans.
//!
//! The smart constructors (`add`, `mul`, `ite`, `cmp`, ...) fold constant
//! subterms exactly, so a network whose inputs and most parameters are known
//! collapses to a small polynomial in the few free parameters.

use std::fmt::Write;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::rational::{decimal_digits, format_rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sort {
    Real,
    Bool,
}

impl Sort {
    pub fn smt_name(self) -> &'static str {
        match self {
            Sort::Real => "Real",
            Sort::Bool => "Bool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Gt,
    Ge,
    Eq,
    Lt,
    Le,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        }
    }

    fn holds(self, a: &BigRational, b: &BigRational) -> bool {
        match self {
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Real(BigRational),
    Bool(bool),
    Var(String),
    Add(Vec<Term>),
    Neg(Box<Term>),
    Mul(Vec<Term>),
    Ite(Box<Term>, Box<Term>, Box<Term>),
    Cmp(CmpOp, Box<Term>, Box<Term>),
    And(Vec<Term>),
    Or(Vec<Term>),
    Not(Box<Term>),
    Implies(Box<Term>, Box<Term>),
    /// Universal quantifier over real-sorted bound variables.
    Forall(Vec<String>, Box<Term>),
    /// `sum(ite(b_i, 1, 0)) >= k` over Boolean terms.
    AtLeast(Vec<Term>, usize),
    /// `(let ((name value)) body)`.
    Let(String, Box<Term>, Box<Term>),
}

impl Term {
    pub fn real(r: BigRational) -> Term {
        Term::Real(r)
    }

    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn as_real(&self) -> Option<&BigRational> {
        match self {
            Term::Real(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Term::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn add(terms: Vec<Term>) -> Term {
        let mut constant = BigRational::zero();
        let mut rest = Vec::new();
        for t in terms {
            match t {
                Term::Real(r) => constant += r,
                Term::Add(inner) => {
                    for u in inner {
                        match u {
                            Term::Real(r) => constant += r,
                            other => rest.push(other),
                        }
                    }
                }
                other => rest.push(other),
            }
        }
        if rest.is_empty() {
            return Term::Real(constant);
        }
        if !constant.is_zero() {
            rest.push(Term::Real(constant));
        }
        if rest.len() == 1 {
            rest.pop().unwrap()
        } else {
            Term::Add(rest)
        }
    }

    pub fn sub(a: Term, b: Term) -> Term {
        Term::add(vec![a, Term::neg(b)])
    }

    pub fn neg(t: Term) -> Term {
        match t {
            Term::Real(r) => Term::Real(-r),
            Term::Neg(inner) => *inner,
            other => Term::Neg(Box::new(other)),
        }
    }

    pub fn mul(a: Term, b: Term) -> Term {
        match (a, b) {
            (Term::Real(x), Term::Real(y)) => Term::Real(x * y),
            (Term::Real(c), t) | (t, Term::Real(c)) => {
                if c.is_zero() {
                    Term::Real(c)
                } else if c.is_one() {
                    t
                } else if (-&c).is_one() {
                    Term::neg(t)
                } else {
                    Term::Mul(vec![Term::Real(c), t])
                }
            }
            (a, b) => Term::Mul(vec![a, b]),
        }
    }

    pub fn ite(cond: Term, then: Term, otherwise: Term) -> Term {
        match cond {
            Term::Bool(true) => then,
            Term::Bool(false) => otherwise,
            c => {
                if then == otherwise {
                    then
                } else {
                    Term::Ite(Box::new(c), Box::new(then), Box::new(otherwise))
                }
            }
        }
    }

    /// `max(0, t)` as `ite(t > 0, t, 0)`.
    pub fn relu(t: Term) -> Term {
        match t {
            Term::Real(r) => Term::Real(if r.is_positive() { r } else { BigRational::zero() }),
            t => Term::ite(
                Term::cmp(CmpOp::Gt, t.clone(), Term::Real(BigRational::zero())),
                t,
                Term::Real(BigRational::zero()),
            ),
        }
    }

    pub fn cmp(op: CmpOp, a: Term, b: Term) -> Term {
        match (&a, &b) {
            (Term::Real(x), Term::Real(y)) => Term::Bool(op.holds(x, y)),
            _ => Term::Cmp(op, Box::new(a), Box::new(b)),
        }
    }

    pub fn gt(a: Term, b: Term) -> Term {
        Term::cmp(CmpOp::Gt, a, b)
    }

    pub fn ge(a: Term, b: Term) -> Term {
        Term::cmp(CmpOp::Ge, a, b)
    }

    pub fn le(a: Term, b: Term) -> Term {
        Term::cmp(CmpOp::Le, a, b)
    }

    pub fn lt(a: Term, b: Term) -> Term {
        Term::cmp(CmpOp::Lt, a, b)
    }

    pub fn eq(a: Term, b: Term) -> Term {
        Term::cmp(CmpOp::Eq, a, b)
    }

    pub fn and(terms: Vec<Term>) -> Term {
        let mut rest = Vec::new();
        for t in terms {
            match t {
                Term::Bool(true) => {}
                Term::Bool(false) => return Term::Bool(false),
                Term::And(inner) => rest.extend(inner),
                other => rest.push(other),
            }
        }
        match rest.len() {
            0 => Term::Bool(true),
            1 => rest.pop().unwrap(),
            _ => Term::And(rest),
        }
    }

    pub fn or(terms: Vec<Term>) -> Term {
        let mut rest = Vec::new();
        for t in terms {
            match t {
                Term::Bool(false) => {}
                Term::Bool(true) => return Term::Bool(true),
                Term::Or(inner) => rest.extend(inner),
                other => rest.push(other),
            }
        }
        match rest.len() {
            0 => Term::Bool(false),
            1 => rest.pop().unwrap(),
            _ => Term::Or(rest),
        }
    }

    pub fn not(t: Term) -> Term {
        match t {
            Term::Bool(b) => Term::Bool(!b),
            Term::Not(inner) => *inner,
            other => Term::Not(Box::new(other)),
        }
    }

    pub fn implies(a: Term, b: Term) -> Term {
        match (&a, &b) {
            (Term::Bool(false), _) | (_, Term::Bool(true)) => Term::Bool(true),
            (Term::Bool(true), _) => b,
            _ => Term::Implies(Box::new(a), Box::new(b)),
        }
    }

    pub fn forall(vars: Vec<String>, body: Term) -> Term {
        match body {
            Term::Bool(b) => Term::Bool(b),
            body => Term::Forall(vars, Box::new(body)),
        }
    }

    /// Wraps `body` in one `let` per binding, outermost first, so later
    /// bindings may refer to earlier ones.
    pub fn let_in(bindings: Vec<(String, Term)>, body: Term) -> Term {
        bindings
            .into_iter()
            .rev()
            .fold(body, |acc, (name, value)| match acc {
                Term::Bool(b) => Term::Bool(b),
                acc => Term::Let(name, Box::new(value), Box::new(acc)),
            })
    }

    pub fn at_least(indicators: Vec<Term>, k: usize) -> Term {
        Term::AtLeast(indicators, k)
    }

    /// Number of `ite` nodes in the tree.
    pub fn ite_count(&self) -> usize {
        let own = usize::from(matches!(self, Term::Ite(..)));
        own + self.children().map(Term::ite_count).sum::<usize>()
    }

    pub fn children(&self) -> Box<dyn Iterator<Item = &Term> + '_> {
        match self {
            Term::Real(_) | Term::Bool(_) | Term::Var(_) => Box::new(std::iter::empty()),
            Term::Add(ts) | Term::Mul(ts) | Term::And(ts) | Term::Or(ts) | Term::AtLeast(ts, _) => {
                Box::new(ts.iter())
            }
            Term::Neg(t) | Term::Not(t) | Term::Forall(_, t) => Box::new(std::iter::once(&**t)),
            Term::Ite(a, b, c) => Box::new([&**a, &**b, &**c].into_iter()),
            Term::Cmp(_, a, b) | Term::Implies(a, b) | Term::Let(_, a, b) => {
                Box::new([&**a, &**b].into_iter())
            }
        }
    }

    /// Appends SMT-LIB2 text for `self` to `out`.
    pub fn write_smt(&self, out: &mut String) {
        match self {
            Term::Real(r) => write_real(r, out),
            Term::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Term::Var(name) => out.push_str(name),
            Term::Add(ts) => write_app(out, "+", ts),
            Term::Mul(ts) => write_app(out, "*", ts),
            Term::And(ts) => write_app(out, "and", ts),
            Term::Or(ts) => write_app(out, "or", ts),
            Term::Neg(t) => write_app(out, "-", std::slice::from_ref(&**t)),
            Term::Not(t) => write_app(out, "not", std::slice::from_ref(&**t)),
            Term::Ite(c, t, e) => {
                out.push_str("(ite ");
                c.write_smt(out);
                out.push(' ');
                t.write_smt(out);
                out.push(' ');
                e.write_smt(out);
                out.push(')');
            }
            Term::Cmp(op, a, b) => {
                let _ = write!(out, "({} ", op.symbol());
                a.write_smt(out);
                out.push(' ');
                b.write_smt(out);
                out.push(')');
            }
            Term::Implies(a, b) => {
                out.push_str("(=> ");
                a.write_smt(out);
                out.push(' ');
                b.write_smt(out);
                out.push(')');
            }
            Term::Forall(vars, body) => {
                out.push_str("(forall (");
                for (i, v) in vars.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "({v} Real)");
                }
                out.push_str(") ");
                body.write_smt(out);
                out.push(')');
            }
            Term::Let(name, value, body) => {
                let _ = write!(out, "(let (({name} ");
                value.write_smt(out);
                out.push_str(")) ");
                body.write_smt(out);
                out.push(')');
            }
            Term::AtLeast(ts, k) => {
                out.push_str("(>= (+");
                for t in ts {
                    out.push_str(" (ite ");
                    t.write_smt(out);
                    out.push_str(" 1.0 0.0)");
                }
                // A single-summand `+` is not valid SMT-LIB.
                if ts.len() < 2 {
                    out.push_str(" 0.0");
                }
                let _ = write!(out, ") {k}.0)");
            }
        }
    }

    pub fn to_smt(&self) -> String {
        let mut s = String::new();
        self.write_smt(&mut s);
        s
    }
}

fn write_app(out: &mut String, op: &str, args: &[Term]) {
    out.push('(');
    out.push_str(op);
    for a in args {
        out.push(' ');
        a.write_smt(out);
    }
    out.push(')');
}

/// Real literal: `2.5`, `(- 2.5)`, `3.0`, or `(/ 1.0 3.0)`.
pub fn write_real(r: &BigRational, out: &mut String) {
    if r.is_negative() {
        out.push_str("(- ");
        write_real(&-r, out);
        out.push(')');
        return;
    }
    match decimal_digits(r) {
        Some(_) => {
            let s = format_rational(r);
            out.push_str(&s);
            if !s.contains('.') {
                out.push_str(".0");
            }
        }
        None => {
            let _ = write!(out, "(/ {}.0 {}.0)", r.numer(), r.denom());
        }
    }
}
