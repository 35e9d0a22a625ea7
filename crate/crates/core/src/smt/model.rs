//! Parsing of `get-value` responses into exact values.

use std::collections::BTreeMap;

use num_rational::BigRational;

use crate::error::{Error, Result};
use crate::rational::parse_rational;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(BigRational),
    Bool(bool),
}

impl Value {
    pub fn as_real(&self) -> Option<&BigRational> {
        match self {
            Value::Real(r) => Some(r),
            Value::Bool(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Real(_) => None,
        }
    }
}

pub type Model = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    fn render(&self) -> String {
        match self {
            Sexp::Atom(a) => a.clone(),
            Sexp::List(items) => {
                let inner: Vec<String> = items.iter().map(Sexp::render).collect();
                format!("({})", inner.join(" "))
            }
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(c.to_string());
            }
            '"' => {
                // String literals only occur in error messages; keep them whole.
                cur.push(c);
                for d in chars.by_ref() {
                    cur.push(d);
                    if d == '"' {
                        break;
                    }
                }
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_sexps(text: &str) -> Result<Vec<Sexp>> {
    let tokens = tokenize(text);
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for tok in tokens {
        match tok.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().filter(|_| !stack.is_empty()).ok_or_else(|| {
                    Error::SolverOutput("unbalanced ')'".into())
                })?;
                stack.last_mut().unwrap().push(Sexp::List(done));
            }
            _ => stack.last_mut().unwrap().push(Sexp::Atom(tok)),
        }
    }
    if stack.len() != 1 {
        return Err(Error::SolverOutput("unbalanced '('".into()));
    }
    Ok(stack.pop().unwrap())
}

fn value_of(name: &str, e: &Sexp) -> Result<Value> {
    let unsupported = || Error::UnsupportedValue { name: name.into(), value: e.render() };
    match e {
        Sexp::Atom(a) if a == "true" => Ok(Value::Bool(true)),
        Sexp::Atom(a) if a == "false" => Ok(Value::Bool(false)),
        // Truncated decimals such as `0.3333?` are approximations.
        Sexp::Atom(a) => parse_rational(a).map(Value::Real).ok_or_else(unsupported),
        Sexp::List(items) => {
            let op = match items.first() {
                Some(Sexp::Atom(op)) => op.as_str(),
                _ => return Err(unsupported()),
            };
            let real = |e: &Sexp| match value_of(name, e)? {
                Value::Real(r) => Ok(r),
                Value::Bool(_) => Err(unsupported()),
            };
            match (op, &items[1..]) {
                ("-", [x]) => Ok(Value::Real(-real(x)?)),
                ("-", [x, y]) => Ok(Value::Real(real(x)? - real(y)?)),
                ("/", [x, y]) => {
                    let d = real(y)?;
                    if num_traits::Zero::is_zero(&d) {
                        return Err(unsupported());
                    }
                    Ok(Value::Real(real(x)? / d))
                }
                _ => Err(unsupported()),
            }
        }
    }
}

/// Parses `((name value) ...)` blocks, keeping only the requested names.
/// Every requested name must be present.
pub fn parse_model(output: &str, names: &[String]) -> Result<Model> {
    let mut model = Model::new();
    for top in parse_sexps(output)? {
        let Sexp::List(pairs) = top else { continue };
        for pair in pairs {
            let Sexp::List(kv) = pair else { continue };
            if let [Sexp::Atom(name), value] = kv.as_slice() {
                if names.iter().any(|n| n == name) {
                    model.insert(name.clone(), value_of(name, value)?);
                }
            }
        }
    }
    if let Some(missing) = names.iter().find(|n| !model.contains_key(*n)) {
        return Err(Error::SolverOutput(format!("no value for {missing}")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn names(ns: &[&str]) -> Vec<String> {
        ns.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_grammar_cases() {
        let m = parse_model("((w21 (- (/ 7 2))))", &names(&["w21"])).unwrap();
        assert_eq!(m["w21"], Value::Real(ratio(-7, 2)));
        let m = parse_model("((b 2.5))", &names(&["b"])).unwrap();
        assert_eq!(m["b"], Value::Real(ratio(5, 2)));
        let m = parse_model("((x (/ 7.0 2.0))\n (y (- 3.0))\n (p true))", &names(&["x", "y", "p"])).unwrap();
        assert_eq!(m["x"], Value::Real(ratio(7, 2)));
        assert_eq!(m["y"], Value::Real(int(-3)));
        assert_eq!(m["p"], Value::Bool(true));
    }

    #[test]
    fn rejects_approximations() {
        let out = "((x (root-obj (+ (^ x 2) (- 2)) 1)))";
        assert!(matches!(
            parse_model(out, &names(&["x"])),
            Err(Error::UnsupportedValue { .. })
        ));
        assert!(matches!(
            parse_model("((x 1.4142135623?))", &names(&["x"])),
            Err(Error::UnsupportedValue { .. })
        ));
    }

    #[test]
    fn missing_and_malformed() {
        assert!(parse_model("((x 1.0))", &names(&["y"])).is_err());
        assert!(parse_model("((x 1.0)", &names(&["x"])).is_err());
        assert!(parse_model("((x 1.0)))", &names(&["x"])).is_err());
    }
}
