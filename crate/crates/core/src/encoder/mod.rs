//! Compilation of robustness properties, verification queries and repair
//! queries into solver scripts.
//!
//! A repair query has the shape
//!
//! ```text
//! exists free weights .
//!     forall x . ball(x) => class(net(x))          (one block per property)
//!   and  b_i => class(net(p_i))                    (one per soft constraint)
//!   and  sum(ite(b_i, 1, 0)) >= k
//! ```
//!
//! Non-free parameters are inlined as exact constants, so only the neurons
//! downstream of a free parameter stay symbolic.

pub mod heuristics;

use std::fmt;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ExactNetwork, Network, WeightSelection};
use crate::scalar::Scalar;
use crate::smt::{run_solver_labeled, Script, SolverConfig, SolverVerdict, Sort, Status, Term};

pub use heuristics::{
    heuristic_grid, heuristic_samples, heuristic_voronoi, GridConfig, Heuristic, SoftConstraint,
    SoftConstraintSet, VoronoiConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(alias = "l1")]
    L1,
    #[serde(alias = "LINF", alias = "linf", alias = "Linf")]
    Linf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "L1",
            Norm::Linf => "Linf",
        })
    }
}

/// Every point within `delta` of `center` (in `norm`) must be decided as
/// `target_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessProperty {
    pub name: String,
    #[serde(with = "real_vec")]
    pub center: Vec<BigRational>,
    #[serde(with = "real")]
    pub delta: BigRational,
    pub norm: Norm,
    pub target_class: usize,
}

impl RobustnessProperty {
    pub fn new(name: &str, center: &[f64], delta: f64, norm: Norm, target_class: usize) -> Result<Self> {
        let conv = |v: f64| crate::rational::from_f64_shortest(v);
        let prop = RobustnessProperty {
            name: name.into(),
            center: center.iter().map(|v| conv(*v)).collect::<Result<_>>()?,
            delta: conv(delta)?,
            norm,
            target_class,
        };
        if !prop.delta.is_positive() {
            return Err(Error::InvalidInput(format!("{name}: delta must be positive")));
        }
        Ok(prop)
    }

    pub fn validate_for<T: Scalar>(&self, net: &Network<T>) -> Result<()> {
        if !self.delta.is_positive() {
            return Err(Error::InvalidInput(format!("{}: delta must be positive", self.name)));
        }
        if self.center.len() != net.input_dim() {
            return Err(Error::InvalidInput(format!(
                "{}: center has {} coordinates, network takes {}",
                self.name,
                self.center.len(),
                net.input_dim()
            )));
        }
        if self.target_class >= net.output_dim() {
            return Err(Error::InvalidInput(format!(
                "{}: target class {} but only {} outputs",
                self.name,
                self.target_class,
                net.output_dim()
            )));
        }
        Ok(())
    }

    /// Exact membership test for the closed ball.
    pub fn contains(&self, x: &[BigRational]) -> bool {
        if x.len() != self.center.len() {
            return false;
        }
        let diffs = x.iter().zip(&self.center).map(|(a, c)| (a - c).abs());
        match self.norm {
            Norm::L1 => diffs.fold(BigRational::zero(), |acc, d| acc + d) <= self.delta,
            Norm::Linf => diffs.into_iter().all(|d| d <= self.delta),
        }
    }

    pub fn contains_f64(&self, x: &[f64]) -> bool {
        let c: Vec<f64> = self.center.iter().map(crate::rational::to_f64).collect();
        let d = crate::rational::to_f64(&self.delta);
        let diffs = x.iter().zip(&c).map(|(a, c)| (a - c).abs());
        match self.norm {
            Norm::L1 => diffs.sum::<f64>() <= d,
            Norm::Linf => diffs.fold(0.0, f64::max) <= d,
        }
    }

    /// Axis-aligned bounding box of the ball.
    pub fn bounding_box(&self) -> (Vec<BigRational>, Vec<BigRational>) {
        (
            self.center.iter().map(|c| c - &self.delta).collect(),
            self.center.iter().map(|c| c + &self.delta).collect(),
        )
    }
}

pub fn load_properties(path: &std::path::Path) -> Result<Vec<RobustnessProperty>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_properties(path: &std::path::Path, props: &[RobustnessProperty]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(props)? + "\n")?;
    Ok(())
}

/// Reals in property files may be JSON numbers or exact strings (`"7/2"`).
mod real {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(super) enum Raw {
        Num(f64),
        Text(String),
    }

    pub(super) fn from_raw<E: serde::de::Error>(raw: Raw) -> Result<BigRational, E> {
        match raw {
            Raw::Num(v) => crate::rational::from_f64_shortest(v).map_err(E::custom),
            Raw::Text(s) => crate::rational::parse_rational(&s)
                .ok_or_else(|| E::custom(format!("bad real {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::rational::format_rational(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        from_raw(Raw::deserialize(d)?)
    }
}

mod real_vec {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(crate::rational::format_rational))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        Vec::<super::real::Raw>::deserialize(d)?
            .into_iter()
            .map(super::real::from_raw)
            .collect()
    }
}

/// The ball as linear inequalities: 2^d sign patterns for L1, 2d bounds for
/// Linf. No absolute values or disjunctions.
pub fn ball_predicate(prop: &RobustnessProperty, inputs: &[Term]) -> Term {
    let diffs: Vec<Term> = inputs
        .iter()
        .zip(&prop.center)
        .map(|(x, c)| Term::sub(x.clone(), Term::real(c.clone())))
        .collect();
    let delta = Term::real(prop.delta.clone());
    match prop.norm {
        Norm::L1 => {
            let d = diffs.len();
            let clauses = (0..1usize << d)
                .map(|mask| {
                    let sum = diffs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| if mask >> i & 1 == 1 { Term::neg(t.clone()) } else { t.clone() })
                        .collect();
                    Term::le(Term::add(sum), delta.clone())
                })
                .collect();
            Term::and(clauses)
        }
        Norm::Linf => Term::and(
            inputs
                .iter()
                .zip(&prop.center)
                .flat_map(|(x, c)| {
                    [
                        Term::ge(x.clone(), Term::real(c - &prop.delta)),
                        Term::le(x.clone(), Term::real(c + &prop.delta)),
                    ]
                })
                .collect(),
        ),
    }
}

/// `out_target > out_j` for every other output.
pub fn class_predicate(target: usize, outputs: &[Term]) -> Term {
    Term::and(
        outputs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(_, o)| Term::gt(outputs[target].clone(), o.clone()))
            .collect(),
    )
}

/// Exact complement of "argmax with lowest-index ties equals `target`":
/// some lower-indexed output reaches the target's value, or some
/// higher-indexed output exceeds it.
pub fn misclassified_predicate(target: usize, outputs: &[Term]) -> Term {
    Term::or(
        outputs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(j, o)| {
                if j < target {
                    Term::ge(o.clone(), outputs[target].clone())
                } else {
                    Term::gt(o.clone(), outputs[target].clone())
                }
            })
            .collect(),
    )
}

/// Exact evaluation of [`class_predicate`] on concrete outputs.
pub fn strictly_classifies(target: usize, outputs: &[BigRational]) -> bool {
    outputs.iter().enumerate().all(|(j, o)| j == target || outputs[target] > *o)
}

#[derive(Debug, Clone)]
pub struct EncodedNetwork {
    /// Affine terms over the inputs and the bound hidden neurons.
    pub outputs: Vec<Term>,
    /// Free parameters, declared as reals.
    pub declarations: Vec<(String, Sort)>,
    /// Symbolic hidden activations `n{layer}_{row}`, in dependency order.
    pub bindings: Vec<(String, Term)>,
}

impl EncodedNetwork {
    /// Puts `formula`, which may mention the outputs, in scope of the
    /// neuron bindings.
    pub fn wrap(&self, formula: Term) -> Term {
        Term::let_in(self.bindings.clone(), formula)
    }
}

/// Symbolic forward pass over `inputs`. Free parameters become variables,
/// all others exact constants; hidden neurons are `ite(pre > 0, pre, 0)`,
/// each bound once by name unless it folds to a constant.
pub fn encode_network<T: Scalar>(
    net: &Network<T>,
    free: &WeightSelection,
    inputs: &[Term],
) -> Result<EncodedNetwork> {
    if inputs.len() != net.input_dim() {
        return Err(Error::InvalidInput(format!(
            "network takes {} inputs, got {}",
            net.input_dim(),
            inputs.len()
        )));
    }
    for id in free.iter() {
        net.check_id(id)?;
    }
    let param = |id: crate::network::WeightId, v: &T| {
        if free.contains(&id) {
            Term::var(id.symbol())
        } else {
            Term::real(v.to_exact().expect("finite parameter"))
        }
    };
    let last = net.layers().len() - 1;
    let mut act: Vec<Term> = inputs.to_vec();
    let mut bindings = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let l = i + 1;
        act = layer
            .weights
            .iter()
            .zip(&layer.biases)
            .enumerate()
            .map(|(row, (ws, b))| {
                let mut terms: Vec<Term> = ws
                    .iter()
                    .enumerate()
                    .map(|(col, w)| {
                        Term::mul(param(crate::network::WeightId::weight(l, row, col), w), act[col].clone())
                    })
                    .collect();
                terms.push(param(crate::network::WeightId::bias(l, row), b));
                let pre = Term::add(terms);
                if i == last {
                    return pre;
                }
                match Term::relu(pre) {
                    t @ Term::Real(_) => t,
                    t => {
                        let name = format!("n{l}_{row}");
                        bindings.push((name.clone(), t));
                        Term::var(name)
                    }
                }
            })
            .collect();
    }
    Ok(EncodedNetwork {
        outputs: act,
        declarations: free.iter().map(|id| (id.symbol(), Sort::Real)).collect(),
        bindings,
    })
}

fn input_names(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}{i}")).collect()
}

/// Query whose model gives the network's outputs at `x`: inputs and
/// outputs are declared, `in_i = x_i` and `out_j = f_j(in)` asserted.
pub fn forward_query<T: Scalar>(net: &Network<T>, x: &[BigRational]) -> Result<Script> {
    let names = input_names("in", net.input_dim());
    let inputs: Vec<Term> = names.iter().map(Term::var).collect();
    let enc = encode_network(net, &WeightSelection::default(), &inputs)?;
    let mut s = Script::new("QF_LRA");
    for n in &names {
        s.declare(n.clone(), Sort::Real);
    }
    for (n, v) in names.iter().zip(x) {
        s.assert(Term::eq(Term::var(n), Term::real(v.clone())));
    }
    for (j, o) in enc.outputs.iter().enumerate() {
        let name = format!("out{j}");
        s.declare(name.clone(), Sort::Real);
        s.assert(enc.wrap(Term::eq(Term::var(&name), o.clone())));
        s.request_value(name);
    }
    Ok(s)
}

/// Query that is SAT exactly when some point of the ball is decided
/// differently from the target class.
pub fn verification_script<T: Scalar>(net: &Network<T>, prop: &RobustnessProperty) -> Result<Script> {
    prop.validate_for(net)?;
    let names = input_names("x", net.input_dim());
    let inputs: Vec<Term> = names.iter().map(Term::var).collect();
    let enc = encode_network(net, &WeightSelection::default(), &inputs)?;
    let mut s = Script::new("QF_LRA");
    for n in &names {
        s.declare(n.clone(), Sort::Real);
    }
    s.assert(ball_predicate(prop, &inputs));
    s.assert(enc.wrap(misclassified_predicate(prop.target_class, &enc.outputs)));
    for n in names {
        s.request_value(n);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Holds,
    /// A replayed counterexample: inside the ball and misclassified.
    Violated(Vec<BigRational>),
    Inconclusive(Status),
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub verdict: Verdict,
    pub solver: SolverVerdict,
}

impl Verification {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

/// Checks `prop` on a fixed network. Counterexamples are replayed in exact
/// arithmetic; one that fails replay is reported as inconclusive.
pub fn verify_property<T: Scalar>(
    net: &Network<T>,
    prop: &RobustnessProperty,
    solver: &SolverConfig,
) -> Result<Verification> {
    let script = verification_script(net, prop)?;
    let label = format!("verify-{}", sanitize(&prop.name));
    let verdict = run_solver_labeled(&script, solver, &label);
    let outcome = match verdict.status {
        Status::Unsat => Verdict::Holds,
        Status::Sat => {
            let model = verdict.model.as_ref().expect("SAT verdicts carry the requested model");
            let cex: Vec<BigRational> = script
                .get_values
                .iter()
                .map(|n| model[n].as_real().cloned())
                .collect::<Option<_>>()
                .unwrap_or_default();
            if replays_as_violation(&net.to_exact(), prop, &cex) {
                Verdict::Violated(cex)
            } else {
                log::error!("counterexample for {} failed replay: {cex:?}", prop.name);
                Verdict::Inconclusive(Status::Error)
            }
        }
        other => Verdict::Inconclusive(other),
    };
    Ok(Verification { verdict: outcome, solver: verdict })
}

/// True when `x` is inside the ball and the network decides it as some
/// class other than the target.
pub fn replays_as_violation(net: &ExactNetwork, prop: &RobustnessProperty, x: &[BigRational]) -> bool {
    x.len() == net.input_dim()
        && prop.contains(x)
        && net.decide(x).is_ok_and(|d| d != prop.target_class)
}

pub(crate) fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Repair query for `free` under `props`, with soft constraints from
/// `soft` at its current threshold.
pub fn encode_repair<T: Scalar>(
    net: &Network<T>,
    free: &WeightSelection,
    props: &[RobustnessProperty],
    soft: Option<&SoftConstraintSet>,
) -> Result<Script> {
    if free.is_empty() {
        return Err(Error::Config("repair needs at least one free parameter".into()));
    }
    let mut s = Script::new("NRA");
    let probe = encode_network(net, free, &vec![Term::real(BigRational::zero()); net.input_dim()])?;
    for (name, sort) in probe.declarations {
        s.declare(name, sort);
    }
    for (k, prop) in props.iter().enumerate() {
        prop.validate_for(net)?;
        let names = input_names(&format!("p{k}_x"), net.input_dim());
        let inputs: Vec<Term> = names.iter().map(Term::var).collect();
        let enc = encode_network(net, free, &inputs)?;
        let body = enc.wrap(Term::implies(
            ball_predicate(prop, &inputs),
            class_predicate(prop.target_class, &enc.outputs),
        ));
        s.assert(Term::forall(names, body));
    }
    if let Some(soft) = soft {
        soft.validate()?;
        let mut indicators = Vec::with_capacity(soft.constraints.len());
        for c in &soft.constraints {
            s.declare(c.indicator.clone(), Sort::Bool);
            s.assert(Term::implies(Term::var(&c.indicator), c.body(net, free)?));
            indicators.push(Term::var(&c.indicator));
        }
        s.assert(Term::at_least(indicators, soft.threshold));
    }
    for id in free.iter() {
        s.request_value(id.symbol());
    }
    Ok(s)
}
