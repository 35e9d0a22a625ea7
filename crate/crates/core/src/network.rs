//! Feed-forward ReLU networks with individually addressable parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{format_rational, parse_rational};
use crate::scalar::Scalar;

/// Weights and biases of one affine layer. `weights[row][col]` connects
/// input `col` to output `row`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        LayerParams {
            weights: vec![vec![T::zero(); inputs]; outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn output_width(&self) -> usize {
        self.biases.len()
    }

    fn affine(&self, x: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| {
                row.iter()
                    .zip(x)
                    .fold(b.clone(), |acc, (w, xi)| acc + w.clone() * xi.clone())
            })
            .collect()
    }
}

/// A multilayer perceptron: ReLU on every hidden layer, identity on the
/// last one. Values are immutable once built; [`Network::substitute`]
/// returns a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<LayerParams<T>>,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Address of one scalar parameter. `layer` is 1-based; `col` is 0 for
/// biases. The derived ordering is layer-major, weights before biases,
/// row-major, which is also the enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeightId {
    pub layer: usize,
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
}

impl WeightId {
    pub fn weight(layer: usize, row: usize, col: usize) -> Self {
        WeightId { layer, kind: ParamKind::Weight, row, col }
    }

    pub fn bias(layer: usize, row: usize) -> Self {
        WeightId { layer, kind: ParamKind::Bias, row, col: 0 }
    }

    /// SMT-safe symbol, e.g. `w2_0_1` or `b1_3`.
    pub fn symbol(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for WeightId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ParamKind::Weight => write!(f, "w{}_{}_{}", self.layer, self.row, self.col),
            ParamKind::Bias => write!(f, "b{}_{}", self.layer, self.row),
        }
    }
}

impl FromStr for WeightId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad weight id {s:?}"));
        let (kind, rest) = match s.as_bytes().first() {
            Some(b'w') => (ParamKind::Weight, &s[1..]),
            Some(b'b') => (ParamKind::Bias, &s[1..]),
            _ => return Err(bad()),
        };
        let parts: Vec<usize> = rest
            .split('_')
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, parts.as_slice()) {
            (ParamKind::Weight, [l, r, c]) => Ok(WeightId::weight(*l, *r, *c)),
            (ParamKind::Bias, [l, r]) => Ok(WeightId::bias(*l, *r)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for WeightId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for WeightId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The set of parameters freed during repair.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeightSelection(BTreeSet<WeightId>);

impl WeightSelection {
    pub fn new(ids: impl IntoIterator<Item = WeightId>) -> Self {
        WeightSelection(ids.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: &WeightId) -> bool {
        self.0.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightId> {
        self.0.iter()
    }

    pub fn is_subset(&self, other: &WeightSelection) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl fmt::Display for WeightSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(WeightId::to_string).collect();
        write!(f, "{}", names.join("+"))
    }
}

impl std::str::FromStr for WeightSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.split('+').filter(|p| !p.is_empty()).map(str::parse).collect()
    }
}

impl FromIterator<WeightId> for WeightSelection {
    fn from_iter<I: IntoIterator<Item = WeightId>>(iter: I) -> Self {
        WeightSelection::new(iter)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerFilter {
    #[default]
    Any,
    /// 1-based layer index.
    Index(usize),
    Last,
}

/// Optional restriction of [`Network::enumerate_weight_ids`], e.g. last
/// layer only, or biases only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightFilter {
    #[serde(default)]
    pub layer: LayerFilter,
    #[serde(default)]
    pub kind: Option<ParamKind>,
}

impl WeightFilter {
    pub fn last_layer() -> Self {
        WeightFilter { layer: LayerFilter::Last, kind: None }
    }

    pub fn kind(kind: ParamKind) -> Self {
        WeightFilter { layer: LayerFilter::Any, kind: Some(kind) }
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<LayerParams<T>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidInput("network needs at least one layer".into()))?;
        let input_dim = first.input_width();
        if input_dim == 0 {
            return Err(Error::InvalidInput("input width must be positive".into()));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.biases.len() || layer.biases.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "layer {}: {} weight rows but {} biases",
                    i + 1,
                    layer.weights.len(),
                    layer.biases.len()
                )));
            }
            if layer.weights.iter().any(|row| row.len() != width) {
                return Err(Error::InvalidInput(format!(
                    "layer {}: expected {width} inputs per row",
                    i + 1
                )));
            }
            let finite = layer.weights.iter().flatten().chain(&layer.biases).all(T::is_finite);
            if !finite {
                return Err(Error::InvalidInput(format!("layer {}: non-finite parameter", i + 1)));
            }
            width = layer.output_width();
        }
        Ok(Network { layers, input_dim, output_dim: width })
    }

    /// All-zero network with the given widths, e.g. `[2, 4, 2]`.
    pub fn zeros(topology: &[usize]) -> Result<Self> {
        if topology.len() < 2 || topology.contains(&0) {
            return Err(Error::InvalidInput(format!("bad topology {topology:?}")));
        }
        Network::new(
            topology
                .windows(2)
                .map(|w| LayerParams::zeros(w[0], w[1]))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn topology(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(LayerParams::output_width))
            .collect()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "expected {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if !x.iter().all(T::is_finite) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> Vec<T> {
        let last = self.layers.len() - 1;
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            act = layer.affine(&act);
            if i < last {
                act.iter_mut().for_each(|v| *v = v.relu());
            }
        }
        act
    }

    pub fn decide(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.output_width() * (l.input_width() + 1))
            .sum()
    }

    pub fn check_id(&self, id: &WeightId) -> Result<()> {
        let ok = id
            .layer
            .checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .is_some_and(|l| match id.kind {
                ParamKind::Weight => id.row < l.output_width() && id.col < l.input_width(),
                ParamKind::Bias => id.row < l.output_width() && id.col == 0,
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Address(*id))
        }
    }

    pub fn get(&self, id: &WeightId) -> Result<&T> {
        self.check_id(id)?;
        let layer = &self.layers[id.layer - 1];
        Ok(match id.kind {
            ParamKind::Weight => &layer.weights[id.row][id.col],
            ParamKind::Bias => &layer.biases[id.row],
        })
    }

    /// Copy of `self` with the assigned parameters replaced.
    pub fn substitute(&self, assignment: &BTreeMap<WeightId, T>) -> Result<Network<T>> {
        let mut out = self.clone();
        for (id, value) in assignment {
            self.check_id(id)?;
            if !value.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite value for {id}")));
            }
            let layer = &mut out.layers[id.layer - 1];
            match id.kind {
                ParamKind::Weight => layer.weights[id.row][id.col] = value.clone(),
                ParamKind::Bias => layer.biases[id.row] = value.clone(),
            }
        }
        Ok(out)
    }

    pub fn enumerate_weight_ids(&self, filter: &WeightFilter) -> Vec<WeightId> {
        let n_layers = self.layers.len();
        let mut ids = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let index = i + 1;
            let keep_layer = match filter.layer {
                LayerFilter::Any => true,
                LayerFilter::Index(l) => l == index,
                LayerFilter::Last => index == n_layers,
            };
            if !keep_layer {
                continue;
            }
            if filter.kind != Some(ParamKind::Bias) {
                for row in 0..layer.output_width() {
                    for col in 0..layer.input_width() {
                        ids.push(WeightId::weight(index, row, col));
                    }
                }
            }
            if filter.kind != Some(ParamKind::Weight) {
                ids.extend((0..layer.output_width()).map(|row| WeightId::bias(index, row)));
            }
        }
        ids
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.iter().map(|r| r.iter().map(&f).collect()).collect(),
                    biases: l.biases.iter().map(&f).collect(),
                })
                .collect(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }

    pub fn to_exact(&self) -> Network<BigRational> {
        // Construction rejects non-finite values, so the conversion is total.
        self.map(|v| v.to_exact().expect("finite parameter"))
    }

    pub fn to_f64(&self) -> Network<f64> {
        self.map(Scalar::to_f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDoc {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weights: l
                        .weights
                        .iter()
                        .map(|r| r.iter().map(fmt_param).collect())
                        .collect(),
                    biases: l.biases.iter().map(fmt_param).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let exact = ExactNetwork::from_json_exact(text)?;
        Ok(exact.map(T::from_exact))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub type ExactNetwork = Network<BigRational>;

impl ExactNetwork {
    fn from_json_exact(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        let parse = |s: &String| {
            parse_rational(s).ok_or_else(|| Error::InvalidInput(format!("bad real {s:?}")))
        };
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                Ok(LayerParams {
                    weights: l
                        .weights
                        .iter()
                        .map(|r| r.iter().map(parse).collect::<Result<_>>())
                        .collect::<Result<_>>()?,
                    biases: l.biases.iter().map(parse).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network::new(layers)?;
        if net.input_dim != doc.input_dim || net.output_dim != doc.output_dim {
            return Err(Error::InvalidInput(format!(
                "declared dims {}→{} disagree with layers {}→{}",
                doc.input_dim, doc.output_dim, net.input_dim, net.output_dim
            )));
        }
        Ok(net)
    }

    /// Rounds every parameter to `decimals` fractional digits.
    pub fn rounded(&self, decimals: u32) -> ExactNetwork {
        self.map(|v| crate::rational::round_to_decimals(v, decimals))
    }
}

fn fmt_param<T: Scalar>(v: &T) -> String {
    format_rational(&v.to_exact().expect("finite parameter"))
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<String>>,
    biases: Vec<String>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
