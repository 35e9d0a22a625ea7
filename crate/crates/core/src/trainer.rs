//! Minibatch gradient training with softmax cross-entropy.
//!
//! The softmax lives only inside the loss; the network itself keeps an
//! identity output layer so that its decisions and its SMT encoding agree.

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledPoint;
use crate::error::{Error, Result};
use crate::network::{LayerParams, Network};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn sgd(learning_rate: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate,
            epochs,
            batch_size: 32,
            seed,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(learning_rate: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig { optimizer: Optimizer::Adam, ..Self::sgd(learning_rate, epochs, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Config(format!("learning rate {} outside (0,1)", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::adam(0.01, 200, 0)
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation.
pub fn init_network<T: Scalar + Float>(topology: &[usize], seed: u64) -> Result<Network<T>> {
    let mut net = Network::<T>::zeros(topology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers_mut() {
        let bound = 1.0 / (layer.input_width() as f64).sqrt();
        for v in layer.weights.iter_mut().flatten().chain(layer.biases.iter_mut()) {
            *v = T::from_f64(rng.random_range(-bound..bound));
        }
    }
    Ok(net)
}

pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, stabilised by log-sum-exp.
pub fn cross_entropy<T: Float>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().fold(T::zero(), |acc, &z| acc + (z - max).exp()).ln() + max;
    lse - logits[label]
}

fn point<T: Scalar>(p: &LabeledPoint) -> Vec<T> {
    p.x.iter().map(|v| T::from_f64(*v)).collect()
}

/// Mean cross-entropy over `batch`.
pub fn loss<T: Scalar + Float>(net: &Network<T>, batch: &[LabeledPoint]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = T::zero();
    for p in batch {
        let out = net.forward(&point(p))?;
        total = total + cross_entropy(&out, p.label);
    }
    Ok(total / <T as Scalar>::from_f64(batch.len() as f64))
}

/// Mean loss and its gradient with respect to every parameter, laid out
/// like the network's layers.
pub fn gradients<T: Scalar + Float>(
    net: &Network<T>,
    batch: &[LabeledPoint],
) -> Result<(T, Vec<LayerParams<T>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let layers = net.layers();
    let last = layers.len() - 1;
    let mut grads: Vec<LayerParams<T>> = layers
        .iter()
        .map(|l| LayerParams::zeros(l.input_width(), l.output_width()))
        .collect();
    let scale = T::one() / <T as Scalar>::from_f64(batch.len() as f64);
    let mut total = T::zero();
    for p in batch {
        if p.x.len() != net.input_dim() || p.label >= net.output_dim() {
            return Err(Error::InvalidInput("training point does not fit the network".into()));
        }
        // Forward with cached activations; acts[0] is the input.
        let mut acts = vec![point::<T>(p)];
        let mut pres = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let z: Vec<T> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(row, &b)| row.iter().zip(a).fold(b, |acc, (&w, &x)| acc + w * x))
                .collect();
            let next = if i < last { z.iter().map(|v| Scalar::relu(v)).collect() } else { z.clone() };
            pres.push(z);
            acts.push(next);
        }
        let logits = acts.last().unwrap();
        total = total + cross_entropy(logits, p.label);
        let mut delta: Vec<T> = softmax(logits)
            .into_iter()
            .enumerate()
            .map(|(j, s)| (if j == p.label { s - T::one() } else { s }) * scale)
            .collect();
        for i in (0..layers.len()).rev() {
            let input = &acts[i];
            let g = &mut grads[i];
            for (r, d) in delta.iter().enumerate() {
                g.biases[r] = g.biases[r] + *d;
                for (c, x) in input.iter().enumerate() {
                    g.weights[r][c] = g.weights[r][c] + *d * *x;
                }
            }
            if i > 0 {
                let w = &layers[i].weights;
                delta = (0..layers[i].input_width())
                    .map(|c| {
                        let back = delta.iter().enumerate().fold(T::zero(), |acc, (r, d)| acc + *d * w[r][c]);
                        if pres[i - 1][c] > T::zero() {
                            back
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
            }
        }
    }
    Ok((total * scale, grads))
}

struct AdamState<T> {
    m: Vec<LayerParams<T>>,
    v: Vec<LayerParams<T>>,
    t: i32,
}

fn params_mut<T>(l: &mut LayerParams<T>) -> impl Iterator<Item = &mut T> {
    l.weights.iter_mut().flatten().chain(l.biases.iter_mut())
}

fn params<T>(l: &LayerParams<T>) -> impl Iterator<Item = &T> {
    l.weights.iter().flatten().chain(l.biases.iter())
}

/// Trains a copy of `net0` on `data`. Deterministic given the config seed
/// and the data order.
pub fn train<T: Scalar + Float>(
    net0: &Network<T>,
    data: &[LabeledPoint],
    cfg: &TrainConfig,
) -> Result<Network<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training data".into()));
    }
    if let Some(p) = data.iter().find(|p| p.label >= net0.output_dim()) {
        return Err(Error::InvalidInput(format!("label {} exceeds network outputs", p.label)));
    }
    let mut net = net0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let zeros = || -> Vec<LayerParams<T>> {
        net0.layers().iter().map(|l| LayerParams::zeros(l.input_width(), l.output_width())).collect()
    };
    let mut adam = AdamState { m: zeros(), v: zeros(), t: 0 };
    let lr = <T as Scalar>::from_f64(cfg.learning_rate);
    let (b1, b2, eps) = (
        <T as Scalar>::from_f64(cfg.beta1),
        <T as Scalar>::from_f64(cfg.beta2),
        <T as Scalar>::from_f64(cfg.eps),
    );
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (l, grads) = gradients(&net, &batch)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (layer, g) in net.layers_mut().iter_mut().zip(&grads) {
                        for (w, d) in params_mut(layer).zip(params(g)) {
                            *w = *w - lr * *d;
                        }
                    }
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let c1 = T::one() - b1.powi(adam.t);
                    let c2 = T::one() - b2.powi(adam.t);
                    for (((layer, g), m), v) in
                        net.layers_mut().iter_mut().zip(&grads).zip(&mut adam.m).zip(&mut adam.v)
                    {
                        for (((w, d), m), v) in params_mut(layer).zip(params(g)).zip(params_mut(m)).zip(params_mut(v)) {
                            *m = b1 * *m + (T::one() - b1) * *d;
                            *v = b2 * *v + (T::one() - b2) * *d * *d;
                            let mh = *m / c1;
                            let vh = *v / c2;
                            *w = *w - lr * mh / (vh.sqrt() + eps);
                        }
                    }
                }
            }
        }
        if net.layers().iter().flat_map(params).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_mixture, xor_spec};
    use crate::evaluator::accuracy;
    use crate::network::{WeightFilter, WeightId};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    #[test]
    fn symmetric_logits() {
        assert_relative_eq!(cross_entropy(&[0.0f64, 0.0], 0), 0.693147, epsilon = 1e-6);
    }

    #[test]
    fn softmax_reference_vector() {
        let s = softmax(&[2.0f64, 3.0, 5.0]);
        let rounded: Vec<f64> = s.iter().map(|v| (v * 1000.0).round() / 1000.0).collect();
        assert_eq!(rounded, vec![0.042, 0.114, 0.844]);
    }

    #[test]
    fn loss_shrinks_with_gap() {
        let mut prev = f64::INFINITY;
        for gap in [0.0, 1.0, 5.0, 20.0, 100.0] {
            let l = cross_entropy(&[gap, 0.0f64], 0);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(cross_entropy(&[1000.0f64, -1000.0], 1).is_finite());
    }

    #[test]
    fn memorises_single_point() {
        let net0 = init_network::<f64>(&[2, 4, 2], 5).unwrap();
        let data = vec![LabeledPoint::new(vec![1.0, -2.0], 1)];
        let net = train(&net0, &data, &TrainConfig::sgd(0.1, 200, 1)).unwrap();
        assert_eq!(net.decide(&[1.0, -2.0]).unwrap(), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let d = generate_mixture(&xor_spec(), 200, 10, 3).unwrap();
        let net0 = init_network::<f64>(&[2, 4, 2], 1).unwrap();
        let cfg = TrainConfig::adam(0.01, 5, 9);
        assert_eq!(train(&net0, &d.train, &cfg).unwrap(), train(&net0, &d.train, &cfg).unwrap());
    }

    #[test]
    fn xor_a_reaches_high_accuracy() {
        let d = generate_mixture(&xor_spec(), 2400, 1600, 2024).unwrap();
        let net0 = init_network::<f64>(&[2, 4, 2], 2024).unwrap();
        let net = train(&net0, &d.train, &TrainConfig::sgd(0.1, 10, 2024)).unwrap();
        let acc = accuracy(&net, &d.train).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn rejects_bad_config() {
        let net0 = init_network::<f64>(&[2, 2], 0).unwrap();
        let data = vec![LabeledPoint::new(vec![0.0, 0.0], 0)];
        assert!(train(&net0, &data, &TrainConfig::sgd(1.5, 1, 0)).is_err());
        assert!(train(&net0, &[], &TrainConfig::sgd(0.1, 1, 0)).is_err());
        let bad = vec![LabeledPoint::new(vec![0.0, 0.0], 3)];
        assert!(train(&net0, &bad, &TrainConfig::sgd(0.1, 1, 0)).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut net0 = init_network::<f64>(&[2, 2], 0).unwrap();
        net0 = net0.substitute(&BTreeMap::from([(WeightId::weight(1, 0, 0), 1e308)])).unwrap();
        let data = vec![LabeledPoint::new(vec![1e10, 0.0], 1)];
        assert!(matches!(
            train(&net0, &data, &TrainConfig::sgd(0.5, 3, 0)),
            Err(Error::Divergence { epoch: 0 })
        ));
    }

    /// Central differences against the analytic gradient on the 7-parameter
    /// 2-1-2 topology.
    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-3;
        for seed in 0..20 {
            let net = init_network::<f64>(&[2, 1, 2], seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let batch: Vec<LabeledPoint> = (0..4)
                .map(|_| {
                    LabeledPoint::new(
                        vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                        rng.random_range(0..2),
                    )
                })
                .collect();
            let (_, grads) = gradients(&net, &batch).unwrap();
            for id in net.enumerate_weight_ids(&WeightFilter::default()) {
                let v = *net.get(&id).unwrap();
                let lp = loss(&net.substitute(&BTreeMap::from([(id, v + h)])).unwrap(), &batch).unwrap();
                let lm = loss(&net.substitute(&BTreeMap::from([(id, v - h)])).unwrap(), &batch).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let g = &grads[id.layer - 1];
                let an = match id.kind {
                    crate::network::ParamKind::Weight => g.weights[id.row][id.col],
                    crate::network::ParamKind::Bias => g.biases[id.row],
                };
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4 || (an - fd).abs() <= 1e-8, "seed {seed} {id}: {an} vs {fd}");
            }
        }
    }
}
