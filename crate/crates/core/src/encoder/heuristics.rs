//! Similarity heuristics: soft constraints that pin the repaired network to
//! the original decisions at selected points.

use std::fmt;

use num_rational::BigRational;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_predicate, encode_network, strictly_classifies};
use crate::datagen::{decide_at, round_coord, LabeledPoint};
use crate::error::{Error, Result};
use crate::geometry::{dedupe_points, grid_cells, voronoi_cells, Rect, VoronoiCell};
use crate::network::{ExactNetwork, Network, WeightSelection};
use crate::rational::from_f64_shortest;
use crate::scalar::Scalar;
use crate::smt::Term;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Samples,
    Grid,
    Voronoi,
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heuristic::Samples => "SAMPLES",
            Heuristic::Grid => "GRID",
            Heuristic::Voronoi => "VORONOI",
        })
    }
}

impl std::str::FromStr for Heuristic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "samples" => Ok(Heuristic::Samples),
            "grid" => Ok(Heuristic::Grid),
            "voronoi" => Ok(Heuristic::Voronoi),
            _ => Err(Error::Config(format!("unknown heuristic {s:?}"))),
        }
    }
}

/// One indicator: when true, the network must strictly classify every
/// listed point as `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftConstraint {
    pub indicator: String,
    pub points: Vec<Vec<BigRational>>,
    pub label: usize,
}

impl SoftConstraint {
    pub fn body<T: Scalar>(&self, net: &Network<T>, free: &WeightSelection) -> Result<Term> {
        let parts = self
            .points
            .iter()
            .map(|p| {
                let inputs: Vec<Term> = p.iter().cloned().map(Term::real).collect();
                let enc = encode_network(net, free, &inputs)?;
                Ok(enc.wrap(class_predicate(self.label, &enc.outputs)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Term::and(parts))
    }

    /// Concrete evaluation of the body on a fixed network.
    pub fn holds(&self, net: &ExactNetwork) -> bool {
        self.points.iter().all(|p| {
            net.forward(p).is_ok_and(|out| strictly_classifies(self.label, &out))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftConstraintSet {
    pub constraints: Vec<SoftConstraint>,
    /// At least this many indicators must hold.
    pub threshold: usize,
    pub heuristic: Heuristic,
    /// Configuration snapshot the set was built from.
    pub provenance: serde_json::Value,
}

impl SoftConstraintSet {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 || self.threshold > self.constraints.len() {
            return Err(Error::Config(format!(
                "threshold {} outside 1..={}",
                self.threshold,
                self.constraints.len()
            )));
        }
        Ok(())
    }

    pub fn with_threshold(&self, threshold: usize) -> Result<SoftConstraintSet> {
        let mut out = self.clone();
        out.threshold = threshold;
        out.validate()?;
        Ok(out)
    }

    /// Number of constraints whose body holds on `net`.
    pub fn satisfied_count(&self, net: &ExactNetwork) -> usize {
        self.constraints.iter().filter(|c| c.holds(net)).count()
    }
}

fn indicator(i: usize) -> String {
    format!("s{i}")
}

fn exact_point(x: &[f64]) -> Result<Vec<BigRational>> {
    x.iter().map(|v| from_f64_shortest(*v)).collect()
}

/// `m` training points chosen uniformly without replacement; each must keep
/// its label.
pub fn heuristic_samples(data: &[LabeledPoint], m: usize, seed: u64) -> Result<SoftConstraintSet> {
    if m == 0 || m > data.len() {
        return Err(Error::Config(format!("cannot pick {m} of {} points", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, data.len(), m).into_vec();
    picked.sort_unstable();
    let constraints = picked
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            Ok(SoftConstraint {
                indicator: indicator(i),
                points: vec![exact_point(&data[j].x)?],
                label: data[j].label,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SoftConstraintSet {
        constraints,
        threshold: 1,
        heuristic: Heuristic::Samples,
        provenance: serde_json::json!({ "heuristic": "samples", "m": m, "seed": seed }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rect: Rect<f64>,
    pub cells_per_axis: usize,
    #[serde(default = "default_samples_per_cell")]
    pub samples_per_cell: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples_per_cell() -> usize {
    3
}

/// Majority vote with ties going to the lowest class.
pub fn majority(labels: &[usize]) -> usize {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n.max(1)];
    for &l in labels {
        counts[l] += 1;
    }
    crate::network::argmax(&counts)
}

/// One constraint per grid cell: the cell's sampled points must all take the
/// majority decision of the original network at those points.
pub fn heuristic_grid<T: Scalar>(net: &Network<T>, cfg: &GridConfig) -> Result<SoftConstraintSet> {
    if cfg.samples_per_cell == 0 {
        return Err(Error::Config("samples_per_cell must be positive".into()));
    }
    if cfg.rect.dim() != net.input_dim() {
        return Err(Error::InvalidInput("grid rectangle and network differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cells = grid_cells(&cfg.rect, cfg.cells_per_axis)?;
    let constraints = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let pts: Vec<Vec<f64>> = (0..cfg.samples_per_cell)
                .map(|_| {
                    cell.bounds
                        .lo
                        .iter()
                        .zip(&cell.bounds.hi)
                        .map(|(l, h)| round_coord(rng.random_range(*l..*h)))
                        .collect()
                })
                .collect();
            let labels = pts.iter().map(|p| decide_at(net, p)).collect::<Result<Vec<_>>>()?;
            Ok(SoftConstraint {
                indicator: indicator(i),
                points: pts.iter().map(|p| exact_point(p)).collect::<Result<_>>()?,
                label: majority(&labels),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SoftConstraintSet {
        constraints,
        threshold: 1,
        heuristic: Heuristic::Grid,
        provenance: serde_json::to_value(cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiConfig {
    pub generators: Vec<LabeledPoint>,
    pub clip_rect: Rect<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl VoronoiConfig {
    /// `m` generators drawn without replacement from a sampled set.
    pub fn from_sampled(sampled: &[LabeledPoint], m: usize, clip_rect: Rect<f64>, seed: u64) -> Result<Self> {
        if m > sampled.len() {
            return Err(Error::Config(format!("cannot pick {m} of {} generators", sampled.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, sampled.len(), m).into_vec();
        idx.sort_unstable();
        Ok(VoronoiConfig { generators: idx.iter().map(|&i| sampled[i].clone()).collect(), clip_rect, seed })
    }

    /// Distinct generators in exact arithmetic.
    pub fn exact_generators(&self) -> Result<Vec<Vec<BigRational>>> {
        let pts: Vec<Vec<BigRational>> =
            self.generators.iter().map(|g| exact_point(&g.x)).collect::<Result<_>>()?;
        Ok(dedupe_points(&pts).into_iter().map(|i| pts[i].clone()).collect())
    }

    pub fn cells(&self) -> Result<Vec<VoronoiCell<BigRational>>> {
        let clip = self.clip_rect.map(|v| from_f64_shortest(*v).expect("finite bound"));
        voronoi_cells(&self.exact_generators()?, &clip)
    }
}

/// One constraint per distinct generator: the generator and every vertex of
/// its clipped cell must take the generator's decision.
pub fn heuristic_voronoi<T: Scalar>(net: &Network<T>, cfg: &VoronoiConfig) -> Result<SoftConstraintSet> {
    if net.input_dim() != 2 {
        return Err(Error::InvalidInput("Voronoi heuristic needs 2-d inputs".into()));
    }
    let exact = net.to_exact();
    let cells = cfg.cells()?;
    let constraints = cells
        .into_iter()
        .enumerate()
        .map(|(i, cell)| {
            let label = exact.decide(&cell.generator)?;
            let mut points = vec![cell.generator.clone()];
            points.extend(cell.vertices.into_iter().map(|[a, b]| vec![a, b]));
            Ok(SoftConstraint { indicator: indicator(i), points, label })
        })
        .collect::<Result<_>>()?;
    Ok(SoftConstraintSet {
        constraints,
        threshold: 1,
        heuristic: Heuristic::Voronoi,
        provenance: serde_json::json!({
            "heuristic": "voronoi",
            "generators": cfg.generators.len(),
            "clip_rect": cfg.clip_rect,
            "seed": cfg.seed,
        }),
    })
}
