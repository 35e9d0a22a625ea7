//! Seeded synthetic datasets (Gaussian mixtures around labelled centroids),
//! uniformly sampled evaluation sets, and their CSV persistence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::network::Network;
use crate::scalar::Scalar;

/// Fractional digits kept for generated coordinates. Short decimals keep the
/// solver's constants small; evaluation and encoding both use the rounded
/// value.
pub const POINT_DECIMALS: i32 = 4;

pub const DEFAULT_STDDEV: f64 = 3.0;

/// Keep-probability for label-1 draws in the imbalanced XOR variant.
pub const XOR_B_KEEP_LABEL1: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, label: usize) -> Self {
        LabeledPoint { x, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub center: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub name: String,
    pub centroids: Vec<Centroid>,
    pub stddev: f64,
    /// Acceptance probability per label; labels not listed are always kept.
    #[serde(default)]
    pub per_class_sampling_weights: BTreeMap<usize, f64>,
}

impl MixtureSpec {
    pub fn from_pairs(name: &str, pairs: &[([f64; 2], usize)]) -> Self {
        MixtureSpec {
            name: name.into(),
            centroids: pairs
                .iter()
                .map(|(c, l)| Centroid { center: c.to_vec(), label: *l })
                .collect(),
            stddev: DEFAULT_STDDEV,
            per_class_sampling_weights: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.is_empty() {
            return Err(Error::Config("mixture needs at least one centroid".into()));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return Err(Error::Config(format!("bad stddev {}", self.stddev)));
        }
        let dim = self.centroids[0].center.len();
        if dim == 0 || self.centroids.iter().any(|c| c.center.len() != dim) {
            return Err(Error::Config("centroids differ in dimension".into()));
        }
        if let Some((l, p)) = self
            .per_class_sampling_weights
            .iter()
            .find(|(_, p)| !(**p > 0.0 && **p <= 1.0))
        {
            return Err(Error::Config(format!("sampling weight {p} for label {l} outside (0,1]")));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.iter().map(|c| c.label + 1).max().unwrap_or(0)
    }
}

/// Four clusters on the XOR pattern: equal signs are class 0.
pub fn xor_spec() -> MixtureSpec {
    MixtureSpec::from_pairs(
        "xor-a",
        &[([10.0, 10.0], 0), ([-10.0, -10.0], 0), ([-10.0, 10.0], 1), ([10.0, -10.0], 1)],
    )
}

/// [`xor_spec`] with class 1 down-sampled.
pub fn xor_b_spec() -> MixtureSpec {
    let mut spec = xor_spec();
    spec.name = "xor-b".into();
    spec.per_class_sampling_weights.insert(1, XOR_B_KEEP_LABEL1);
    spec
}

/// Eight clusters: the XOR pattern inside, its mirror image outside.
pub fn blobs_spec() -> MixtureSpec {
    MixtureSpec::from_pairs(
        "blobs",
        &[
            ([10.0, 10.0], 0),
            ([-10.0, -10.0], 0),
            ([-10.0, 10.0], 1),
            ([10.0, -10.0], 1),
            ([30.0, -30.0], 0),
            ([-30.0, -30.0], 1),
            ([-30.0, 30.0], 0),
            ([30.0, 30.0], 1),
        ],
    )
}

pub fn spec_by_name(name: &str) -> Result<MixtureSpec> {
    match name {
        "xor-a" | "xor" => Ok(xor_spec()),
        "xor-b" => Ok(xor_b_spec()),
        "blobs" => Ok(blobs_spec()),
        _ => Err(Error::Config(format!("unknown dataset spec {name:?}"))),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
    /// Labels here come from the original network, not ground truth.
    pub sampled: Vec<LabeledPoint>,
    pub seed: u64,
    pub spec: Option<MixtureSpec>,
}

pub(crate) fn round_coord(v: f64) -> f64 {
    let scale = 10f64.powi(POINT_DECIMALS);
    let r = (v * scale).round() / scale;
    // Normalise through the shortest decimal so CSV text reparses identically.
    format!("{r}").parse().unwrap_or(r)
}

fn draw(spec: &MixtureSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledPoint>> {
    let noise = Normal::new(0.0, spec.stddev).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = &spec.centroids[rng.random_range(0..spec.centroids.len())];
        let x: Vec<f64> = c
            .center
            .iter()
            .map(|m| round_coord(m + noise.sample(rng)))
            .collect();
        let keep = spec.per_class_sampling_weights.get(&c.label).copied().unwrap_or(1.0);
        if keep >= 1.0 || rng.random::<f64>() < keep {
            out.push(LabeledPoint::new(x, c.label));
        }
    }
    Ok(out)
}

/// Draws `n_train` and `n_test` points i.i.d. from the mixture. Rejected
/// draws (per-class sampling weights) are redrawn until the requested sizes
/// are met.
pub fn generate_mixture(spec: &MixtureSpec, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("split sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = draw(spec, n_train, &mut rng)?;
    let test = draw(spec, n_test, &mut rng)?;
    Ok(Dataset { train, test, sampled: Vec::new(), seed, spec: Some(spec.clone()) })
}

/// `n` uniform points in `bounds`, each labelled by `net`.
pub fn sample_uniform_labeled<T: Scalar>(
    net: &Network<T>,
    bounds: &Rect<f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledPoint>> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    Rect::new(bounds.lo.clone(), bounds.hi.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: Vec<f64> = bounds
                .lo
                .iter()
                .zip(&bounds.hi)
                .map(|(l, h)| round_coord(rng.random_range(*l..*h)))
                .collect();
            let label = decide_at(net, &x)?;
            Ok(LabeledPoint::new(x, label))
        })
        .collect()
}

/// Decision of `net` at an f64 point, evaluated in `T`.
pub fn decide_at<T: Scalar>(net: &Network<T>, x: &[f64]) -> Result<usize> {
    let xs: Vec<T> = x
        .iter()
        .map(|v| {
            crate::rational::from_f64_shortest(*v).map(|r| T::from_exact(&r))
        })
        .collect::<Result<_>>()?;
    net.decide(&xs)
}

/// Training-data bounding box grown by 10% on every side.
pub fn default_bounds(points: &[LabeledPoint]) -> Result<Rect<f64>> {
    let xs: Vec<Vec<f64>> = points.iter().map(|p| p.x.clone()).collect();
    Rect::bounding(&xs, 0.1)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    spec: Option<MixtureSpec>,
    num_classes: usize,
    sizes: BTreeMap<String, usize>,
}

const SPLITS: [&str; 3] = ["train", "test", "sampled"];

impl Dataset {
    pub fn split(&self, name: &str) -> &[LabeledPoint] {
        match name {
            "train" => &self.train,
            "test" => &self.test,
            _ => &self.sampled,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.spec.as_ref().map_or(2, MixtureSpec::num_classes).max(2)
    }

    /// Writes `train.csv`, `test.csv`, `sampled.csv` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut sizes = BTreeMap::new();
        for name in SPLITS {
            let points = self.split(name);
            sizes.insert(name.to_string(), points.len());
            let mut text = String::new();
            let dim = points.first().map_or(2, |p| p.x.len());
            let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
            text.push_str(&format!("{},label\n", header.join(",")));
            for p in points {
                let coords: Vec<String> = p.x.iter().map(|v| format!("{v}")).collect();
                text.push_str(&format!("{},{}\n", coords.join(","), p.label));
            }
            std::fs::write(dir.join(format!("{name}.csv")), text)?;
        }
        let manifest = Manifest {
            seed: self.seed,
            spec: self.spec.clone(),
            num_classes: self.num_classes(),
            sizes,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut splits = BTreeMap::new();
        for name in SPLITS {
            let path = dir.join(format!("{name}.csv"));
            let points = if path.exists() {
                read_points(&path, manifest.num_classes)?
            } else {
                Vec::new()
            };
            if let Some(&n) = manifest.sizes.get(name) {
                if n != points.len() {
                    return Err(Error::Validation(format!(
                        "{}: manifest says {n} rows, found {}",
                        path.display(),
                        points.len()
                    )));
                }
            }
            splits.insert(name, points);
        }
        Ok(Dataset {
            train: splits.remove("train").unwrap_or_default(),
            test: splits.remove("test").unwrap_or_default(),
            sampled: splits.remove("sampled").unwrap_or_default(),
            seed: manifest.seed,
            spec: manifest.spec,
        })
    }
}

/// Reads `x1,...,xd,label` rows. Labels must be below `num_classes`.
pub fn read_points(path: &Path, num_classes: usize) -> Result<Vec<LabeledPoint>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| {
        Error::Parse { path: path.into(), line: 0, msg: e.to_string() }
    })?;
    let mut out = Vec::new();
    let mut dim = None;
    for (i, rec) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let err = |msg: String| Error::Parse { path: path.into(), line, msg };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() < 2 {
            return Err(err("expected coordinates and a label".into()));
        }
        let x: Vec<f64> = rec
            .iter()
            .take(rec.len() - 1)
            .map(|f| f.trim().parse::<f64>().map_err(|e| err(format!("{f:?}: {e}"))))
            .collect::<Result<_>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        if *dim.get_or_insert(x.len()) != x.len() {
            return Err(err("inconsistent dimension".into()));
        }
        let raw = rec.get(rec.len() - 1).unwrap_or("").trim();
        let label: usize = raw.parse().map_err(|e| err(format!("label {raw:?}: {e}")))?;
        if label >= num_classes {
            return Err(Error::Validation(format!(
                "{}:{line}: label {label} outside 0..{num_classes}",
                path.display()
            )));
        }
        out.push(LabeledPoint::new(x, label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerParams, WeightId};

    #[test]
    fn xor_a_sizes() {
        let d = generate_mixture(&xor_spec(), 2400, 1600, 7).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (2400, 1600));
        assert!(d.sampled.is_empty());
    }

    #[test]
    fn xor_b_is_imbalanced() {
        let d = generate_mixture(&xor_b_spec(), 1562, 1600, 7).unwrap();
        assert_eq!(d.train.len(), 1562);
        let ones = d.train.iter().filter(|p| p.label == 1).count();
        assert!(ones < d.train.len() - ones);
    }

    #[test]
    fn zero_stddev_hits_centroids() {
        let mut spec = xor_spec();
        spec.stddev = 0.0;
        let d = generate_mixture(&spec, 50, 10, 1).unwrap();
        for p in d.train.iter().chain(&d.test) {
            assert!(spec.centroids.iter().any(|c| c.center == p.x && c.label == p.label));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_mixture(&blobs_spec(), 300, 100, 42).unwrap();
        let b = generate_mixture(&blobs_spec(), 300, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_mixture(&blobs_spec(), 300, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blobs_centroids() {
        let s = blobs_spec();
        assert_eq!(s.centroids.len(), 8);
        let label_of = |c: [f64; 2]| s.centroids.iter().find(|x| x.center == c).unwrap().label;
        assert_eq!(label_of([30.0, -30.0]), 0);
        assert_eq!(label_of([-30.0, -30.0]), 1);
    }

    #[test]
    fn config_errors() {
        let mut s = xor_spec();
        s.centroids.clear();
        assert!(matches!(generate_mixture(&s, 1, 1, 0), Err(Error::Config(_))));
        let mut s = xor_spec();
        s.per_class_sampling_weights.insert(1, 0.0);
        assert!(generate_mixture(&s, 1, 1, 0).is_err());
    }

    #[test]
    fn uniform_sampling_labels_by_network() {
        let mut net = Network::<f64>::zeros(&[2, 2, 2]).unwrap();
        net = net.substitute(&BTreeMap::from([(WeightId::bias(2, 1), 1.0)])).unwrap();
        let bounds = Rect::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let pts = sample_uniform_labeled(&net, &bounds, 500, 3).unwrap();
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|p| p.label == 1 && bounds.contains(&p.x)));
        assert_eq!(pts, sample_uniform_labeled(&net, &bounds, 500, 3).unwrap());
    }

    #[test]
    fn sampled_labels_match_decide() {
        let net = Network::new(vec![
            LayerParams { weights: vec![vec![1.0, -1.0], vec![-1.0, 1.0]], biases: vec![0.0, 0.0] },
            LayerParams { weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]], biases: vec![0.0, 0.0] },
        ])
        .unwrap();
        let bounds = Rect::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        for p in sample_uniform_labeled(&net, &bounds, 200, 9).unwrap() {
            assert_eq!(decide_at(&net, &p.x).unwrap(), p.label);
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut d = generate_mixture(&xor_b_spec(), 40, 20, 11).unwrap();
        d.sampled = vec![LabeledPoint::new(vec![1.5, -2.25], 1)];
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.seed, 11);
    }

    #[test]
    fn csv_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x1,x2,label\n1,2,0\n1,oops,1\n").unwrap();
        match read_points(&path, 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "x1,x2,label\n1,2,2\n").unwrap();
        assert!(matches!(read_points(&path, 2), Err(Error::Validation(_))));
    }
}
