//! Accuracy metrics, trial aggregation and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{decide_at, Dataset, LabeledPoint};
use crate::encoder::{Heuristic, Norm, RobustnessProperty};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::network::Network;
use crate::rational::{int, to_f64};
use crate::repair::TrialRecord;
use crate::scalar::Scalar;
use crate::smt::Status;

/// Fraction of `points` the network labels correctly.
pub fn accuracy<T: Scalar>(net: &Network<T>, points: &[LabeledPoint]) -> Result<f64> {
    Ok(correct_count(net, points)? as f64 / nonempty(points)?.len() as f64)
}

fn nonempty(points: &[LabeledPoint]) -> Result<&[LabeledPoint]> {
    if points.is_empty() {
        Err(Error::InvalidInput("accuracy of an empty point set".into()))
    } else {
        Ok(points)
    }
}

fn correct_count<T: Scalar>(net: &Network<T>, points: &[LabeledPoint]) -> Result<usize> {
    let hits = points
        .par_iter()
        .map(|p| decide_at(net, &p.x).map(|d| usize::from(d == p.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.into_iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub size: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_split: BTreeMap<Split, SplitAccuracy>,
    pub weighted: f64,
}

impl AccuracyReport {
    /// Size-weighted accuracy from per-split correct counts, computed
    /// exactly. Empty splits are left out.
    pub fn from_counts(counts: &[(Split, usize, usize)]) -> Result<Self> {
        let mut per_split = BTreeMap::new();
        let (mut hits, mut total) = (0usize, 0usize);
        for &(split, size, correct) in counts {
            if correct > size {
                return Err(Error::InvalidInput(format!("{correct} correct out of {size}")));
            }
            if size == 0 {
                continue;
            }
            per_split.insert(split, SplitAccuracy { size, correct, accuracy: correct as f64 / size as f64 });
            hits += correct;
            total += size;
        }
        if total == 0 {
            return Err(Error::InvalidInput("all splits are empty".into()));
        }
        Ok(AccuracyReport { per_split, weighted: to_f64(&BigRational::new(int(hits as i64).to_integer(), int(total as i64).to_integer())) })
    }

    /// Rebuilds a report from published `(size, accuracy)` pairs. Each
    /// accuracy is a ratio `correct/size`, so the correct count is recovered
    /// by rounding before the exact weighted mean is taken.
    pub fn from_published(splits: &[(Split, usize, f64)]) -> Result<Self> {
        let counts: Vec<(Split, usize, usize)> = splits
            .iter()
            .map(|&(s, size, acc)| {
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::InvalidInput(format!("accuracy {acc} outside [0,1]")));
                }
                Ok((s, size, (acc * size as f64).round() as usize))
            })
            .collect::<Result<_>>()?;
        Self::from_counts(&counts)
    }
}

/// Accuracy on every non-empty split and the size-weighted mean over them.
pub fn weighted_accuracy<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<AccuracyReport> {
    let mut counts = Vec::with_capacity(3);
    for (split, pts) in [(Split::Train, &data.train), (Split::Test, &data.test), (Split::Sampled, &data.sampled)] {
        if !pts.is_empty() {
            counts.push((split, pts.len(), correct_count(net, pts)?));
        }
    }
    AccuracyReport::from_counts(&counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Heuristic,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupKey {
    Heuristic(Option<Heuristic>),
    Threshold(usize),
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupKey::Heuristic(Some(h)) => write!(f, "{h}"),
            GroupKey::Heuristic(None) => f.write_str("NONE"),
            GroupKey::Threshold(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: GroupKey,
    pub accuracy_before: Option<f64>,
    pub max_accuracy: Option<f64>,
    pub min_accuracy: Option<f64>,
    pub avg_accuracy: Option<f64>,
    pub trials: usize,
    pub sat: usize,
    pub unsat: usize,
    pub timeout: usize,
    /// Errors and unknowns.
    pub other: usize,
    pub skipped: usize,
    pub total_solver_time_s: f64,
}

/// Per-group counts and accuracy statistics over SAT trials. Rows come out
/// in key order, so record order does not matter.
pub fn aggregate_trials(records: &[TrialRecord], group_by: GroupBy, accuracy_before: Option<f64>) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::Heuristic => GroupKey::Heuristic(r.heuristic),
            GroupBy::Threshold => GroupKey::Threshold(r.threshold),
        };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let mut row = AggregateRow {
                key,
                accuracy_before,
                max_accuracy: None,
                min_accuracy: None,
                avg_accuracy: None,
                trials: rs.len(),
                sat: 0,
                unsat: 0,
                timeout: 0,
                other: 0,
                skipped: 0,
                total_solver_time_s: 0.0,
            };
            // Sorted so the float sum is independent of input order.
            let mut accs: Vec<f64> = Vec::new();
            let mut times: Vec<f64> = Vec::new();
            for r in rs {
                times.push(r.solver_time_s);
                if r.skipped {
                    row.skipped += 1;
                    continue;
                }
                match r.status {
                    Status::Sat => {
                        row.sat += 1;
                        accs.extend(r.accuracy);
                    }
                    Status::Unsat => row.unsat += 1,
                    Status::Timeout => row.timeout += 1,
                    Status::Unknown | Status::Error => row.other += 1,
                }
            }
            times.sort_by(f64::total_cmp);
            row.total_solver_time_s = times.iter().sum();
            if !accs.is_empty() {
                accs.sort_by(f64::total_cmp);
                row.min_accuracy = accs.first().copied();
                row.max_accuracy = accs.last().copied();
                row.avg_accuracy = Some(accs.iter().sum::<f64>() / accs.len() as f64);
            }
            row
        })
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |a| format!("{:.5}", a * 100.0))
}

/// Table-style CSV; accuracies are percentages with five decimals.
pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "group",
        "accuracy_before",
        "max_accuracy",
        "min_accuracy",
        "avg_accuracy",
        "trials",
        "sat",
        "unsat",
        "timeout",
        "other",
        "skipped",
        "total_solver_time_s",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.key.to_string(),
            pct(r.accuracy_before),
            pct(r.max_accuracy),
            pct(r.min_accuracy),
            pct(r.avg_accuracy),
            r.trials.to_string(),
            r.sat.to_string(),
            r.unsat.to_string(),
            r.timeout.to_string(),
            r.other.to_string(),
            r.skipped.to_string(),
            format!("{:.3}", r.total_solver_time_s),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One entry of the method comparison: the accuracy each method reached for
/// a property configuration, `None` when it produced no safe network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub property: String,
    pub ours: Option<f64>,
    pub baseline: Option<f64>,
}

/// Methods as rows, property configurations as columns.
pub fn write_compare_csv(path: &Path, entries: &[CompareEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["method".to_string()];
    header.extend(entries.iter().map(|e| e.property.clone()));
    w.write_record(&header).map_err(csv_err)?;
    let mut ours = vec!["ours".to_string()];
    ours.extend(entries.iter().map(|e| pct(e.ours)));
    w.write_record(&ours).map_err(csv_err)?;
    let mut base = vec!["baseline".to_string()];
    base.extend(entries.iter().map(|e| pct(e.baseline)));
    w.write_record(&base).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

#[derive(Debug, Clone, Default)]
pub struct Overlays<'a> {
    pub train: &'a [LabeledPoint],
    pub test: &'a [LabeledPoint],
    pub sampled: &'a [LabeledPoint],
    pub properties: &'a [RobustnessProperty],
    /// Draw L1 balls as axis-aligned squares instead of diamonds.
    pub l1_as_square: bool,
}

const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];
const CANVAS: f64 = 600.0;

fn class_color(c: usize) -> &'static str {
    PALETTE[c % PALETTE.len()]
}

/// Decision regions of a 2-d network over `bounds`, rendered as a
/// `resolution`×`resolution` raster with optional point and ball overlays.
/// Cell opacity grows with the gap between the two largest outputs.
pub fn boundary_svg<T: Scalar>(
    net: &Network<T>,
    bounds: &Rect<f64>,
    resolution: usize,
    overlays: &Overlays,
) -> Result<String> {
    if resolution < 16 {
        return Err(Error::InvalidInput(format!("resolution {resolution} below 16")));
    }
    if bounds.dim() != 2 || net.input_dim() != 2 {
        return Err(Error::InvalidInput("boundary plots need 2-d inputs".into()));
    }
    let (x0, y0, x1, y1) = (bounds.lo[0], bounds.lo[1], bounds.hi[0], bounds.hi[1]);
    if !(x1 > x0 && y1 > y0) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("degenerate plot bounds".into()));
    }
    let sx = |x: f64| (x - x0) / (x1 - x0) * CANVAS;
    let sy = |y: f64| (y1 - y) / (y1 - y0) * CANVAS;
    let cell = CANVAS / resolution as f64;
    let cells: Vec<(usize, f64)> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % resolution, k / resolution);
            let x = x0 + (i as f64 + 0.5) / resolution as f64 * (x1 - x0);
            let y = y1 - (j as f64 + 0.5) / resolution as f64 * (y1 - y0);
            let out: Vec<f64> = net.forward(&[T::from_f64(x), T::from_f64(y)])?.iter().map(Scalar::to_f64).collect();
            let c = crate::network::argmax(&out);
            let runner_up = out.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
            Ok((c, out[c] - runner_up))
        })
        .collect::<Result<_>>()?;
    let max_margin = cells.iter().map(|c| c.1).filter(|m| m.is_finite()).fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for (k, (c, m)) in cells.iter().enumerate() {
        let (i, j) = (k % resolution, k / resolution);
        let alpha = if max_margin > 0.0 && m.is_finite() { 0.25 + 0.55 * (m / max_margin) } else { 0.5 };
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}" fill-opacity="{alpha:.3}"/>"#,
            i as f64 * cell,
            j as f64 * cell,
            cell,
            cell,
            class_color(*c)
        );
    }
    let _ = writeln!(s, "</g>");
    for p in overlays.train {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{}" stroke="black" stroke-width="0.4"/>"#,
            sx(p.x[0]),
            sy(p.x[1]),
            class_color(p.label)
        );
    }
    for p in overlays.test {
        let (cx, cy) = (sx(p.x[0]), sy(p.x[1]));
        let _ = writeln!(
            s,
            r#"<polygon points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="{}" stroke="black" stroke-width="0.4"/>"#,
            cx,
            cy - 3.0,
            cx - 2.6,
            cy + 1.5,
            cx + 2.6,
            cy + 1.5,
            class_color(p.label)
        );
    }
    for p in overlays.sampled {
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="4" height="4" fill="{}" stroke="black" stroke-width="0.4"/>"#,
            sx(p.x[0]) - 2.0,
            sy(p.x[1]) - 2.0,
            class_color(p.label)
        );
    }
    for prop in overlays.properties {
        if prop.center.len() != 2 {
            return Err(Error::InvalidInput(format!("property {} is not 2-d", prop.name)));
        }
        let (cx, cy, d) = (to_f64(&prop.center[0]), to_f64(&prop.center[1]), to_f64(&prop.delta));
        let corners: Vec<(f64, f64)> = if prop.norm == Norm::L1 && !overlays.l1_as_square {
            vec![(cx + d, cy), (cx, cy + d), (cx - d, cy), (cx, cy - d)]
        } else {
            vec![(cx - d, cy - d), (cx + d, cy - d), (cx + d, cy + d), (cx - d, cy + d)]
        };
        let pts: Vec<String> = corners.iter().map(|(x, y)| format!("{:.3},{:.3}", sx(*x), sy(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="none" stroke="black" stroke-width="1.5"><title>{}</title></polygon>"#,
            pts.join(" "),
            xml_escape(&prop.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
