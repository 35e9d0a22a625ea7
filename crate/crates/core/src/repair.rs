//! Greedy search over free-weight combinations, and the retraining baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use num_rational::BigRational;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{round_coord, Dataset, LabeledPoint};
use crate::encoder::{encode_repair, sanitize, verify_property, Heuristic, RobustnessProperty, SoftConstraintSet};
use crate::error::{Error, Result};
use crate::evaluator::weighted_accuracy;
use crate::network::{ExactNetwork, WeightFilter, WeightId, WeightSelection};
use crate::FloatNetwork;
use crate::rational::{format_rational, parse_rational, to_f64};
use crate::smt::{run_solver_labeled, SolverConfig, Status};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone)]
pub struct RepairConfig {
    pub max_combination_size: usize,
    pub trial_timeout_s: f64,
    pub global_timeout_s: f64,
    /// Ascending soft-constraint thresholds tried per combination.
    pub thresholds: Vec<usize>,
    pub weight_filter: WeightFilter,
    /// Pairs are assembled only from the best `k` SAT singletons.
    pub top_k_for_greedy: Option<usize>,
    /// Run even when every property already holds.
    pub allow_satisfied: bool,
    /// Concurrent trials within one combination size; 0 uses all cores.
    pub workers: usize,
    pub solver: SolverConfig,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            max_combination_size: 1,
            trial_timeout_s: 600.0,
            global_timeout_s: 36000.0,
            thresholds: vec![1],
            weight_filter: WeightFilter::default(),
            top_k_for_greedy: None,
            allow_satisfied: false,
            workers: 0,
            solver: SolverConfig::default(),
        }
    }
}

impl RepairConfig {
    pub fn validate(&self, soft: Option<&SoftConstraintSet>) -> Result<()> {
        if self.max_combination_size == 0 {
            return Err(Error::Config("max combination size must be positive".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly ascending".into()));
        }
        if let Some(soft) = soft {
            if self.thresholds.is_empty() {
                return Err(Error::Config("soft constraints need at least one threshold".into()));
            }
            if let Some(&t) = self.thresholds.iter().find(|&&t| t == 0 || t > soft.len()) {
                return Err(Error::Config(format!("threshold {t} outside 1..={}", soft.len())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub selection: WeightSelection,
    /// Zero when the query carries no soft constraints.
    pub threshold: usize,
    pub heuristic: Option<Heuristic>,
    pub status: Status,
    pub weight_values: Option<BTreeMap<WeightId, BigRational>>,
    pub accuracy: Option<f64>,
    pub solver_time_s: f64,
    pub skipped: bool,
}

impl TrialRecord {
    fn skipped(selection: &WeightSelection, threshold: usize, heuristic: Option<Heuristic>) -> Self {
        TrialRecord {
            selection: selection.clone(),
            threshold,
            heuristic,
            status: Status::Unknown,
            weight_values: None,
            accuracy: None,
            solver_time_s: 0.0,
            skipped: true,
        }
    }

    pub fn is_sat(&self) -> bool {
        self.status == Status::Sat && !self.skipped
    }

    /// Whether `self` should replace `other` as the best result.
    fn beats(&self, other: &TrialRecord) -> bool {
        let (a, b) = (self.accuracy.unwrap_or(f64::NEG_INFINITY), other.accuracy.unwrap_or(f64::NEG_INFINITY));
        a > b
            || (a == b
                && (self.selection.len(), self.threshold) < (other.selection.len(), other.threshold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchOutcome {
    /// Every property held before any repair; nothing was changed.
    AlreadySafe,
    Repaired,
    NotRepaired,
    /// Stopped by the global timeout, possibly with a repair in hand.
    GlobalTimeout,
}

#[derive(Debug, Clone)]
pub struct SearchState {
    pub unsat_marks: BTreeSet<WeightSelection>,
    pub best: Option<TrialRecord>,
    pub elapsed_s: f64,
    /// Append-only, in trial order.
    pub log: Vec<TrialRecord>,
    /// Properties not proven to hold on the original network.
    pub violated: Vec<String>,
    pub outcome: SearchOutcome,
}

impl Default for SearchState {
    fn default() -> Self {
        Self::new()
    }
}

impl SearchState {
    pub fn new() -> Self {
        SearchState {
            unsat_marks: BTreeSet::new(),
            best: None,
            elapsed_s: 0.0,
            log: Vec::new(),
            violated: Vec::new(),
            outcome: SearchOutcome::NotRepaired,
        }
    }

    /// Appends `rec` and promotes it to best when it wins.
    pub fn record(&mut self, rec: TrialRecord) {
        if rec.is_sat() && self.best.as_ref().is_none_or(|b| rec.beats(b)) {
            self.best = Some(rec.clone());
        }
        self.log.push(rec);
    }

    /// Network with the best assignment substituted, if any.
    pub fn repaired_network(&self, net: &ExactNetwork) -> Option<Result<ExactNetwork>> {
        let best = self.best.as_ref()?;
        Some(net.substitute(best.weight_values.as_ref()?))
    }
}

/// All size-`size` subsets of `all_ids` (sorted) containing no marked
/// subset. With `top_k` and `size == 2` only the best `k` SAT singletons of
/// the log are combined.
pub fn build_eligible_combinations(
    state: &SearchState,
    size: usize,
    all_ids: &[WeightId],
    top_k: Option<usize>,
) -> Vec<WeightSelection> {
    let mut pool: Vec<WeightId> = all_ids.to_vec();
    pool.sort();
    pool.dedup();
    if let (Some(k), 2) = (top_k, size) {
        let mut singles: BTreeMap<WeightId, TrialRecord> = BTreeMap::new();
        for rec in state.log.iter().filter(|r| r.is_sat() && r.selection.len() == 1) {
            let id = *rec.selection.iter().next().unwrap();
            if singles.get(&id).is_none_or(|b| rec.beats(b)) {
                singles.insert(id, rec.clone());
            }
        }
        let mut ranked: Vec<(WeightId, TrialRecord)> = singles.into_iter().collect();
        ranked.sort_by(|a, b| {
            if a.1.beats(&b.1) {
                std::cmp::Ordering::Less
            } else if b.1.beats(&a.1) {
                std::cmp::Ordering::Greater
            } else {
                a.0.cmp(&b.0)
            }
        });
        let top: BTreeSet<WeightId> = ranked.into_iter().take(k).map(|(id, _)| id).collect();
        pool.retain(|id| top.contains(id));
    }
    if size == 0 || size > pool.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        let sel: WeightSelection = idx.iter().map(|&i| pool[i]).collect();
        if !state.unsat_marks.iter().any(|m| m.is_subset(&sel)) {
            out.push(sel);
        }
        // Advance to the next combination in lexicographic order.
        let mut i = size;
        while i > 0 && idx[i - 1] == pool.len() - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Everything a single trial needs; shared read-only between workers.
pub struct TrialContext<'a> {
    pub net: &'a ExactNetwork,
    pub props: &'a [RobustnessProperty],
    pub soft: Option<&'a SoftConstraintSet>,
    /// Splits used for the weighted accuracy of repaired networks.
    pub data: &'a Dataset,
    pub solver: SolverConfig,
}

impl TrialContext<'_> {
    fn heuristic(&self) -> Option<Heuristic> {
        self.soft.map(|s| s.heuristic)
    }
}

/// One solver call for `selection` at `threshold`, followed by
/// re-verification of every property on the substituted network.
pub fn run_trial(ctx: &TrialContext, selection: &WeightSelection, threshold: usize, timeout_s: f64) -> TrialRecord {
    let mut rec = TrialRecord {
        selection: selection.clone(),
        threshold,
        heuristic: ctx.heuristic(),
        status: Status::Error,
        weight_values: None,
        accuracy: None,
        solver_time_s: 0.0,
        skipped: false,
    };
    let soft = match ctx.soft.map(|s| s.with_threshold(threshold)).transpose() {
        Ok(s) => s,
        Err(e) => {
            log::error!("trial {selection}@{threshold}: {e}");
            return rec;
        }
    };
    let script = match encode_repair(ctx.net, selection, ctx.props, soft.as_ref()) {
        Ok(s) => s,
        Err(e) => {
            log::error!("trial {selection}@{threshold}: {e}");
            return rec;
        }
    };
    let cfg = ctx.solver.clone().with_timeout(timeout_s);
    let label = format!("repair-{}-t{threshold}", sanitize(&selection.to_string()));
    let verdict = run_solver_labeled(&script, &cfg, &label);
    rec.solver_time_s = verdict.wall_time_s;
    rec.status = verdict.status;
    if verdict.status != Status::Sat {
        log::info!("trial {selection}@{threshold}: {}", verdict.status);
        return rec;
    }
    let model = verdict.model.as_ref().expect("SAT verdicts carry the requested model");
    let values: Option<BTreeMap<WeightId, BigRational>> = selection
        .iter()
        .map(|id| model.get(&id.symbol()).and_then(|v| v.as_real()).map(|v| (*id, v.clone())))
        .collect();
    let Some(values) = values else {
        log::error!("trial {selection}@{threshold}: model lacks free weights");
        rec.status = Status::Error;
        return rec;
    };
    match check_candidate(ctx, &values) {
        Ok(acc) => {
            log::info!("trial {selection}@{threshold}: SAT, accuracy {acc:.5}");
            rec.weight_values = Some(values);
            rec.accuracy = Some(acc);
        }
        Err(e) => {
            log::error!("trial {selection}@{threshold}: SAT rejected: {e}");
            rec.status = Status::Error;
        }
    }
    rec
}

/// Substitutes, re-verifies every property and measures accuracy.
fn check_candidate(ctx: &TrialContext, values: &BTreeMap<WeightId, BigRational>) -> Result<f64> {
    let repaired = ctx.net.substitute(values)?;
    let mut solver = ctx.solver.clone();
    if let Some(dir) = &mut solver.archive_dir {
        let sel: WeightSelection = values.keys().copied().collect();
        dir.push(format!("recheck-{}", sanitize(&sel.to_string())));
    }
    for prop in ctx.props {
        let v = verify_property(&repaired, prop, &solver)?;
        if !v.holds() {
            return Err(Error::Validation(format!(
                "property {} does not hold after repair ({:?})",
                prop.name, v.verdict
            )));
        }
    }
    Ok(weighted_accuracy(&repaired, ctx.data)?.weighted)
}

/// Runs `thresholds` in order until the first non-SAT verdict; the rest are
/// recorded as skipped without calling the solver.
pub fn threshold_ladder(
    ctx: &TrialContext,
    selection: &WeightSelection,
    thresholds: &[usize],
    timeout_s: f64,
) -> Vec<TrialRecord> {
    let thresholds: Vec<usize> = if ctx.soft.is_none() { vec![0] } else { thresholds.to_vec() };
    let mut out = Vec::with_capacity(thresholds.len());
    let mut stopped = false;
    for t in thresholds {
        if stopped {
            out.push(TrialRecord::skipped(selection, t, ctx.heuristic()));
            continue;
        }
        let rec = run_trial(ctx, selection, t, timeout_s);
        stopped = rec.status != Status::Sat;
        out.push(rec);
    }
    out
}

/// Level-wise greedy repair: size 1, then 2, ... up to the configured cap.
pub fn greedy_repair(
    net: &ExactNetwork,
    props: &[RobustnessProperty],
    soft: Option<&SoftConstraintSet>,
    data: &Dataset,
    cfg: &RepairConfig,
) -> Result<SearchState> {
    cfg.validate(soft)?;
    if props.is_empty() {
        return Err(Error::InvalidInput("no properties to repair".into()));
    }
    for p in props {
        p.validate_for(net)?;
    }
    let start = Instant::now();
    let mut state = SearchState::new();
    if cfg.global_timeout_s <= 0.0 {
        state.outcome = SearchOutcome::GlobalTimeout;
        return Ok(state);
    }
    for p in props {
        let v = verify_property(net, p, &cfg.solver)?;
        if !v.holds() {
            log::info!("property {} is not proven on the original network: {:?}", p.name, v.verdict);
            state.violated.push(p.name.clone());
        }
    }
    if state.violated.is_empty() && !cfg.allow_satisfied {
        state.outcome = SearchOutcome::AlreadySafe;
        state.elapsed_s = start.elapsed().as_secs_f64();
        return Ok(state);
    }
    let ctx = TrialContext { net, props, soft, data, solver: cfg.solver.clone() };
    let all_ids = net.enumerate_weight_ids(&cfg.weight_filter);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut timed_out = false;
    for size in 1..=cfg.max_combination_size {
        let combos = build_eligible_combinations(&state, size, &all_ids, cfg.top_k_for_greedy);
        log::info!("size {size}: {} eligible combinations", combos.len());
        let ladders: Vec<Option<Vec<TrialRecord>>> = pool.install(|| {
            combos
                .par_iter()
                .map(|sel| {
                    let remaining = cfg.global_timeout_s - start.elapsed().as_secs_f64();
                    if remaining <= 0.0 {
                        return None;
                    }
                    Some(threshold_ladder(&ctx, sel, &cfg.thresholds, cfg.trial_timeout_s.min(remaining)))
                })
                .collect()
        });
        for (sel, ladder) in combos.iter().zip(ladders) {
            let Some(ladder) = ladder else {
                timed_out = true;
                continue;
            };
            if ladder.first().is_some_and(|r| r.status == Status::Unsat && r.threshold <= 1) {
                state.unsat_marks.insert(sel.clone());
            }
            for rec in ladder {
                state.record(rec);
            }
        }
        if timed_out || start.elapsed().as_secs_f64() >= cfg.global_timeout_s {
            timed_out = true;
            break;
        }
    }
    state.elapsed_s = start.elapsed().as_secs_f64();
    state.outcome = match (&state.best, timed_out) {
        (_, true) => SearchOutcome::GlobalTimeout,
        (Some(_), false) => SearchOutcome::Repaired,
        (None, false) => SearchOutcome::NotRepaired,
    };
    Ok(state)
}

fn format_values(values: &BTreeMap<WeightId, BigRational>) -> String {
    values.iter().map(|(id, v)| format!("{id}={}", format_rational(v))).collect::<Vec<_>>().join(";")
}

fn parse_values(text: &str) -> Result<BTreeMap<WeightId, BigRational>> {
    text.split(';')
        .filter(|s| !s.is_empty())
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("bad assignment {kv:?}")))?;
            let v = parse_rational(v).ok_or_else(|| Error::InvalidInput(format!("bad value {v:?}")))?;
            Ok((k.parse()?, v))
        })
        .collect()
}

const TRIAL_HEADER: [&str; 8] =
    ["selection", "size", "threshold", "heuristic", "status", "skipped", "accuracy", "solver_time_s"];

/// One row per trial; the last column holds the exact weight assignment.
pub fn write_trial_log(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = TRIAL_HEADER.to_vec();
    header.push("weight_values");
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.selection.to_string(),
            r.selection.len().to_string(),
            r.threshold.to_string(),
            r.heuristic.map(|h| h.to_string()).unwrap_or_default(),
            if r.skipped { String::new() } else { r.status.to_string() },
            r.skipped.to_string(),
            r.accuracy.map(|a| format!("{a:.7}")).unwrap_or_else(|| "NA".into()),
            format!("{:.3}", r.solver_time_s),
            r.weight_values.as_ref().map(format_values).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let field = |j: usize| row.get(j).ok_or_else(|| bad(format!("missing column {j}")));
        let skipped: bool = field(5)?.parse().map_err(|_| bad("bad skipped flag".into()))?;
        let status = if skipped { Status::Unknown } else { field(4)?.parse().map_err(bad)? };
        let heuristic = match field(3)? {
            "" => None,
            h => Some(h.parse().map_err(|e: Error| bad(e.to_string()))?),
        };
        let accuracy = match field(6)? {
            "NA" => None,
            a => Some(a.parse().map_err(|_| bad(format!("bad accuracy {a:?}")))?),
        };
        let values = field(8)?;
        out.push(TrialRecord {
            selection: field(0)?.parse().map_err(|e: Error| bad(e.to_string()))?,
            threshold: field(2)?.parse().map_err(|_| bad("bad threshold".into()))?,
            heuristic,
            status,
            weight_values: if values.is_empty() { None } else { Some(parse_values(values).map_err(|e| bad(e.to_string()))?) },
            accuracy,
            solver_time_s: field(7)?.parse().map_err(|_| bad("bad solver time".into()))?,
            skipped,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub max_iters: usize,
    /// Points drawn from each violated ball per iteration.
    pub n_spec: usize,
    /// Original training points resampled per iteration.
    pub n_train: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { max_iters: 20, n_spec: 200, n_train: 200, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineIteration {
    pub iteration: usize,
    pub statuses: Vec<(String, Status)>,
    pub training_size: usize,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub net: FloatNetwork,
    /// Verification rounds performed.
    pub iterations: usize,
    pub retrainings: usize,
    pub safe: bool,
    pub log: Vec<BaselineIteration>,
}

/// Uniform point of the ball, rounded like generated data and still inside.
fn sample_in_ball(prop: &RobustnessProperty, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let c: Vec<f64> = prop.center.iter().map(to_f64).collect();
    let d = to_f64(&prop.delta);
    loop {
        let x: Vec<f64> = c.iter().map(|ci| round_coord(rng.random_range(ci - d..=ci + d))).collect();
        if prop.contains_f64(&x) {
            return x;
        }
    }
}

/// Verify, and while unsafe extend the training set with points from each
/// violated ball plus resampled originals, then retrain.
pub fn naive_baseline(
    net0: &FloatNetwork,
    props: &[RobustnessProperty],
    train_data: &[LabeledPoint],
    train_cfg: &TrainConfig,
    cfg: &BaselineConfig,
    solver: &SolverConfig,
) -> Result<BaselineOutcome> {
    if cfg.max_iters == 0 {
        return Err(Error::Config("baseline needs at least one iteration".into()));
    }
    if train_data.is_empty() {
        return Err(Error::InvalidInput("baseline needs training data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = net0.clone();
    let mut data = train_data.to_vec();
    let mut out = BaselineOutcome { net: net0.clone(), iterations: 0, retrainings: 0, safe: false, log: Vec::new() };
    for iteration in 1..=cfg.max_iters {
        let mut statuses = Vec::with_capacity(props.len());
        let mut violated = Vec::new();
        for p in props {
            let v = verify_property(&net, p, solver)?;
            statuses.push((p.name.clone(), v.solver.status));
            if !v.holds() {
                violated.push(p);
            }
        }
        out.iterations = iteration;
        out.log.push(BaselineIteration { iteration, statuses, training_size: data.len() });
        if violated.is_empty() {
            out.safe = true;
            break;
        }
        if iteration == cfg.max_iters {
            break;
        }
        for p in &violated {
            for _ in 0..cfg.n_spec {
                data.push(LabeledPoint::new(sample_in_ball(p, &mut rng), p.target_class));
            }
        }
        data.extend(train_data.choose_multiple(&mut rng, cfg.n_train.min(train_data.len())).cloned());
        let step = TrainConfig { seed: train_cfg.seed.wrapping_add(iteration as u64), ..train_cfg.clone() };
        net = train(&net, &data, &step)?;
        out.retrainings += 1;
    }
    out.net = net;
    Ok(out)
}
