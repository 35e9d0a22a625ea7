//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! straight to stdout, so the lines show up even when output is captured.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nnrepair::datagen::{
    default_bounds, generate_mixture, sample_uniform_labeled, xor_b_spec, xor_spec, Dataset, LabeledPoint,
};
use nnrepair::encoder::{
    encode_repair, forward_query, heuristic_grid, heuristic_samples, heuristic_voronoi, verification_script,
    verify_property, GridConfig, Norm, RobustnessProperty, Verdict, VoronoiConfig,
};
use nnrepair::evaluator::{weighted_accuracy, AccuracyReport, Split};
use nnrepair::geometry::{grid_cells, sq_dist, voronoi_cells, Rect};
use nnrepair::network::{LayerParams, Network, ParamKind, WeightFilter, WeightId, WeightSelection};
use nnrepair::rational::{from_f64_shortest, int, ratio, to_f64};
use nnrepair::repair::{
    build_eligible_combinations, greedy_repair, naive_baseline, threshold_ladder, BaselineConfig, RepairConfig,
    SearchState, TrialContext,
};
use nnrepair::smt::{run_solver, solver_available, SolverConfig, Status};
use nnrepair::trainer::{gradients, init_network, loss, softmax, train, TrainConfig};
use nnrepair::{ExactNetwork, FloatNetwork};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn criterion(n: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(detail) => {
            say(&format!("PASS criterion {n:>2} ({title}, {secs:.1}s): {detail}"));
            true
        }
        Err(why) => {
            say(&format!("FAIL criterion {n:>2} ({title}, {secs:.1}s): {why}"));
            false
        }
    }
}

fn solver() -> Result<SolverConfig, String> {
    let cfg = SolverConfig::default();
    if solver_available(&cfg) {
        Ok(cfg)
    } else {
        Err("z3 is not on PATH".into())
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

// Independent exact oracles. They read the raw parameters and do not go
// through Network::forward or RobustnessProperty::contains.

fn oracle_outputs(net: &ExactNetwork, x: &[BigRational]) -> Vec<BigRational> {
    let layers = net.layers();
    let mut act = x.to_vec();
    for (i, l) in layers.iter().enumerate() {
        let z: Vec<BigRational> = l
            .weights
            .iter()
            .zip(&l.biases)
            .map(|(row, b)| row.iter().zip(&act).fold(b.clone(), |s, (w, v)| s + w * v))
            .collect();
        act = if i + 1 < layers.len() {
            z.into_iter().map(|v| if v.is_positive() { v } else { BigRational::zero() }).collect()
        } else {
            z
        };
    }
    act
}

fn oracle_decide(out: &[BigRational]) -> usize {
    let mut best = 0;
    for (i, v) in out.iter().enumerate() {
        if *v > out[best] {
            best = i;
        }
    }
    best
}

fn oracle_in_ball(prop: &RobustnessProperty, x: &[BigRational]) -> bool {
    let d = x.iter().zip(&prop.center).map(|(a, c)| (a - c).abs());
    match prop.norm {
        Norm::L1 => d.fold(BigRational::zero(), |s, v| s + v) <= prop.delta,
        Norm::Linf => d.fold(BigRational::zero(), |m, v| if v > m { v } else { m }) <= prop.delta,
    }
}

/// Misclassified points on a 201x201 lattice over the ball's bounding box.
/// Clear-cut points are decided in floating point, close calls exactly.
fn dense_misclassified(net: &ExactNetwork, prop: &RobustnessProperty) -> usize {
    let fnet = net.to_f64();
    let mut bad = 0;
    for i in -100i64..=100 {
        for j in -100i64..=100 {
            let x = vec![
                &prop.center[0] + &prop.delta * ratio(i, 100),
                &prop.center[1] + &prop.delta * ratio(j, 100),
            ];
            if !oracle_in_ball(prop, &x) {
                continue;
            }
            let out = fnet.forward(&[to_f64(&x[0]), to_f64(&x[1])]).unwrap();
            let t = out[prop.target_class];
            let other = out.iter().enumerate().filter(|(k, _)| *k != prop.target_class).map(|(_, v)| *v).fold(f64::MIN, f64::max);
            let wrong = if (t - other).abs() > 1e-7 * (1.0 + t.abs() + other.abs()) {
                other > t
            } else {
                oracle_decide(&oracle_outputs(net, &x)) != prop.target_class
            };
            if wrong {
                bad += 1;
            }
        }
    }
    bad
}

fn rational_point(x: &[f64]) -> Vec<BigRational> {
    x.iter().map(|v| from_f64_shortest(*v).unwrap()).collect()
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

struct Fixture {
    data: Dataset,
    net: ExactNetwork,
}

fn xor_a_fixture() -> Fixture {
    let seed = 7;
    let data = generate_mixture(&xor_spec(), 2400, 1600, seed).unwrap();
    let train_cfg = TrainConfig::adam(0.01, 30, seed);
    let float_net = train(&init_network::<f64>(&[2, 4, 2], seed).unwrap(), &data.train, &train_cfg).unwrap();
    Fixture { data, net: float_net.to_exact().rounded(6) }
}

/// The original network's decision at the centre becomes the target, so the
/// ball is violated only near its rim.
fn violated_axis_properties(net: &ExactNetwork, solver: &SolverConfig, want: usize) -> Vec<RobustnessProperty> {
    let mut out = Vec::new();
    for k in [25.0, 20.0, 30.0, 15.0, 35.0] {
        for c in [[-k, 0.0], [k, 0.0], [0.0, -k], [0.0, k]] {
            let target = net.decide(&rational_point(&c)).unwrap();
            let p = RobustnessProperty::new(&format!("axis_{}_{}", c[0], c[1]), &c, 5.0, Norm::L1, target).unwrap();
            if matches!(verify_property(net, &p, solver).unwrap().verdict, Verdict::Violated(_)) {
                out.push(p);
                if out.len() == want {
                    return out;
                }
            }
        }
    }
    out
}

fn soundness_round_trip() -> Outcome {
    let solver = solver()?;
    let fx = xor_a_fixture();
    let props = violated_axis_properties(&fx.net, &solver, 2);
    ensure!(props.len() == 2, "found only {} violated properties to repair", props.len());
    let soft = heuristic_samples(&fx.data.train, 100, 1).map_err(e)?;
    let cfg = RepairConfig {
        thresholds: vec![1, 25, 50, 75],
        trial_timeout_s: 120.0,
        global_timeout_s: 3600.0,
        solver: solver.clone(),
        ..Default::default()
    };
    let (mut sat, mut lattice_points) = (0usize, 0usize);
    for p in &props {
        let state = greedy_repair(&fx.net, std::slice::from_ref(p), Some(&soft), &fx.data, &cfg).map_err(e)?;
        for rec in state.log.iter().filter(|r| r.is_sat()) {
            sat += 1;
            let values = rec.weight_values.as_ref().ok_or("SAT trial without weights")?;
            let repaired = fx.net.substitute(values).map_err(e)?;
            let v = verify_property(&repaired, p, &solver).map_err(e)?;
            ensure!(v.holds(), "{} @{}: {} not verified after substitution ({:?})", rec.selection, rec.threshold, p.name, v.verdict);
            let bad = dense_misclassified(&repaired, p);
            ensure!(bad == 0, "{} @{}: lattice oracle found {bad} misclassified points in {}", rec.selection, rec.threshold, p.name);
            lattice_points += 1;
        }
    }
    ensure!(sat >= 50, "only {sat} SAT trials");
    Ok(format!("{sat} SAT trials re-verified, {lattice_points} lattice sweeps clean"))
}

fn counterexample_replay() -> Outcome {
    let solver = solver()?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut violated, mut held) = (0, 0);
    for seed in 0..60 {
        let net = init_network::<f64>(&[2, 4, 2], seed).map_err(e)?.to_exact().rounded(4);
        let c = [round4(rng.random_range(-3.0..3.0)), round4(rng.random_range(-3.0..3.0))];
        let delta = round4(rng.random_range(0.2..2.0));
        let norm = if rng.random_bool(0.5) { Norm::L1 } else { Norm::Linf };
        let p = RobustnessProperty::new("r", &c, delta, norm, rng.random_range(0..2)).map_err(e)?;

        let script = verification_script(&net, &p).map_err(e)?;
        let raw = run_solver(&script, &solver);
        match raw.status {
            Status::Sat => {
                let model = raw.model.ok_or("SAT without model")?;
                let x: Vec<BigRational> = script
                    .get_values
                    .iter()
                    .map(|n| model.get(n).and_then(|v| v.as_real()).cloned().ok_or(format!("no value for {n}")))
                    .collect::<Result<_, _>>()?;
                ensure!(oracle_in_ball(&p, &x), "seed {seed}: model point {x:?} outside the ball");
                ensure!(oracle_decide(&oracle_outputs(&net, &x)) != p.target_class, "seed {seed}: model point {x:?} is classified correctly");
                let v = verify_property(&net, &p, &solver).map_err(e)?;
                ensure!(matches!(v.verdict, Verdict::Violated(_)), "seed {seed}: verify_property disagrees: {:?}", v.verdict);
                violated += 1;
            }
            Status::Unsat => {
                ensure!(dense_misclassified(&net, &p) == 0, "seed {seed}: UNSAT but the lattice finds a violation");
                held += 1;
            }
            other => return Err(format!("seed {seed}: solver said {other}")),
        }
    }
    ensure!(violated >= 10, "only {violated} violations exercised");
    Ok(format!("{violated} violations replayed exactly, {held} proofs consistent with the lattice"))
}

fn encoder_equivalence() -> Outcome {
    let solver = solver()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let topologies: [&[usize]; 4] = [&[2, 4, 2], &[2, 3, 3, 2], &[3, 5, 2], &[2, 1, 2]];
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let topo = topologies[seed as usize % topologies.len()];
        let fnet = init_network::<f64>(topo, seed).map_err(e)?;
        let net = fnet.to_exact();
        let xf: Vec<f64> = (0..topo[0]).map(|_| round4(rng.random_range(-5.0..5.0))).collect();
        let x = rational_point(&xf);
        let v = run_solver(&forward_query(&net, &x).map_err(e)?, &solver);
        ensure!(v.status == Status::Sat, "net {seed}: forward query gave {}", v.status);
        let model = v.model.ok_or("SAT without model")?;
        let exact = oracle_outputs(&net, &x);
        let float = fnet.forward(&xf).map_err(e)?;
        for (j, (ex, fl)) in exact.iter().zip(&float).enumerate() {
            let got = model.get(&format!("out{j}")).and_then(|v| v.as_real()).ok_or("missing output")?;
            ensure!(got == ex, "net {seed} out{j}: solver {got} vs exact {ex}");
            let diff = (to_f64(got) - fl).abs();
            worst = worst.max(diff);
            ensure!(diff <= 1e-9, "net {seed} out{j}: {diff:e} from forward");
        }
    }
    Ok(format!("100 nets agree exactly; largest float gap {worst:.1e}"))
}

fn structural() -> Outcome {
    let xor = Network::<f64>::zeros(&[2, 4, 2]).map_err(e)?;
    let blobs = Network::<f64>::zeros(&[2, 10, 10, 2]).map_err(e)?;
    ensure!(xor.param_count() == 22, "xor has {} parameters", xor.param_count());
    ensure!(blobs.param_count() == 162, "blobs has {} parameters", blobs.param_count());

    let binom2 = |n: usize| n * (n - 1) / 2;
    for (net, expect) in [(&xor, 231usize), (&blobs, 13041)] {
        let ids = net.enumerate_weight_ids(&WeightFilter::default());
        let pairs = build_eligible_combinations(&SearchState::new(), 2, &ids, None);
        ensure!(pairs.len() == binom2(ids.len()) && pairs.len() == expect, "{} pairs, expected {expect}", pairs.len());
    }

    let report = AccuracyReport::from_published(&[
        (Split::Train, 1562, 0.99743),
        (Split::Test, 1600, 0.99125),
        (Split::Sampled, 500, 1.0),
    ])
    .map_err(e)?;
    let counts: Vec<usize> = report.per_split.values().map(|s| s.correct).collect();
    let oracle = (1558 + 1586 + 500) as f64 / (1562 + 1600 + 500) as f64;
    ensure!(counts.iter().sum::<usize>() == 3644, "recovered counts {counts:?}");
    ensure!(format!("{:.6}", report.weighted) == "0.995085", "weighted {}", report.weighted);
    ensure!((report.weighted - oracle).abs() < 1e-15, "weighted {} vs oracle {oracle}", report.weighted);

    let ws: Vec<WeightId> = (0..4).map(|c| WeightId::weight(1, 0, c)).collect();
    let mut state = SearchState::new();
    state.unsat_marks.insert(WeightSelection::new([ws[3]]));
    let pairs = build_eligible_combinations(&state, 2, &ws, None);
    let expect: Vec<WeightSelection> =
        [(0, 1), (0, 2), (1, 2)].iter().map(|&(a, b)| WeightSelection::new([ws[a], ws[b]])).collect();
    ensure!(pairs == expect, "branching example gave {pairs:?}");

    let s = softmax(&[2.0f64, 3.0, 5.0]);
    let z: f64 = [2.0f64, 3.0, 5.0].iter().map(|v| v.exp()).sum();
    let rounded: Vec<String> = s.iter().map(|v| format!("{v:.3}")).collect();
    ensure!(rounded == ["0.042", "0.114", "0.844"], "softmax {rounded:?}");
    ensure!(s.iter().zip([2.0f64, 3.0, 5.0]).all(|(v, l)| (v - l.exp() / z).abs() < 1e-15), "softmax off the definition");
    Ok("22/162 parameters, 231/13041 pairs, 0.995085, 3 pairs, softmax (0.042, 0.114, 0.844)".into())
}

fn xor_pipeline() -> Outcome {
    let solver = solver()?;
    let fx = xor_a_fixture();
    let train_acc = nnrepair::evaluator::accuracy(&fx.net, &fx.data.train).map_err(e)?;
    ensure!(train_acc >= 0.99, "train accuracy {train_acc}");
    let props = violated_axis_properties(&fx.net, &solver, 1);
    let prop = props.first().ok_or("no violated delta-5 L1 property found")?;
    let soft = heuristic_samples(&fx.data.train, 100, 0).map_err(e)?;
    let cfg = RepairConfig { thresholds: vec![1], trial_timeout_s: 600.0, solver, ..Default::default() };
    let start = Instant::now();
    let state = greedy_repair(&fx.net, std::slice::from_ref(prop), Some(&soft), &fx.data, &cfg).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let sat = state.log.iter().filter(|r| r.is_sat()).count();
    let best = state.best.as_ref().ok_or("no SAT trial")?;
    let acc = best.accuracy.ok_or("best trial has no accuracy")?;
    ensure!(acc >= 0.80, "best weighted accuracy {acc}");
    ensure!(secs <= 900.0, "took {secs:.0}s");
    Ok(format!(
        "train acc {train_acc:.4}, {} center {:?} target {}: {sat}/{} SAT, best {} at {acc:.5}",
        prop.name,
        prop.center.iter().map(to_f64).collect::<Vec<_>>(),
        prop.target_class,
        state.log.len(),
        best.selection
    ))
}

/// Offsets `t_p` such that, with only `b2_0` free, point `p` is classified
/// as 0 iff `b2_0 > t_p` and as 1 iff `b2_0 < t_p`.
fn bias_thresholds(net: &ExactNetwork, pts: &[LabeledPoint]) -> Vec<BigRational> {
    let mut zeroed = net.clone();
    zeroed = zeroed.substitute(&BTreeMap::from([(WeightId::bias(2, 0), BigRational::zero())])).unwrap();
    pts.iter()
        .map(|p| {
            let out = oracle_outputs(&zeroed, &rational_point(&p.x));
            &out[1] - &out[0]
        })
        .collect()
}

fn brute_force_optimum(t: &[BigRational], labels: &[usize]) -> usize {
    let n = t.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let (mut lo, mut hi): (Option<&BigRational>, Option<&BigRational>) = (None, None);
        for i in (0..n).filter(|i| mask & (1 << i) != 0) {
            if labels[i] == 0 {
                lo = Some(lo.map_or(&t[i], |l| if t[i] > *l { &t[i] } else { l }));
            } else {
                hi = Some(hi.map_or(&t[i], |h| if t[i] < *h { &t[i] } else { h }));
            }
        }
        let feasible = match (lo, hi) {
            (Some(l), Some(h)) => l < h,
            _ => true,
        };
        if feasible {
            best = best.max(mask.count_ones() as usize);
        }
    }
    best
}

fn ladder_semantics() -> Outcome {
    let solver = solver()?.with_timeout(60.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let free = WeightSelection::new([WeightId::bias(2, 0)]);
    let mut summary = Vec::new();
    for (case, n) in [4usize, 6, 7, 8, 9, 10, 11, 12].into_iter().enumerate() {
        let net = init_network::<f64>(&[2, 2, 2], 100 + case as u64).map_err(e)?.to_exact().rounded(3);
        let pts: Vec<LabeledPoint> = (0..n)
            .map(|_| {
                LabeledPoint::new(
                    vec![round4(rng.random_range(-3.0..3.0)), round4(rng.random_range(-3.0..3.0))],
                    rng.random_range(0..2),
                )
            })
            .collect();
        let labels: Vec<usize> = pts.iter().map(|p| p.label).collect();
        let opt = brute_force_optimum(&bias_thresholds(&net, &pts), &labels);
        let soft = heuristic_samples(&pts, n, 0).map_err(e)?;
        let data = Dataset { train: pts.clone(), ..Default::default() };
        let ctx = TrialContext { net: &net, props: &[], soft: Some(&soft), data: &data, solver: solver.clone() };
        let ladder: Vec<usize> = (1..=n).collect();
        let recs = threshold_ladder(&ctx, &free, &ladder, 60.0);
        ensure!(recs.len() == n, "case {case}: {} records", recs.len());
        for (k, rec) in (1..=n).zip(&recs) {
            if k <= opt {
                ensure!(rec.is_sat(), "case {case}: threshold {k} <= optimum {opt} gave {} (skipped {})", rec.status, rec.skipped);
                let sub = net.substitute(rec.weight_values.as_ref().unwrap()).map_err(e)?;
                let got = soft.satisfied_count(&sub);
                ensure!(got >= k, "case {case}: model satisfies {got} < {k} constraints");
            } else if k == opt + 1 {
                ensure!(rec.status == Status::Unsat && !rec.skipped, "case {case}: threshold {k} > optimum {opt} gave {}", rec.status);
            } else {
                ensure!(rec.skipped && rec.solver_time_s == 0.0, "case {case}: threshold {k} was not skipped");
            }
        }
        summary.push(format!("{opt}/{n}"));
    }
    Ok(format!("optimum/size per case: {}", summary.join(" ")))
}

struct XorB {
    data: Dataset,
    float_net: FloatNetwork,
    net: ExactNetwork,
    train_cfg: TrainConfig,
}

fn xor_b_fixture() -> XorB {
    let seed = 11;
    let mut data = generate_mixture(&xor_b_spec(), 1562, 1600, seed).unwrap();
    let train_cfg = TrainConfig::sgd(0.01, 50, seed);
    let float_net = train(&init_network::<f64>(&[2, 4, 2], seed).unwrap(), &data.train, &train_cfg).unwrap();
    let net = float_net.to_exact().rounded(6);
    data.sampled = sample_uniform_labeled(&net, &default_bounds(&data.train).unwrap(), 500, seed).unwrap();
    XorB { data, float_net, net, train_cfg }
}

fn baseline_comparison() -> Outcome {
    let solver = solver()?;
    let fx = xor_b_fixture();
    let p1 = RobustnessProperty::new("P1", &[50.0, -15.0], 5.0, Norm::L1, 1).map_err(e)?;
    let p2 = RobustnessProperty::new("P2", &[7.0, -15.0], 5.0, Norm::L1, 1).map_err(e)?;
    for p in [&p1, &p2] {
        let v = verify_property(&fx.net, p, &solver).map_err(e)?;
        ensure!(matches!(v.verdict, Verdict::Violated(_)), "{} is not violated on the reproduction", p.name);
    }
    let soft = heuristic_samples(&fx.data.train, 450, 11).map_err(e)?;
    let mut cells = Vec::new();
    let mut losses = Vec::new();
    for (name, props, max_size) in [("1st", vec![p1.clone()], 1), ("2nd", vec![p2.clone()], 1), ("both", vec![p1, p2], 2)] {
        let cfg = RepairConfig {
            thresholds: vec![1, 250, 400],
            trial_timeout_s: 60.0,
            max_combination_size: max_size,
            solver: solver.clone(),
            ..Default::default()
        };
        let state = greedy_repair(&fx.net, &props, Some(&soft), &fx.data, &cfg).map_err(e)?;
        let ours = state.best.as_ref().and_then(|b| b.accuracy);

        let base = naive_baseline(&fx.float_net, &props, &fx.data.train, &fx.train_cfg, &BaselineConfig { seed: 11, ..Default::default() }, &solver)
            .map_err(e)?;
        ensure!(base.iterations <= 20 && base.log.len() == base.iterations, "{name}: baseline ran {} iterations", base.iterations);
        let base_acc = if base.safe {
            for p in &props {
                ensure!(verify_property(&base.net, p, &solver).map_err(e)?.holds(), "{name}: baseline exited safe but {} fails", p.name);
            }
            Some(weighted_accuracy(&base.net, &fx.data).map_err(e)?.weighted)
        } else {
            None
        };
        let fmt = |a: Option<f64>| a.map_or("none".to_string(), |v| format!("{:.3}%", v * 100.0));
        cells.push(format!("{name}: ours {} vs baseline {} ({} iters)", fmt(ours), fmt(base_acc), base.iterations));
        let wins = match (ours, base_acc) {
            (Some(o), Some(b)) => o >= b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if !wins {
            losses.push(name);
        }
    }
    ensure!(losses.is_empty(), "baseline ahead on {losses:?}; {}", cells.join("; "));
    Ok(cells.join("; "))
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rect = Rect::new(vec![int(-50), int(-40)], vec![int(45), int(55)]).map_err(e)?;
    let gens: Vec<Vec<BigRational>> = (0..60)
        .map(|_| rational_point(&[round4(rng.random_range(-50.0..45.0)), round4(rng.random_range(-40.0..55.0))]))
        .collect();
    let cells = voronoi_cells(&gens, &rect).map_err(e)?;
    let mut ties = 0;
    for _ in 0..1000 {
        let x = rational_point(&[round4(rng.random_range(-50.0..45.0)), round4(rng.random_range(-40.0..55.0))]);
        let dists: Vec<BigRational> = gens.iter().map(|g| sq_dist(g, &x)).collect();
        let nearest = dists.iter().min().unwrap();
        let expect: Vec<usize> = (0..gens.len()).filter(|&i| dists[i] == *nearest).collect();
        let inside: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].contains(&x)).collect();
        ensure!(inside == expect, "point {x:?}: cells {inside:?}, nearest {expect:?}");
        if inside.len() > 1 {
            ties += 1;
        }
    }

    let grid_rect = Rect::new(vec![ratio(-101, 2), int(-40)], vec![ratio(197, 4), int(55)]).map_err(e)?;
    let grid = grid_cells(&grid_rect, 21).map_err(e)?;
    ensure!(grid.len() == 441, "{} grid cells", grid.len());
    let total: BigRational = grid.iter().map(|c| c.bounds.volume()).fold(BigRational::zero(), |s, v| s + v);
    ensure!(total == grid_rect.volume(), "cell areas sum to {total}, not {}", grid_rect.volume());
    for (i, a) in grid.iter().enumerate() {
        ensure!(a.bounds.lo.iter().zip(&grid_rect.lo).all(|(l, r)| l >= r), "cell {i} leaves the rectangle");
        ensure!(a.bounds.hi.iter().zip(&grid_rect.hi).all(|(h, r)| h <= r), "cell {i} leaves the rectangle");
        for b in &grid[i + 1..] {
            let overlap = (0..2).all(|d| a.bounds.lo[d] < b.bounds.hi[d] && b.bounds.lo[d] < a.bounds.hi[d]);
            ensure!(!overlap, "cells {:?} and {:?} overlap", a.index, b.index);
        }
    }

    let fx = xor_b_fixture();
    let bounds = default_bounds(&fx.data.train).map_err(e)?;
    let mut sizes = Vec::new();
    for (what, got, want) in [
        ("samples 100", heuristic_samples(&fx.data.train, 100, 0).map_err(e)?.len(), 100),
        ("samples 450", heuristic_samples(&fx.data.train, 450, 0).map_err(e)?.len(), 450),
        (
            "grid 21x21",
            heuristic_grid(&fx.net, &GridConfig { rect: bounds.clone(), cells_per_axis: 21, samples_per_cell: 1, seed: 0 })
                .map_err(e)?
                .len(),
            441,
        ),
        (
            "voronoi 153",
            heuristic_voronoi(&fx.net, &VoronoiConfig::from_sampled(&fx.data.sampled, 153, bounds.clone(), 0).map_err(e)?)
                .map_err(e)?
                .len(),
            153,
        ),
    ] {
        ensure!(got == want, "{what}: {got} constraints");
        sizes.push(format!("{got}"));
    }
    Ok(format!("1000 Voronoi lookups match nearest generator ({ties} ties); 441-cell grid partitions exactly; cardinalities {}", sizes.join("/")))
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let h = 1e-3;
    for seed in 0..20u64 {
        let net = init_network::<f64>(&[2, 1, 2], seed).map_err(e)?;
        ensure!(net.param_count() == 7, "{} parameters", net.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<LabeledPoint> =
            (0..8).map(|_| LabeledPoint::new(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], rng.random_range(0..2))).collect();
        let (_, grads) = gradients(&net, &batch).map_err(e)?;
        let bump = |id: &WeightId, by: f64| -> f64 {
            let mut layers: Vec<LayerParams<f64>> = net.layers().to_vec();
            let l = &mut layers[id.layer - 1];
            match id.kind {
                ParamKind::Weight => l.weights[id.row][id.col] += by,
                ParamKind::Bias => l.biases[id.row] += by,
            }
            loss(&Network::new(layers).unwrap(), &batch).unwrap()
        };
        for id in net.enumerate_weight_ids(&WeightFilter::default()) {
            let g = &grads[id.layer - 1];
            let an = match id.kind {
                ParamKind::Weight => g.weights[id.row][id.col],
                ParamKind::Bias => g.biases[id.row],
            };
            let fd = (bump(&id, h) - bump(&id, -h)) / (2.0 * h);
            let err = (an - fd).abs();
            if err <= 1e-8 {
                continue;
            }
            let rel = err / an.abs().max(fd.abs());
            worst = worst.max(rel);
            ensure!(rel <= 1e-4, "seed {seed} {id}: analytic {an} vs numeric {fd}");
        }
    }
    Ok(format!("20 nets x 7 parameters, worst relative error {worst:.1e}"))
}

fn appendix_net(w21: i64, b21: i64, w22: i64, b22: i64) -> ExactNetwork {
    Network::new(vec![
        LayerParams { weights: vec![vec![int(1), int(1)]], biases: vec![int(0)] },
        LayerParams { weights: vec![vec![int(w21)], vec![int(w22)]], biases: vec![int(b21), int(b22)] },
    ])
    .unwrap()
}

fn golden_scripts() -> Outcome {
    let prop = RobustnessProperty::new("phi", &[0.25, 0.25], 0.25, Norm::Linf, 0).map_err(e)?;
    let free = WeightSelection::new([WeightId::weight(2, 0, 0), WeightId::bias(2, 0)]);
    // out1 = -n - 1 < out2 = -n on the whole box.
    let model_a = appendix_net(-1, -1, -1, 0);
    let emit = || encode_repair(&model_a, &free, std::slice::from_ref(&prop), None).and_then(|s| s.emit()).map_err(e);
    let text = emit()?;
    ensure!(text == emit()?, "two emissions differ");
    let golden = include_str!("golden/appendix_repair.smt2");
    ensure!(text == golden, "script differs from the golden file:\n{text}");

    let solver = solver()?;
    let v = verify_property(&model_a, &prop, &solver).map_err(e)?;
    ensure!(matches!(v.verdict, Verdict::Violated(_)), "model A should violate phi, got {:?}", v.verdict);

    let sat = run_solver(&encode_repair(&model_a, &free, std::slice::from_ref(&prop), None).map_err(e)?, &solver);
    ensure!(sat.status == Status::Sat, "free {{w21, b21}}: {}", sat.status);
    let m = sat.model.ok_or("SAT without model")?;
    let values: BTreeMap<WeightId, BigRational> = free
        .iter()
        .map(|id| (*id, m.get(&id.symbol()).and_then(|v| v.as_real()).cloned().unwrap()))
        .collect();
    let model_b = model_a.substitute(&values).map_err(e)?;
    ensure!(verify_property(&model_b, &prop, &solver).map_err(e)?.holds(), "model B from {values:?} is not safe");

    // With b22 = 1 the input (0, 0) gives n = 0, out1 = b21 = 0 < out2 = 1
    // whatever w21 is.
    let stuck = appendix_net(-1, 0, -1, 1);
    let only_w21 = WeightSelection::new([WeightId::weight(2, 0, 0)]);
    let unsat = run_solver(&encode_repair(&stuck, &only_w21, &[prop], None).map_err(e)?, &solver);
    ensure!(unsat.status == Status::Unsat, "free {{w21}} with b22 = 1: {}", unsat.status);
    Ok(format!("golden script stable ({} bytes); SAT with {values:?}; UNSAT as derived", text.len()))
}

#[test]
fn acceptance_criteria() {
    let results = [
        criterion(1, "soundness round-trip", soundness_round_trip),
        criterion(2, "counterexample replay", counterexample_replay),
        criterion(3, "encoder/evaluator equivalence", encoder_equivalence),
        criterion(4, "structural reproductions", structural),
        criterion(5, "XOR pipeline", xor_pipeline),
        criterion(6, "threshold ladder", ladder_semantics),
        criterion(7, "baseline contract", baseline_comparison),
        criterion(8, "geometry", geometry),
        criterion(9, "gradient check", gradient_check),
        criterion(10, "golden SMT files", golden_scripts),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
