use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nnrepair::datagen::{default_bounds, generate_mixture, sample_uniform_labeled, spec_by_name, Dataset};
use nnrepair::encoder::{
    heuristic_grid, heuristic_samples, heuristic_voronoi, load_properties, verify_property, GridConfig,
    RobustnessProperty, SoftConstraintSet, Verdict, VoronoiConfig,
};
use nnrepair::evaluator::{
    aggregate_trials, boundary_svg, weighted_accuracy, write_aggregate_csv, write_compare_csv, CompareEntry,
    GroupBy, Overlays,
};
use nnrepair::geometry::Rect;
use nnrepair::network::{LayerFilter, ParamKind, WeightFilter};
use nnrepair::repair::{
    greedy_repair, naive_baseline, read_trial_log, write_trial_log, BaselineConfig, RepairConfig, SearchOutcome,
};
use nnrepair::smt::SolverConfig;
use nnrepair::trainer::{init_network, train, Optimizer, TrainConfig};
use nnrepair::{ExactNetwork, FloatNetwork};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nnrepair", version, about = "Repair small ReLU classifiers against robustness properties")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dataset.
    GenData {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults: 2400 for xor-a, 1562 for xor-b, 6000 for blobs.
        #[arg(long)]
        n_train: Option<usize>,
        /// Defaults: 1600, or 4000 for blobs.
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a network on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,2")]
        topology: Vec<usize>,
        #[command(flatten)]
        opt: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also draw this many uniform points labelled by the trained
        /// network and store them as the data directory's sampled split.
        #[arg(long, default_value_t = 0)]
        sampled: usize,
        /// Decimal places kept in the exported parameters.
        #[arg(long, default_value_t = 6)]
        decimals: u32,
    },
    /// Greedy repair of a model against a property file.
    Repair(RepairArgs),
    /// Retraining baseline: verify, add specification points, retrain.
    Baseline {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        props: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_iters: usize,
        #[arg(long, default_value_t = 200)]
        n_spec: usize,
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[command(flatten)]
        opt: TrainArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy per split and, with --props, property verdicts.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        props: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Decision-boundary SVG.
    Plot {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        props: Option<PathBuf>,
        /// x_lo,y_lo,x_hi,y_hi; defaults to the training bounds.
        #[arg(long, value_delimiter = ',')]
        bounds: Option<Vec<f64>>,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        /// Draw L1 balls as squares.
        #[arg(long)]
        l1_square: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a trial log into a summary table.
    Report {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, value_enum, default_value_t = Group::Threshold)]
        group_by: Group,
        /// Weighted accuracy of the original network, as a fraction.
        #[arg(long)]
        accuracy_before: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Our best result against the baseline, one column per property set.
    Compare {
        /// NAME=REPAIR_DIR:BASELINE_DIR, repeatable.
        #[arg(long = "pair", required = true)]
        pairs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Threshold,
    Heuristic,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicArg {
    Samples,
    Grid,
    Voronoi,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        };
        TrainConfig { optimizer, batch_size: self.batch_size, ..TrainConfig::sgd(self.lr, self.epochs, self.seed) }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Solver command line, reading SMT-LIB2 on stdin.
    #[arg(long, default_value = "z3 -in")]
    solver: String,
    /// Per-query timeout for verification queries, in seconds.
    #[arg(long, default_value_t = 600.0)]
    verify_timeout: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig::default().command(&self.solver).with_timeout(self.verify_timeout)
    }
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    props: PathBuf,
    /// Dataset directory used for the heuristics and for accuracy.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = HeuristicArg::Samples)]
    heuristic: HeuristicArg,
    /// Training points used by the samples heuristic; all by default.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 10)]
    grid_cells: usize,
    #[arg(long, default_value_t = 3)]
    samples_per_cell: usize,
    /// Generators for the Voronoi heuristic, drawn from the sampled split.
    #[arg(long, default_value_t = 153)]
    generators: usize,
    #[arg(long, default_value_t = 0)]
    heuristic_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    thresholds: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    max_size: usize,
    /// Build pairs only from the best k singletons.
    #[arg(long)]
    top_k: Option<usize>,
    /// Only free parameters of this layer (1-based, or "last").
    #[arg(long)]
    layer: Option<String>,
    /// Only free weights or only biases.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 600.0)]
    trial_timeout: f64,
    #[arg(long, default_value_t = 36000.0)]
    global_timeout: f64,
    /// Concurrent trials; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Repair even if every property already holds.
    #[arg(long)]
    allow_satisfied: bool,
    /// Keep every emitted solver script under OUT/scripts.
    #[arg(long)]
    archive: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::GenData { spec, seed, out, n_train, n_test } => gen_data(&spec, seed, &out, n_train, n_test),
        Cmd::Train { data, topology, opt, out, sampled, decimals } => {
            train_cmd(&data, &topology, &opt, &out, sampled, decimals)
        }
        Cmd::Repair(args) => repair_cmd(&args),
        Cmd::Baseline { model, props, data, max_iters, n_spec, n_train, opt, solver, out } => {
            let cfg = BaselineConfig { max_iters, n_spec, n_train, seed: opt.seed };
            baseline_cmd(&model, &props, &data, &cfg, &opt.config(), &solver.config(), &out)
        }
        Cmd::Eval { model, data, props, solver } => eval_cmd(&model, &data, props.as_deref(), &solver.config()),
        Cmd::Plot { model, data, props, bounds, resolution, l1_square, out } => {
            plot_cmd(&model, data.as_deref(), props.as_deref(), bounds, resolution, l1_square, &out)
        }
        Cmd::Report { trials, group_by, accuracy_before, out } => {
            let records = read_trial_log(&trials)?;
            let group = match group_by {
                Group::Threshold => GroupBy::Threshold,
                Group::Heuristic => GroupBy::Heuristic,
            };
            write_aggregate_csv(&out, &aggregate_trials(&records, group, accuracy_before))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Compare { pairs, out } => compare_cmd(&pairs, &out),
    }
}

fn gen_data(spec: &str, seed: u64, out: &Path, n_train: Option<usize>, n_test: Option<usize>) -> Result<()> {
    let mix = spec_by_name(spec)?;
    let (dtrain, dtest) = match spec {
        "xor-b" => (1562, 1600),
        "blobs" => (6000, 4000),
        _ => (2400, 1600),
    };
    let data = generate_mixture(&mix, n_train.unwrap_or(dtrain), n_test.unwrap_or(dtest), seed)?;
    data.save(out)?;
    println!("{}: {} train, {} test -> {}", spec, data.train.len(), data.test.len(), out.display());
    Ok(())
}

fn train_cmd(data_dir: &Path, topology: &[usize], opt: &TrainArgs, out: &Path, sampled: usize, decimals: u32) -> Result<()> {
    let mut data = Dataset::load(data_dir)?;
    let net0 = init_network::<f64>(topology, opt.seed)?;
    let net = train(&net0, &data.train, &opt.config())?;
    let exact = net.to_exact().rounded(decimals);
    exact.save(out)?;
    if sampled > 0 {
        let bounds = default_bounds(&data.train)?;
        data.sampled = sample_uniform_labeled(&exact, &bounds, sampled, opt.seed)?;
        data.save(data_dir)?;
    }
    let report = weighted_accuracy(&exact, &data)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("model -> {}", out.display());
    Ok(())
}

fn weight_filter(layer: Option<&str>, kind: Option<&str>) -> Result<WeightFilter> {
    let layer = match layer {
        None => LayerFilter::Any,
        Some("last") => LayerFilter::Last,
        Some(n) => LayerFilter::Index(n.parse().with_context(|| format!("bad layer {n:?}"))?),
    };
    let kind = match kind {
        None => None,
        Some("weight") => Some(ParamKind::Weight),
        Some("bias") => Some(ParamKind::Bias),
        Some(k) => bail!("bad parameter kind {k:?}; expected weight or bias"),
    };
    Ok(WeightFilter { layer, kind })
}

fn build_soft(args: &RepairArgs, net: &ExactNetwork, data: &Dataset) -> Result<Option<SoftConstraintSet>> {
    Ok(match args.heuristic {
        HeuristicArg::None => None,
        HeuristicArg::Samples => {
            let m = args.m.unwrap_or(data.train.len());
            Some(heuristic_samples(&data.train, m, args.heuristic_seed)?)
        }
        HeuristicArg::Grid => {
            let cfg = GridConfig {
                rect: default_bounds(&data.train)?,
                cells_per_axis: args.grid_cells,
                samples_per_cell: args.samples_per_cell,
                seed: args.heuristic_seed,
            };
            Some(heuristic_grid(net, &cfg)?)
        }
        HeuristicArg::Voronoi => {
            if data.sampled.is_empty() {
                bail!("the Voronoi heuristic needs a sampled split; train with --sampled N");
            }
            let cfg = VoronoiConfig::from_sampled(
                &data.sampled,
                args.generators,
                default_bounds(&data.train)?,
                args.heuristic_seed,
            )?;
            Some(heuristic_voronoi(net, &cfg)?)
        }
    })
}

fn repair_cmd(args: &RepairArgs) -> Result<()> {
    let net = ExactNetwork::load(&args.model)?;
    let props = load_properties(&args.props)?;
    let data = Dataset::load(&args.data)?;
    let soft = build_soft(args, &net, &data)?;
    fs::create_dir_all(&args.out)?;
    let mut solver = args.solver.config();
    if args.archive {
        solver.archive_dir = Some(args.out.join("scripts"));
    }
    let cfg = RepairConfig {
        max_combination_size: args.max_size,
        trial_timeout_s: args.trial_timeout,
        global_timeout_s: args.global_timeout,
        thresholds: args.thresholds.clone(),
        weight_filter: weight_filter(args.layer.as_deref(), args.kind.as_deref())?,
        top_k_for_greedy: args.top_k,
        allow_satisfied: args.allow_satisfied,
        workers: args.workers,
        solver,
    };
    let before = weighted_accuracy(&net, &data)?.weighted;
    let state = greedy_repair(&net, &props, soft.as_ref(), &data, &cfg)?;
    write_trial_log(&args.out.join("trials.csv"), &state.log)?;
    write_aggregate_csv(
        &args.out.join("by_threshold.csv"),
        &aggregate_trials(&state.log, GroupBy::Threshold, Some(before)),
    )?;
    if let Some(repaired) = state.repaired_network(&net) {
        repaired?.save(&args.out.join("best_model.json"))?;
    }
    let best = state.best.as_ref();
    let summary = json!({
        "outcome": format!("{:?}", state.outcome),
        "violated": state.violated,
        "accuracy_before": before,
        "best_accuracy": best.and_then(|b| b.accuracy),
        "best_selection": best.map(|b| b.selection.to_string()),
        "best_threshold": best.map(|b| b.threshold),
        "trials": state.log.len(),
        "unsat_marks": state.unsat_marks.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "elapsed_s": state.elapsed_s,
        "soft_constraints": soft.as_ref().map(|s| s.len()),
        "heuristic": soft.as_ref().map(|s| s.provenance.clone()),
    });
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    match state.outcome {
        SearchOutcome::AlreadySafe => println!("every property already holds; nothing to repair"),
        _ => println!(
            "{:?}: {} trials, best {}",
            state.outcome,
            state.log.len(),
            best.map_or("none".to_string(), |b| format!(
                "{} @ {} -> {:.5}",
                b.selection,
                b.threshold,
                b.accuracy.unwrap_or(f64::NAN)
            ))
        ),
    }
    Ok(())
}

fn baseline_cmd(
    model: &Path,
    props: &Path,
    data_dir: &Path,
    cfg: &BaselineConfig,
    train_cfg: &TrainConfig,
    solver: &SolverConfig,
    out: &Path,
) -> Result<()> {
    let net: FloatNetwork = ExactNetwork::load(model)?.to_f64();
    let props = load_properties(props)?;
    let data = Dataset::load(data_dir)?;
    let result = naive_baseline(&net, &props, &data.train, train_cfg, cfg, solver)?;
    fs::create_dir_all(out)?;
    let exact = result.net.to_exact();
    exact.save(&out.join("baseline_model.json"))?;
    let accuracy = weighted_accuracy(&exact, &data)?.weighted;
    let summary = json!({
        "safe": result.safe,
        "iterations": result.iterations,
        "retrainings": result.retrainings,
        "accuracy": accuracy,
        "log": result.log.iter().map(|it| json!({
            "iteration": it.iteration,
            "training_size": it.training_size,
            "statuses": it.statuses.iter().map(|(n, s)| json!([n, s.to_string()])).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{} after {} iterations, accuracy {accuracy:.5}",
        if result.safe { "safe" } else { "still unsafe" },
        result.iterations
    );
    Ok(())
}

fn eval_cmd(model: &Path, data_dir: &Path, props: Option<&Path>, solver: &SolverConfig) -> Result<()> {
    let net = ExactNetwork::load(model)?;
    let data = Dataset::load(data_dir)?;
    let report = weighted_accuracy(&net, &data)?;
    let mut verdicts = Vec::new();
    if let Some(p) = props {
        for prop in load_properties(p)? {
            let v = verify_property(&net, &prop, solver)?;
            let (verdict, cex) = match &v.verdict {
                Verdict::Holds => ("holds".to_string(), None),
                Verdict::Violated(x) => (
                    "violated".to_string(),
                    Some(x.iter().map(nnrepair::rational::format_rational).collect::<Vec<_>>()),
                ),
                Verdict::Inconclusive(s) => (format!("inconclusive ({s})"), None),
            };
            verdicts.push(json!({ "property": prop.name, "verdict": verdict, "counterexample": cex }));
        }
    }
    println!("{}", serde_json::to_string_pretty(&json!({ "accuracy": report, "properties": verdicts }))?);
    Ok(())
}

fn plot_cmd(
    model: &Path,
    data_dir: Option<&Path>,
    props: Option<&Path>,
    bounds: Option<Vec<f64>>,
    resolution: usize,
    l1_square: bool,
    out: &Path,
) -> Result<()> {
    let net = ExactNetwork::load(model)?.to_f64();
    let data = data_dir.map(Dataset::load).transpose()?;
    let props: Vec<RobustnessProperty> = props.map(load_properties).transpose()?.unwrap_or_default();
    let rect = match (bounds, &data) {
        (Some(b), _) => {
            if b.len() != 4 {
                bail!("--bounds takes x_lo,y_lo,x_hi,y_hi");
            }
            Rect::new(vec![b[0], b[1]], vec![b[2], b[3]])?
        }
        (None, Some(d)) => default_bounds(&d.train)?,
        (None, None) => bail!("give --bounds or --data"),
    };
    let empty = Vec::new();
    let overlays = Overlays {
        train: data.as_ref().map_or(&empty, |d| &d.train),
        test: data.as_ref().map_or(&empty, |d| &d.test),
        sampled: data.as_ref().map_or(&empty, |d| &d.sampled),
        properties: &props,
        l1_as_square: l1_square,
    };
    fs::write(out, boundary_svg(&net, &rect, resolution, &overlays)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn read_summary(dir: &Path) -> Result<serde_json::Value> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn compare_cmd(pairs: &[String], out: &Path) -> Result<()> {
    let mut entries = Vec::new();
    for p in pairs {
        let (name, dirs) = p.split_once('=').with_context(|| format!("bad pair {p:?}"))?;
        let (ours, base) = dirs.split_once(':').with_context(|| format!("bad pair {p:?}"))?;
        let ours = read_summary(Path::new(ours))?;
        let base = read_summary(Path::new(base))?;
        let baseline = if base["safe"].as_bool() == Some(true) { base["accuracy"].as_f64() } else { None };
        entries.push(CompareEntry { property: name.to_string(), ours: ours["best_accuracy"].as_f64(), baseline });
    }
    write_compare_csv(out, &entries)?;
    println!("wrote {}", out.display());
    Ok(())
}
