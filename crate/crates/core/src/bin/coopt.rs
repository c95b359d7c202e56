use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coopt_core::coopt::{fit, CooptParams};
use coopt_core::harness::{
    generate_scenario, power_from_values, read_dataset, read_grid_base, read_grouped, read_two, roc,
    space_for_data, write_samples, InputMode, ScenarioSpec, Statistic, StatisticSettings,
};
use coopt_core::numerics::RandomStream;
use coopt_core::opt::{gof_statistic, BaseMeasure, OptParams, UniformBase};
use coopt_core::oracle::{brute_force_coopt, DEFAULT_ENUMERATION_BOUND};
use coopt_core::space::{Dataset, SampleSpace, SpaceKind};
use coopt_core::trees::{distance_samples, hmap_tree, Metric};
use coopt_core::{Error, Result};

#[derive(Parser)]
#[command(name = "coopt", version, about = "Two-sample inference with coupling optional Polya trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether two samples share a distribution; prints gamma_post of the whole space.
    Test(TestArgs),
    /// Write the hMAP coupling tree.
    Hmap(TestArgs),
    /// Draw posterior L1 or squared-Hellinger distances.
    Distance(DistanceArgs),
    /// One-sample goodness of fit; prints rho_post of the whole space.
    Gof(GofArgs),
    /// Generate samples from a named scenario.
    Simulate(SimulateArgs),
    /// ROC curve of a statistic on a scenario.
    Roc(RocArgs),
    /// Power of a statistic at a level on a scenario.
    Power(PowerArgs),
    /// Compare the engine with brute-force enumeration on a small table.
    #[command(hide = true)]
    Oracle(TwoSampleInput),
}

#[derive(Args)]
struct TwoSampleInput {
    #[arg(long, requires = "input2", conflicts_with_all = ["input", "group"])]
    input1: Option<PathBuf>,
    #[arg(long)]
    input2: Option<PathBuf>,
    /// One file holding both samples, split by `--group`.
    #[arg(long, requires = "group")]
    input: Option<PathBuf>,
    /// Group column; its lexicographically smaller label is sample 1.
    #[arg(long)]
    group: Option<String>,
    #[arg(long, default_value = "continuous")]
    mode: InputMode,
    /// Explicit bounds `lo:hi,lo:hi,...`; default is the pooled data range.
    #[arg(long)]
    bounds: Option<String>,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long, default_value_t = 0.5)]
    gamma0: f64,
    #[arg(long, default_value_t = 0.5)]
    rho0: f64,
    /// Relative-measure cutoff for forced terminal nodes.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    max_depth: Option<u32>,
}

impl PriorArgs {
    fn coopt(&self, cutoff: f64) -> CooptParams {
        CooptParams {
            gamma0: self.gamma0,
            rho0: self.rho0,
            cutoff: self.cutoff.unwrap_or(cutoff),
            max_depth: self.max_depth,
            ..CooptParams::default()
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: TwoSampleInput,
    #[command(flatten)]
    prior: PriorArgs,
    /// Output file (JSON); the hMAP text tree always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistanceArgs {
    #[command(flatten)]
    input: TwoSampleInput,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, default_value = "l1")]
    metric: Metric,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write draws here (one per line) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GofArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "continuous")]
    mode: InputMode,
    /// `uniform` or a grid file with index columns and a `mass` column.
    #[arg(long, default_value = "uniform")]
    base: String,
    #[arg(long)]
    bounds: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    rho0: f64,
    #[arg(long, default_value_t = 1e-3)]
    cutoff: f64,
    #[arg(long)]
    max_depth: Option<u32>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "coopt")]
    statistic: Statistic,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    /// Gibbs burn-in and kept draws for the epsilon statistic.
    #[arg(long, default_value_t = 10_000)]
    gibbs_iters: usize,
    /// ROC table output (delimited); default stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    roc: RocArgs,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
}

fn parse_bounds(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| Error::Input(format!("bounds entry `{pair}` is not lo:hi")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Input(format!("bad bound `{s}`")))
            };
            Ok((parse(lo)?, parse(hi)?))
        })
        .collect()
}

fn load_two(input: &TwoSampleInput) -> Result<(SampleSpace, Dataset, Dataset)> {
    let (d1, d2) = match (&input.input1, &input.input2, &input.input, &input.group) {
        (Some(a), Some(b), None, None) => read_two(a, b, input.mode)?,
        (None, None, Some(f), Some(g)) => {
            let (d1, d2, _) = read_grouped(f, g, input.mode)?;
            (d1, d2)
        }
        _ => {
            return Err(Error::Input(
                "give either --input1 and --input2, or --input with --group".into(),
            ))
        }
    };
    let bounds = input.bounds.as_deref().map(parse_bounds).transpose()?;
    let space = space_for_data(input.mode, &d1, &d2, bounds)?;
    Ok((space, d1, d2))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn scenario_sizes(spec: &ScenarioSpec, n1: Option<usize>, n2: Option<usize>) -> (usize, usize) {
    (n1.unwrap_or(spec.default_sizes.0), n2.unwrap_or(spec.default_sizes.1))
}

fn run_roc(args: &RocArgs) -> Result<(ScenarioSpec, coopt_core::harness::RocResult)> {
    let spec = ScenarioSpec::by_name(&args.scenario)?;
    let (n1, n2) = scenario_sizes(&spec, args.n1, args.n2);
    let mut settings = StatisticSettings {
        coopt: args.prior.coopt(1e-3),
        ..StatisticSettings::default()
    };
    settings.gibbs.burn_in = args.gibbs_iters;
    settings.gibbs.kept = args.gibbs_iters;
    let result = roc(args.statistic, &spec, n1, n2, args.reps, &settings, &RandomStream::new(args.seed))?;
    Ok((spec, result))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Test(args) => {
            let (space, d1, d2) = load_two(&args.input)?;
            let table = fit(&space, &d1, &d2, &args.prior.coopt(1e-3))?;
            println!("gamma_post {}", table.coupling_statistic());
            if let Some(path) = &args.out {
                serde_json::to_writer_pretty(output(Some(path))?, &table.to_json()?)?;
            }
        }
        Command::Hmap(args) => {
            let (space, d1, d2) = load_two(&args.input)?;
            let table = fit(&space, &d1, &d2, &args.prior.coopt(1e-3))?;
            let tree = hmap_tree(&table)?;
            print!("{}", tree.render());
            if let Some(path) = &args.out {
                serde_json::to_writer_pretty(output(Some(path))?, &tree.to_json())?;
            }
        }
        Command::Distance(args) => {
            let (space, d1, d2) = load_two(&args.input)?;
            let table = fit(&space, &d1, &d2, &args.prior.coopt(1e-4))?;
            let sample = distance_samples(&table, args.metric, args.draws, &RandomStream::new(args.seed))?;
            let mut out = output(args.out.as_deref())?;
            if args.out.is_some() {
                for v in &sample.values {
                    writeln!(out, "{v}")?;
                }
                out.flush()?;
            } else {
                for v in &sample.values {
                    println!("{v}");
                }
            }
            let summary = format!(
                "mean {} q2.5 {} q50 {} q97.5 {}",
                sample.mean(),
                sample.quantile(0.025),
                sample.quantile(0.5),
                sample.quantile(0.975)
            );
            if args.out.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
        }
        Command::Gof(args) => {
            let data = read_dataset(&args.input, args.mode)?;
            let bounds = args.bounds.as_deref().map(parse_bounds).transpose()?;
            let space = space_for_data(args.mode, &data, &data, bounds)?;
            let params = OptParams {
                rho0: args.rho0,
                cutoff: args.cutoff,
                max_depth: args.max_depth,
                ..OptParams::default()
            };
            let grid;
            let base: &dyn BaseMeasure = if args.base == "uniform" {
                &UniformBase
            } else {
                grid = read_grid_base(Path::new(&args.base))?;
                grid.check_space(&space)?;
                &grid
            };
            let rho = gof_statistic(&space, &space.bin(&data)?, &params, base)?;
            println!("rho_post {rho}");
        }
        Command::Simulate(args) => {
            let spec = ScenarioSpec::by_name(&args.scenario)?;
            let (n1, n2) = scenario_sizes(&spec, args.n1, args.n2);
            let (d1, d2) = generate_scenario(&spec, n1, n2, &mut RandomStream::new(args.seed))?;
            let table = spec.kind == SpaceKind::BinaryTable;
            write_samples(output(args.out.as_deref())?, &d1, &d2, table)?;
        }
        Command::Roc(args) => {
            let (_, result) = run_roc(&args)?;
            let mut out = output(args.out.as_deref())?;
            writeln!(out, "fpr,tpr")?;
            for (f, t) in &result.points {
                writeln!(out, "{f},{t}")?;
            }
            out.flush()?;
            drop(out);
            if args.out.is_some() {
                println!("auc {}", result.auc);
            } else {
                eprintln!("auc {}", result.auc);
            }
        }
        Command::Power(args) => {
            let (_, result) = run_roc(&args.roc)?;
            let stat = args.roc.statistic;
            let ev = |v: &[f64]| v.iter().map(|&x| stat.evidence(x)).collect::<Vec<_>>();
            let power = power_from_values(&ev(&result.null_values), &ev(&result.alt_values), args.level)?;
            println!("power {power}");
            println!("auc {}", result.auc);
        }
        Command::Oracle(input) => {
            if input.mode != InputMode::Table {
                return Err(Error::Input("the oracle needs --mode table".into()));
            }
            let (space, d1, d2) = load_two(&input)?;
            let params = CooptParams::default();
            let oracle = brute_force_coopt(&space, &d1, &d2, &params, DEFAULT_ENUMERATION_BOUND)?;
            let engine = fit(&space, &d1, &d2, &params)?;
            println!("configurations {}", oracle.configs.len());
            println!("oracle_log_marginal {}", oracle.log_marginal);
            println!("engine_log_marginal {}", engine.log_marginal(space.root())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::ResourceLimit { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
