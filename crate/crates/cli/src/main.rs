use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cvrp_cli::bench::{self, BenchSpec};
use cvrp_cli::exit_code;
use cvrp_cli::pipeline::{solve, Mode, ShiftPolicy, SolveOptions, Typing, SCHEMA_VERSION};
use cvrp_cli::plot::plot;
use cvrp_qptas::dp::DpParams;
use cvrp_qptas::solution::{
    is_feasible, parse_solution, tour_length, FeasibilityReport, Violation,
};
use cvrp_qptas::{
    build_dissection, generate_instance, parse_instance, perturb, Distribution, Error, InstanceF64,
    Solution,
};

#[derive(Parser)]
#[command(
    name = "cvrp",
    version,
    about = "Capacitated vehicle routing in the Euclidean plane"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance.
    Gen(GenArgs),
    /// Solve an instance.
    Solve(SolveArgs),
    /// Check a solution for feasibility.
    Check(CheckArgs),
    /// Compare modes on a generated corpus.
    Bench(BenchArgs),
    /// Draw an instance, a solution and optionally the dissection.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Clustered,
}

impl From<Dist> for Distribution {
    fn from(d: Dist) -> Self {
        match d {
            Dist::Uniform => Distribution::Uniform,
            Dist::Clustered => Distribution::Clustered,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: Dist,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags shared by `solve` and `bench`.
#[derive(Args)]
struct SchemeArgs {
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "qptas")]
    mode: Mode,
    /// Portals per side of the root square (power of two).
    #[arg(long, default_value_t = 4)]
    portals: u64,
    /// Lightness: at most 4r+1 child pieces per segment.
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// Group size for rounding. Without it the DP runs in exact mode.
    #[arg(long, conflicts_with = "exact_mode")]
    gamma: Option<usize>,
    /// Keep at most this many thresholds.
    #[arg(long)]
    tau_cap: Option<usize>,
    /// Replace the computed thresholds, e.g. `1,3,4`.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<usize>>,
    /// Disable rounding (the default when --gamma is absent).
    #[arg(long)]
    exact_mode: bool,
    /// Scan every shift regardless of the grid size.
    #[arg(long, conflicts_with_all = ["shifts", "shift"])]
    all_shifts: bool,
    /// Scan this many random shifts.
    #[arg(long, conflicts_with = "shift")]
    shifts: Option<usize>,
    /// Use one shift, given as `a,b`.
    #[arg(long, value_parser = parse_shift)]
    shift: Option<(u64, u64)>,
    /// Configuration budget of the dynamic program.
    #[arg(long, default_value_t = DpParams::default().budget)]
    budget: usize,
    #[arg(long, value_enum, default_value = "derandomized")]
    typing: Typing,
}

impl SchemeArgs {
    fn options(&self, seed: u64) -> SolveOptions {
        let shifts = if self.all_shifts {
            Some(ShiftPolicy::All)
        } else if let Some(count) = self.shifts {
            Some(ShiftPolicy::Random { count })
        } else {
            self.shift.map(|(a, b)| ShiftPolicy::Fixed { a, b })
        };
        SolveOptions {
            mode: self.mode,
            epsilon: self.epsilon,
            dp: DpParams {
                m: self.portals,
                r: self.r,
                gamma: if self.exact_mode { None } else { self.gamma },
                thresholds: self.thresholds.clone(),
                tau_cap: self.tau_cap,
                budget: self.budget,
            },
            typing: self.typing,
            shifts,
            seed,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    capacities: Vec<usize>,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "uniform,clustered"
    )]
    dists: Vec<Dist>,
    /// Instances per size, capacity and distribution.
    #[arg(long, default_value_t = 2)]
    count: usize,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "partition,exact"
    )]
    modes: Vec<Mode>,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall times (makes the table run-dependent).
    #[arg(long)]
    timing: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Draw the dissection lines of the given shift.
    #[arg(long)]
    overlay_dissection: bool,
    #[arg(long, value_parser = parse_shift, default_value = "0,0")]
    shift: (u64, u64),
    #[arg(long, default_value_t = 4)]
    portals: u64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_shift(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(a)?, num(b)?))
}

enum Failure {
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn read(path: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_instance(path: &PathBuf) -> Result<InstanceF64, Failure> {
    Ok(parse_instance(&read(path)?)?)
}

/// Reads a solution file, or the solution inside a `solve` output document.
fn load_solution(path: &PathBuf) -> Result<Solution, Failure> {
    let text = read(path)?;
    let inner = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("solution").map(ToString::to_string));
    Ok(parse_solution(inner.as_deref().unwrap_or(&text))?.to_solution())
}

fn unsupported(cmd: &str, format: &str) -> Failure {
    Failure::Core(Error::Parameter(format!("{cmd} cannot write {format}")))
}

#[derive(Serialize)]
struct CheckOutput {
    schema_version: u32,
    feasible: bool,
    length: Option<f64>,
    #[serde(flatten)]
    report: FeasibilityReport,
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Gen(a) => {
            let inst: InstanceF64 = generate_instance(a.n, a.k, a.dist.into(), a.seed)?;
            emit(&a.out, &format!("{}\n", inst.to_json()))?;
        }
        Command::Solve(a) => {
            let inst = load_instance(&a.instance)?;
            let run = solve(&inst, &a.scheme.options(a.seed))?;
            let text = match a.format {
                Format::Json => format!("{}\n", run.to_json(&inst)),
                Format::Svg => plot(&inst, Some(&run.solution), None),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record(["tour", "customers", "length"])
                        .map_err(|e| Failure::Io(e.to_string()))?;
                    for (i, t) in run.solution.tours.iter().enumerate() {
                        let customers: Vec<String> =
                            t.customers.iter().map(usize::to_string).collect();
                        let len = tour_length(t, &inst);
                        w.write_record([i.to_string(), customers.join(" "), len.to_string()])
                            .map_err(|e| Failure::Io(e.to_string()))?;
                    }
                    String::from_utf8(w.into_inner().map_err(|e| Failure::Io(e.to_string()))?)
                        .expect("csv is utf-8")
                }
            };
            emit(&a.out, &text)?;
        }
        Command::Check(a) => {
            let inst = load_instance(&a.instance)?;
            let sol = load_solution(&a.solution)?;
            let report = is_feasible(&sol, inst.n(), inst.capacity);
            let feasible = report.is_feasible();
            let indices_ok = !report
                .violations
                .iter()
                .any(|v| matches!(v, Violation::BadIndex { .. }));
            let length = indices_ok.then(|| sol.length(&inst));
            let out = CheckOutput {
                schema_version: SCHEMA_VERSION,
                feasible,
                length,
                report,
            };
            emit(
                &a.out,
                &format!(
                    "{}\n",
                    serde_json::to_string_pretty(&out).expect("reports serialize")
                ),
            )?;
            return Ok(feasible);
        }
        Command::Bench(a) => {
            let spec = BenchSpec {
                sizes: a.sizes,
                capacities: a.capacities,
                distributions: a.dists.into_iter().map(Into::into).collect(),
                count: a.count,
                seed: a.seed,
                modes: a.modes,
                options: a.scheme.options(a.seed),
                timing: a.timing,
            };
            let table = bench::run(&spec)?;
            let text = match a.format {
                Format::Json => format!("{}\n", table.to_json()),
                Format::Csv => table.to_csv(),
                Format::Svg => return Err(unsupported("bench", "svg")),
            };
            emit(&a.out, &text)?;
        }
        Command::Plot(a) => {
            let inst = load_instance(&a.instance)?;
            let sol = match &a.solution {
                Some(p) => Some(load_solution(p)?),
                None => None,
            };
            let svg = if a.overlay_dissection {
                let p = perturb(&inst, a.epsilon)?;
                let d = build_dissection(&p, a.shift.0 % p.side, a.shift.1 % p.side, a.portals)?;
                plot(&inst, sol.as_ref(), Some((&p, &d)))
            } else {
                plot(&inst, sol.as_ref(), None)
            };
            emit(&a.out, &svg)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Budget(_)) {
                eprintln!("hint: try --exact-mode or smaller --portals / --r");
            }
            ExitCode::from(exit_code(&e) as u8)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
