//! The end-to-end scheme: perturb, dissect, run the dynamic program, type
//! the points, patch the red ones with tour partitioning and lift back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cvrp_qptas::dissection::{build_dissection, enumerate_shifts, Dissection};
use cvrp_qptas::dp::{trace_back, DpEngine, DpMode, DpParams, RelaxedSolution};
use cvrp_qptas::instance::{lift_solution, perturb, PerturbedInstance};
use cvrp_qptas::oracle::exact_cvrp;
use cvrp_qptas::partition::partition_solve;
use cvrp_qptas::solution::{
    is_feasible, walk_length, Solution, SolutionFile, Tour, TypeAssignment,
};
use cvrp_qptas::typing::{assign_types_derandomized, assign_types_random};
use cvrp_qptas::{Error, InstanceF64, Result};

/// Version of the JSON documents written by the CLI.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest grid side for which the default policy scans every shift.
pub const ALL_SHIFTS_MAX_SIDE: u64 = 32;

/// Shifts drawn by the default policy on larger grids.
pub const DEFAULT_RANDOM_SHIFTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The approximation scheme.
    Qptas,
    /// Iterated tour partitioning of a doubled-MST tour.
    Partition,
    /// The exact oracle.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Typing {
    Random,
    Derandomized,
}

/// Which dissection shifts to try. The best resulting solution is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "policy")]
pub enum ShiftPolicy {
    All,
    Random { count: usize },
    Fixed { a: u64, b: u64 },
}

impl ShiftPolicy {
    /// All shifts on small grids, a fixed number of random ones otherwise.
    pub fn default_for(side: u64) -> Self {
        if side <= ALL_SHIFTS_MAX_SIDE {
            ShiftPolicy::All
        } else {
            ShiftPolicy::Random {
                count: DEFAULT_RANDOM_SHIFTS,
            }
        }
    }

    /// The shifts to scan, in scan order. Random draws are deduplicated.
    pub fn shifts(self, side: u64, seed: u64) -> Vec<(u64, u64)> {
        match self {
            ShiftPolicy::All => enumerate_shifts(side).collect(),
            ShiftPolicy::Fixed { a, b } => vec![(a % side, b % side)],
            ShiftPolicy::Random { count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out: Vec<(u64, u64)> = Vec::with_capacity(count);
                for _ in 0..count {
                    let s = (rng.gen_range(0..side), rng.gen_range(0..side));
                    if !out.contains(&s) {
                        out.push(s);
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub mode: Mode,
    pub epsilon: f64,
    pub dp: DpParams,
    pub typing: Typing,
    /// `None` picks [`ShiftPolicy::default_for`] the grid side.
    pub shifts: Option<ShiftPolicy>,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            mode: Mode::Qptas,
            epsilon: 1.0,
            dp: DpParams::default(),
            typing: Typing::Derandomized,
            shifts: None,
            seed: 0,
        }
    }
}

/// One rounded segment as recorded by the dynamic program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemandSummary {
    pub level: usize,
    pub threshold: usize,
    pub active: usize,
    pub drop: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QptasReport {
    pub dp_mode: DpMode,
    pub portals: u64,
    pub r: usize,
    pub gamma: Option<usize>,
    pub thresholds: Vec<usize>,
    pub growth: f64,
    pub typing: Typing,
    pub shift_policy: ShiftPolicy,
    pub shifts_scanned: usize,
    pub shift: (u64, u64),
    pub grid_side: u64,
    /// Extended objective of the chosen shift, grid units.
    pub dp_cost: f64,
    /// Length of the traced portal walks, grid units.
    pub dp_walk_length: f64,
    pub configurations: usize,
    pub red_points: Vec<usize>,
    pub demands: Vec<DemandSummary>,
    /// Demands whose derandomized interval is the minimax fallback.
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub mode: Mode,
    pub epsilon: f64,
    pub seed: u64,
    pub n: usize,
    pub capacity: usize,
    /// `black_length + red_length`, original units.
    pub length: f64,
    pub black_length: f64,
    pub red_length: f64,
    pub tours: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qptas: Option<QptasReport>,
}

/// Intermediate results of the chosen shift.
#[derive(Clone, Debug)]
pub struct Trace {
    pub pinst: PerturbedInstance,
    pub dissection: Dissection,
    pub dp_cost: f64,
    pub relaxed: RelaxedSolution,
    pub types: TypeAssignment,
}

#[derive(Clone, Debug)]
pub struct Run {
    /// Tours over the original points.
    pub solution: Solution,
    pub report: Report,
    pub trace: Option<Trace>,
}

/// The document `solve` writes.
#[derive(Serialize)]
pub struct Output<'a> {
    pub solution: SolutionFile,
    pub report: &'a Report,
}

impl Run {
    pub fn output(&self, inst: &InstanceF64) -> Output<'_> {
        Output {
            solution: SolutionFile::from_solution(&self.solution, inst),
            report: &self.report,
        }
    }

    pub fn to_json(&self, inst: &InstanceF64) -> String {
        serde_json::to_string_pretty(&self.output(inst)).expect("reports serialize")
    }
}

/// Solves `inst` in the requested mode.
pub fn solve(inst: &InstanceF64, opts: &SolveOptions) -> Result<Run> {
    inst.validate()?;
    if !(opts.epsilon > 0.0 && opts.epsilon <= 1.0) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, 1], got {}",
            opts.epsilon
        )));
    }
    let run = match opts.mode {
        Mode::Qptas => solve_qptas(inst, opts)?,
        Mode::Partition => plain(inst, opts, partition_solve(inst)?),
        Mode::Exact => plain(inst, opts, exact_cvrp(inst)?.0),
    };
    let report = is_feasible(&run.solution, inst.n(), inst.capacity);
    if !report.is_feasible() {
        return Err(Error::Infeasible(format!("{:?}", report.violations)));
    }
    Ok(run)
}

fn plain(inst: &InstanceF64, opts: &SolveOptions, solution: Solution) -> Run {
    let length = length(&solution, inst);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        mode: opts.mode,
        epsilon: opts.epsilon,
        seed: opts.seed,
        n: inst.n(),
        capacity: inst.capacity,
        length,
        black_length: length,
        red_length: 0.0,
        tours: solution.tours.len(),
        qptas: None,
    };
    Run {
        solution,
        report,
        trace: None,
    }
}

struct Candidate {
    trace: Trace,
    black: Solution,
    red: Solution,
    black_length: f64,
    red_length: f64,
    configurations: usize,
    mode: DpMode,
    fallbacks: usize,
}

impl Candidate {
    fn length(&self) -> f64 {
        self.black_length + self.red_length
    }
}

fn solve_qptas(inst: &InstanceF64, opts: &SolveOptions) -> Result<Run> {
    let pinst = perturb(inst, opts.epsilon)?;
    let relaxed = opts.dp.relaxed_params(&pinst)?;
    let mut engine = DpEngine::new(&pinst, &opts.dp)?;
    let policy = opts
        .shifts
        .unwrap_or_else(|| ShiftPolicy::default_for(pinst.side));
    let shifts = policy.shifts(pinst.side, opts.seed);

    let mut best: Option<Candidate> = None;
    for &(a, b) in &shifts {
        let d = build_dissection(&pinst, a, b, opts.dp.m)?;
        let out = engine.solve(&d)?;
        let rs = trace_back(&out)?;
        let cand = finish(inst, &pinst, d, out.cost, rs, out.cells, out.mode, opts)?;
        // Ties keep the earlier shift.
        if best.as_ref().is_none_or(|b| cand.length() < b.length()) {
            best = Some(cand);
        }
    }
    let best = best.ok_or_else(|| Error::Parameter("no shift to scan".into()))?;

    let trace = best.trace;
    let d = &trace.dissection;
    let qptas = QptasReport {
        dp_mode: best.mode,
        portals: opts.dp.m,
        r: opts.dp.r,
        gamma: opts.dp.gamma,
        thresholds: relaxed.thresholds,
        growth: relaxed.growth,
        typing: opts.typing,
        shift_policy: policy,
        shifts_scanned: shifts.len(),
        shift: d.shift,
        grid_side: pinst.side,
        dp_cost: trace.dp_cost,
        dp_walk_length: trace
            .relaxed
            .solution
            .tours
            .iter()
            .map(|t| walk_length(t, d))
            .sum(),
        configurations: best.configurations,
        red_points: trace.types.red(),
        demands: trace
            .relaxed
            .demands
            .iter()
            .map(|dd| DemandSummary {
                level: dd.level,
                threshold: dd.threshold,
                active: dd.active,
                drop: dd.drop,
            })
            .collect(),
        fallbacks: best.fallbacks,
    };
    let mut solution = best.black;
    solution.tours.extend(best.red.tours);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        mode: Mode::Qptas,
        epsilon: opts.epsilon,
        seed: opts.seed,
        n: inst.n(),
        capacity: inst.capacity,
        length: best.black_length + best.red_length,
        black_length: best.black_length,
        red_length: best.red_length,
        tours: solution.tours.len(),
        qptas: Some(qptas),
    };
    Ok(Run {
        solution,
        report,
        trace: Some(trace),
    })
}

/// Types the points of one traced solution, keeps the black ones on their
/// tours and routes the red ones separately.
#[allow(clippy::too_many_arguments)]
fn finish(
    inst: &InstanceF64,
    pinst: &PerturbedInstance,
    dissection: Dissection,
    dp_cost: f64,
    relaxed: RelaxedSolution,
    configurations: usize,
    mode: DpMode,
    opts: &SolveOptions,
) -> Result<Candidate> {
    let n = pinst.n();
    let (types, fallbacks) = match opts.typing {
        Typing::Random => (assign_types_random(&relaxed.demands, n, opts.seed)?, 0),
        Typing::Derandomized => {
            let points: Vec<[f64; 2]> = (0..n).map(|i| pinst.point_f64(i)).collect();
            let r = assign_types_derandomized(&relaxed.demands, &points, pinst.depot_f64())?;
            (r.assignment, r.fallbacks.len())
        }
    };

    let kept: Vec<Tour> = relaxed
        .solution
        .tours
        .iter()
        .map(|t| {
            Tour::new(
                t.customers
                    .iter()
                    .copied()
                    .filter(|&c| types.is_black(c))
                    .collect(),
            )
        })
        .filter(|t| !t.is_empty())
        .collect();
    let black = lift_solution(pinst, &Solution { tours: kept })?;

    let red_points = types.red();
    let red = if red_points.is_empty() {
        Solution::default()
    } else {
        let sub = InstanceF64::new(
            inst.depot,
            red_points.iter().map(|&i| inst.points[i]).collect(),
            inst.capacity,
        )?;
        let local = partition_solve(&sub)?;
        Solution {
            tours: local
                .tours
                .into_iter()
                .map(|t| Tour::new(t.customers.into_iter().map(|j| red_points[j]).collect()))
                .collect(),
        }
    };

    Ok(Candidate {
        black_length: length(&black, inst),
        red_length: length(&red, inst),
        black,
        red,
        trace: Trace {
            pinst: pinst.clone(),
            dissection,
            dp_cost,
            relaxed,
            types,
        },
        configurations,
        mode,
        fallbacks,
    })
}

/// Total length, with an empty solution at +0.
fn length(s: &Solution, inst: &InstanceF64) -> f64 {
    if s.tours.is_empty() {
        0.0
    } else {
        s.length(inst)
    }
}
