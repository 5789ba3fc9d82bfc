//! Ratio tables over a generated corpus.

use std::time::Instant;

use serde::Serialize;

use cvrp_qptas::oracle::exact_cvrp;
use cvrp_qptas::{generate_instance, Distribution, InstanceF64, Result};

use crate::pipeline::{solve, Mode, SolveOptions, SCHEMA_VERSION};

/// Instances above this size are benchmarked without an optimum.
pub const ORACLE_MAX_N: usize = 10;

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub capacities: Vec<usize>,
    pub distributions: Vec<Distribution>,
    /// Instances per (size, capacity, distribution).
    pub count: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Template for every run; its `mode` is overridden.
    pub options: SolveOptions,
    /// Record wall times. Off by default so repeated runs match byte for byte.
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance: usize,
    pub n: usize,
    pub k: usize,
    pub distribution: Distribution,
    pub seed: u64,
    pub mode: Mode,
    pub length: Option<f64>,
    pub opt: Option<f64>,
    pub ratio: Option<f64>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub time_ms: Option<f64>,
}

#[derive(Serialize)]
pub struct BenchTable {
    pub schema_version: u32,
    pub rows: Vec<BenchRow>,
}

/// The corpus in generation order: instance index, distribution, seed and
/// instance.
pub fn corpus(spec: &BenchSpec) -> Result<Vec<(usize, Distribution, u64, InstanceF64)>> {
    let mut out = Vec::new();
    for &n in &spec.sizes {
        for &k in &spec.capacities {
            for &dist in &spec.distributions {
                for _ in 0..spec.count {
                    let seed = spec.seed + out.len() as u64;
                    out.push((out.len(), dist, seed, generate_instance(n, k, dist, seed)?));
                }
            }
        }
    }
    Ok(out)
}

pub fn run(spec: &BenchSpec) -> Result<BenchTable> {
    let mut rows = Vec::new();
    for (instance, distribution, seed, inst) in corpus(spec)? {
        let opt = (inst.n() <= ORACLE_MAX_N)
            .then(|| exact_cvrp(&inst).map(|r| r.1))
            .transpose()?;
        for &mode in &spec.modes {
            let opts = SolveOptions {
                mode,
                seed,
                ..spec.options.clone()
            };
            let start = Instant::now();
            let result = solve(&inst, &opts);
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let (length, status) = match result {
                Ok(r) => (Some(r.report.length), "ok".to_string()),
                Err(e) => (None, e.to_string()),
            };
            let ratio = match (length, opt) {
                (Some(l), Some(o)) if o > 0.0 => Some(l / o),
                (Some(0.0), Some(_)) => Some(1.0),
                _ => None,
            };
            rows.push(BenchRow {
                instance,
                n: inst.n(),
                k: inst.capacity,
                distribution,
                seed,
                mode,
                length,
                opt,
                ratio,
                status,
                time_ms: spec.timing.then_some(elapsed),
            });
        }
    }
    Ok(BenchTable {
        schema_version: SCHEMA_VERSION,
        rows,
    })
}

impl BenchTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables serialize")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("rows serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }
}
