//! Dynamic program over the shifted quadtree.
//!
//! Tours are built from pieces inside the four children of each square,
//! glued at portals on the square's cross. Every junction between children
//! of a level-`l` square is charged `lambda * sum_{j > l} d_j`, which is
//! exactly the crossing penalty of the extended objective, so the optimum
//! reported here is the extended objective of the traced tours.
//!
//! Two solvers share the level tables:
//!
//! * **exact mode** (`gamma = None`): no rounding, so capacities are true
//!   capacities and the table factors per tour. Shortest portal walks
//!   between sites give a metric; tours are chosen by a subset DP over it and
//!   then certified light. Tours that fail the certificate are re-priced
//!   with the configuration DP until the chosen tours are all certified.
//! * **configuration DP** (finite `gamma`): the full table over
//!   configurations of loaded segments with rounding, for small instances.

mod config;
mod expand;
mod levels;
mod relax;

use std::sync::Arc;

use serde::Serialize;

use crate::dissection::Dissection;
use crate::error::{Error, Result};
use crate::instance::PerturbedInstance;
use crate::solution::{growth_factor, penalty_weight, RelaxedParams, Solution};
use crate::typing::DropDemand;

use levels::{DepotTables, Levels};

/// Integer thresholds `t_0 = 1 < t_1 < ... < t_tau = k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdSeq {
    pub values: Vec<usize>,
    /// `1 + eps / log2 n`.
    pub growth: f64,
}

impl ThresholdSeq {
    pub fn tau(&self) -> usize {
        self.values.len() - 1
    }

    pub fn capacity(&self) -> usize {
        *self.values.last().expect("thresholds are never empty")
    }

    /// Keeps at most `count` thresholds: the first `count - 1` and `k`.
    pub fn trimmed(&self, count: usize) -> Self {
        let count = count.max(1);
        if self.values.len() <= count {
            return self.clone();
        }
        let mut values: Vec<usize> = self.values[..count - 1].to_vec();
        values.push(self.capacity());
        if count == 1 {
            values = vec![self.capacity()];
        }
        ThresholdSeq {
            values,
            growth: self.growth,
        }
    }

    /// Index `i` with `t_i <= x < t_i * growth`, if any.
    pub fn rounding_index(&self, x: usize) -> Option<usize> {
        self.values
            .iter()
            .rposition(|&t| t <= x && (x as f64) < t as f64 * self.growth)
    }
}

/// Thresholds for capacity `k`: `t_1 = min(k, ceil(1/eps))` and then
/// `t_i = min(k, max(t_{i-1} + 1, ceil(g^{i-1} / eps)))` until `k`.
pub fn thresholds(k: usize, eps: f64, n: usize) -> Result<ThresholdSeq> {
    if k == 0 {
        return Err(Error::Parameter("capacity must be at least 1".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Parameter(format!("epsilon {eps} outside (0, 1]")));
    }
    let growth = growth_factor(eps, n);
    let mut values = vec![1usize];
    let first = ((1.0 / eps).ceil() as usize).min(k);
    if first > 1 {
        values.push(first);
    }
    let mut i = 2i32;
    while *values.last().unwrap() < k {
        let prev = *values.last().unwrap();
        let target = ((1.0 / eps) * growth.powi(i - 1)).ceil() as usize;
        values.push(k.min((prev + 1).max(target)));
        i += 1;
    }
    Ok(ThresholdSeq { values, growth })
}

fn validate_thresholds(values: &[usize], k: usize) -> Result<()> {
    let ok = values.first() == Some(&1)
        && values.last() == Some(&k)
        && values.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "thresholds {values:?} must rise strictly from 1 to {k}"
        )))
    }
}

/// Parameters of the dynamic program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpParams {
    /// Portals per side of a level-0 square; a power of two.
    pub m: u64,
    /// Lightness: at most `4r + 1` child pieces per segment.
    pub r: usize,
    /// Group size for rounding; `None` is exact mode.
    pub gamma: Option<usize>,
    /// Replaces the computed thresholds.
    pub thresholds: Option<Vec<usize>>,
    /// Keeps at most this many thresholds.
    pub tau_cap: Option<usize>,
    /// Maximum number of configurations over all squares.
    pub budget: usize,
}

impl Default for DpParams {
    fn default() -> Self {
        DpParams {
            m: 4,
            r: 2,
            gamma: None,
            thresholds: None,
            tau_cap: None,
            budget: 2_000_000,
        }
    }
}

impl DpParams {
    /// Threshold sequence for an instance.
    pub fn threshold_seq(&self, pinst: &PerturbedInstance) -> Result<ThresholdSeq> {
        let k = pinst.capacity;
        let mut seq = thresholds(k, pinst.epsilon, pinst.n())?;
        if let Some(v) = &self.thresholds {
            validate_thresholds(v, k)?;
            seq.values = v.clone();
        }
        if let Some(c) = self.tau_cap {
            seq = seq.trimmed(c);
        }
        Ok(seq)
    }

    /// The matching parameters of the relaxed-capacity checker.
    pub fn relaxed_params(&self, pinst: &PerturbedInstance) -> Result<RelaxedParams> {
        let seq = self.threshold_seq(pinst)?;
        Ok(RelaxedParams {
            gamma: self.gamma,
            thresholds: seq.values,
            growth: seq.growth,
            capacity: pinst.capacity,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || !self.m.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "portal density m = {} is not a power of two",
                self.m
            )));
        }
        if self.gamma == Some(0) {
            return Err(Error::Parameter("gamma must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DpMode {
    Exact,
    Rounded,
}

/// Tours with portal geometry plus the rounding that produced them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelaxedSolution {
    pub solution: Solution,
    /// Drop demands, deepest level first.
    pub demands: Vec<DropDemand>,
}

/// Result of [`solve_dp`].
#[derive(Clone)]
pub struct DpOutcome {
    /// Minimum extended objective.
    pub cost: f64,
    pub mode: DpMode,
    pub shift: (u64, u64),
    /// Configurations materialized by the configuration DP.
    pub cells: usize,
    /// Tours the exact mode had to re-price with the configuration DP.
    pub repriced: usize,
    plan: Plan,
}

#[derive(Clone)]
enum Plan {
    Traced(RelaxedSolution),
    Table(Arc<config::Tables>),
}

impl std::fmt::Debug for DpOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DpOutcome")
            .field("cost", &self.cost)
            .field("mode", &self.mode)
            .field("shift", &self.shift)
            .field("cells", &self.cells)
            .finish()
    }
}

/// Reusable solver state for one perturbed instance: the level tables do
/// not depend on the shift, so scanning shifts shares them.
pub struct DpEngine {
    pinst: PerturbedInstance,
    params: DpParams,
    seq: ThresholdSeq,
    lambda: f64,
    levels: Option<Arc<Levels>>,
    cache: relax::Cache,
}

impl DpEngine {
    pub fn new(pinst: &PerturbedInstance, params: &DpParams) -> Result<Self> {
        params.validate()?;
        let seq = params.threshold_seq(pinst)?;
        Ok(DpEngine {
            pinst: pinst.clone(),
            params: params.clone(),
            seq,
            lambda: penalty_weight(pinst.epsilon, pinst.n()),
            levels: None,
            cache: relax::Cache::default(),
        })
    }

    fn levels(&mut self, d: &Dissection) -> Arc<Levels> {
        if self.levels.is_none() {
            self.levels = Some(Arc::new(Levels::new(d, self.lambda, self.params.r)));
        }
        self.levels.clone().unwrap()
    }

    pub fn solve(&mut self, d: &Dissection) -> Result<DpOutcome> {
        if d.m != self.params.m || d.side != self.pinst.side || d.n() != self.pinst.n() {
            return Err(Error::Parameter(
                "dissection does not match the instance and parameters".into(),
            ));
        }
        let lv = self.levels(d);
        match self.params.gamma {
            None => {
                let (rs, cost, repriced, cells) =
                    relax::solve(&lv, d, &self.pinst, &self.params, &mut self.cache)?;
                Ok(DpOutcome {
                    cost,
                    mode: DpMode::Exact,
                    shift: d.shift,
                    cells,
                    repriced,
                    plan: Plan::Traced(rs),
                })
            }
            Some(_) => {
                // The exact-mode optimum is usually within reach of the
                // rounded one, so it prunes well; an empty pruned search
                // falls back to an unbounded one.
                let exact = DpParams {
                    gamma: None,
                    ..self.params.clone()
                };
                let bound = relax::solve(&lv, d, &self.pinst, &exact, &mut self.cache)
                    .ok()
                    .map(|r| r.1);
                let tables = config::solve(lv, d, &self.pinst, &self.params, &self.seq, bound)?;
                Ok(DpOutcome {
                    cost: tables.cost,
                    mode: DpMode::Rounded,
                    shift: d.shift,
                    cells: tables.cells,
                    repriced: 0,
                    plan: Plan::Table(Arc::new(tables)),
                })
            }
        }
    }
}

/// Runs the dynamic program on one dissection.
pub fn solve_dp(pinst: &PerturbedInstance, d: &Dissection, params: &DpParams) -> Result<DpOutcome> {
    DpEngine::new(pinst, params)?.solve(d)
}

/// Concrete tours (with portal waypoints) and drop demands of an outcome.
pub fn trace_back(outcome: &DpOutcome) -> Result<RelaxedSolution> {
    match &outcome.plan {
        Plan::Traced(rs) => Ok(rs.clone()),
        Plan::Table(t) => t.trace(),
    }
}

pub(crate) fn depot_tables(lv: &Levels, d: &Dissection) -> DepotTables {
    DepotTables::new(lv, d)
}

#[cfg(test)]
mod tests;
