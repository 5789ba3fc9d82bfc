//! Exact solvers for tiny instances: Held-Karp TSP and a subset dynamic
//! program for CVRP. Both refuse instances above their size budget.

use crate::error::{Error, Result};
use crate::geometry::dist;
use crate::instance::Instance;
use crate::solution::{Solution, Tour};
use crate::Scalar;

/// Largest customer count [`exact_tsp`] accepts by default.
pub const TSP_BUDGET: usize = 14;
/// Largest customer count [`exact_cvrp`] accepts by default.
pub const CVRP_BUDGET: usize = 12;

/// Held-Karp table over customer subsets: `path[S][j]` is the shortest walk
/// from the depot through `S` ending at `j`.
struct HeldKarp<T> {
    n: usize,
    path: Vec<T>,
}

impl<T: Scalar> HeldKarp<T> {
    fn build(points: &[[T; 2]], depot: [T; 2]) -> Self {
        let n = points.len();
        let mut path = vec![T::infinity(); (1usize << n) * n];
        for j in 0..n {
            path[(1 << j) * n + j] = dist(depot, points[j]);
        }
        for set in 1usize..(1 << n) {
            for j in 0..n {
                let cur = path[set * n + j];
                if set & (1 << j) == 0 || !cur.is_finite() {
                    continue;
                }
                for nxt in 0..n {
                    if set & (1 << nxt) != 0 {
                        continue;
                    }
                    let idx = (set | 1 << nxt) * n + nxt;
                    let cand = cur + dist(points[j], points[nxt]);
                    if cand < path[idx] {
                        path[idx] = cand;
                    }
                }
            }
        }
        HeldKarp { n, path }
    }

    /// Closed tour cost over `set` and the last customer achieving it.
    fn closed(&self, set: usize, points: &[[T; 2]], depot: [T; 2]) -> (T, usize) {
        let mut best = (T::infinity(), 0);
        for j in 0..self.n {
            if set & (1 << j) != 0 {
                let c = self.path[set * self.n + j] + dist(points[j], depot);
                if c < best.0 {
                    best = (c, j);
                }
            }
        }
        best
    }

    /// Visiting order of an optimal closed tour over `set`.
    fn order(&self, set: usize, points: &[[T; 2]], depot: [T; 2]) -> Vec<usize> {
        let (_, mut last) = self.closed(set, points, depot);
        let mut rest = set;
        let mut rev = Vec::new();
        loop {
            rev.push(last);
            let prev_set = rest & !(1 << last);
            if prev_set == 0 {
                break;
            }
            let target = self.path[rest * self.n + last];
            let mut found = None;
            for j in 0..self.n {
                if prev_set & (1 << j) != 0 {
                    let c = self.path[prev_set * self.n + j] + dist(points[j], points[last]);
                    if c == target {
                        found = Some(j);
                        break;
                    }
                }
            }
            last = found.expect("Held-Karp predecessor exists");
            rest = prev_set;
        }
        rev.reverse();
        rev
    }
}

/// Optimal closed tour through the depot and all points.
pub fn exact_tsp<T: Scalar>(points: &[[T; 2]], depot: [T; 2]) -> Result<(Vec<usize>, T)> {
    exact_tsp_with_budget(points, depot, TSP_BUDGET)
}

pub fn exact_tsp_with_budget<T: Scalar>(
    points: &[[T; 2]],
    depot: [T; 2],
    budget: usize,
) -> Result<(Vec<usize>, T)> {
    let n = points.len();
    if n > budget {
        return Err(Error::Budget(format!(
            "exact TSP limited to {budget} customers, got {n}"
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), T::zero()));
    }
    let hk = HeldKarp::build(points, depot);
    let full = (1usize << n) - 1;
    let (len, _) = hk.closed(full, points, depot);
    Ok((hk.order(full, points, depot), len))
}

/// Optimal CVRP solution and its length.
pub fn exact_cvrp<T: Scalar>(inst: &Instance<T>) -> Result<(Solution, T)> {
    exact_cvrp_with_budget(inst, CVRP_BUDGET)
}

pub fn exact_cvrp_with_budget<T: Scalar>(
    inst: &Instance<T>,
    budget: usize,
) -> Result<(Solution, T)> {
    let n = inst.n();
    if n > budget {
        return Err(Error::Budget(format!(
            "exact CVRP limited to {budget} customers, got {n}"
        )));
    }
    let hk = HeldKarp::build(&inst.points, inst.depot);
    let k = inst.capacity;
    let full = (1usize << n) - 1;
    let block_cost: Vec<T> = (0..=full)
        .map(|s| {
            if s == 0 || s.count_ones() as usize > k {
                T::infinity()
            } else {
                hk.closed(s, &inst.points, inst.depot).0
            }
        })
        .collect();
    let (best, choice) = partition_dp(n, &block_cost);
    let mut tours = Vec::new();
    let mut rest = full;
    while rest != 0 {
        let b = choice[rest];
        tours.push(Tour::new(hk.order(b, &inst.points, inst.depot)));
        rest &= !b;
    }
    Ok((Solution { tours }, best[full]))
}

/// Cheapest split of every subset into blocks, each block containing the
/// subset's lowest element first. Returns costs and the chosen first block.
pub(crate) fn partition_dp<T: Scalar>(n: usize, block_cost: &[T]) -> (Vec<T>, Vec<usize>) {
    let full = (1usize << n) - 1;
    let mut best = vec![T::infinity(); full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = T::zero();
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s & !low;
        // Enumerate sub-blocks of `rest`, each joined with `low`, in increasing order.
        let mut sub = 0usize;
        loop {
            let b = sub | low;
            let c = block_cost[b] + best[s & !b];
            if c < best[s] {
                best[s] = c;
                choice[s] = b;
            }
            if sub == rest {
                break;
            }
            sub = (sub.wrapping_sub(rest)) & rest;
        }
    }
    (best, choice)
}
