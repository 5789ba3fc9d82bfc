//! The tour-partitioning baseline: MST, the doubled-tree TSP tour, cutting a
//! tour into capacity-sized pieces, and the radial lower bound.

use crate::error::{Error, Result};
use crate::geometry::{dist, route_length};
use crate::instance::Instance;
use crate::solution::{Solution, Tour};
use crate::Scalar;

/// `(2/k) * sum of depot distances`.
pub fn rad<T: Scalar>(points: &[[T; 2]], depot: [T; 2], k: usize) -> T {
    let sum = points
        .iter()
        .fold(T::zero(), |acc, &p| acc + dist(p, depot));
    sum * T::from_usize(2).unwrap() / T::from_usize(k).unwrap()
}

/// Minimum spanning tree (Prim, ties broken by smaller index) as
/// `(parent, child)` edges in insertion order.
pub fn mst<T: Scalar>(points: &[[T; 2]]) -> Vec<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![T::infinity(); n];
    let mut parent = vec![0usize; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = dist(points[0], points[j]);
    }
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut pick = None;
        for j in 0..n {
            if !in_tree[j] && pick.is_none_or(|p: usize| best[j] < best[p]) {
                pick = Some(j);
            }
        }
        let v = pick.expect("a vertex remains outside the tree");
        in_tree[v] = true;
        edges.push((parent[v], v));
        for j in 0..n {
            if !in_tree[j] {
                let w = dist(points[v], points[j]);
                if w < best[j] {
                    best[j] = w;
                    parent[j] = v;
                }
            }
        }
    }
    edges
}

pub fn mst_weight<T: Scalar>(points: &[[T; 2]]) -> T {
    mst(points)
        .iter()
        .fold(T::zero(), |acc, &(a, b)| acc + dist(points[a], points[b]))
}

/// Doubled-MST tour: preorder walk of the MST over depot and customers,
/// rooted at the depot, children in index order.
pub fn tsp_2approx<T: Scalar>(inst: &Instance<T>) -> Tour {
    let mut all = Vec::with_capacity(inst.n() + 1);
    all.push(inst.depot);
    all.extend_from_slice(&inst.points);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); all.len()];
    for (p, c) in mst(&all) {
        children[p].push(c);
    }
    for c in &mut children {
        c.sort_unstable();
    }
    let mut order = Vec::with_capacity(inst.n());
    let mut stack = vec![0usize];
    while let Some(v) = stack.pop() {
        if v != 0 {
            order.push(v - 1);
        }
        stack.extend(children[v].iter().rev());
    }
    Tour::new(order)
}

/// Cuts `t` into depot-rooted tours of `k` consecutive customers, walking
/// the customer cycle from position `start`.
pub fn partition_tour(t: &Tour, k: usize, start: usize) -> Result<Solution> {
    let n = t.len();
    if start >= n {
        return Err(Error::Index(format!(
            "start position {start} on a tour of {n} customers"
        )));
    }
    if k == 0 {
        return Err(Error::Parameter("k < 1".into()));
    }
    let rotated: Vec<usize> = t.customers[start..]
        .iter()
        .chain(&t.customers[..start])
        .copied()
        .collect();
    Ok(Solution {
        tours: rotated.chunks(k).map(|c| Tour::new(c.to_vec())).collect(),
    })
}

/// One depot detour: after customer `from`, before customer `to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detour<T> {
    pub from: usize,
    pub to: usize,
    /// `d(from, o) + d(o, to) - d(from, to)`.
    pub surcharge: T,
}

/// The detours taken when walking from `start`: after every `k`-th
/// customer, at walk positions `k, 2k, ..., floor(n/k) k` (the last one
/// wraps to the start when `k` divides `n`).
pub fn detours<T: Scalar>(t: &Tour, inst: &Instance<T>, k: usize, start: usize) -> Vec<Detour<T>> {
    let n = t.len();
    (1..=n / k)
        .map(|j| {
            let from = t.customers[(start + j * k - 1) % n];
            let to = t.customers[(start + j * k) % n];
            let (a, b) = (inst.points[from], inst.points[to]);
            Detour {
                from,
                to,
                surcharge: dist(a, inst.depot) + dist(inst.depot, b) - dist(a, b),
            }
        })
        .collect()
}

/// The minimum-length partition over all start positions; the first start
/// wins ties.
pub fn best_start_partition<T: Scalar>(t: &Tour, inst: &Instance<T>, k: usize) -> Result<Solution> {
    let mut best: Option<(T, Solution)> = None;
    for start in 0..t.len() {
        let s = partition_tour(t, k, start)?;
        let len = solution_length(&s, inst);
        if best.as_ref().is_none_or(|(b, _)| len < *b) {
            best = Some((len, s));
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| Error::Parameter("empty tour".into()))
}

/// The full baseline: doubled-MST tour, best start.
pub fn partition_solve<T: Scalar>(inst: &Instance<T>) -> Result<Solution> {
    best_start_partition(&tsp_2approx(inst), inst, inst.capacity)
}

/// Straight-line length in the instance's own scalar type.
pub fn solution_length<T: Scalar>(s: &Solution, inst: &Instance<T>) -> T {
    s.tours.iter().fold(T::zero(), |acc, t| {
        acc + route_length(&t.customers, &inst.points, inst.depot)
    })
}
