//! Exact mode. Without rounding the table factors per tour: the cheapest
//! light tour through a customer set is a closed walk in the portal graph.
//! Shortest portal walks between sites are computed bottom-up per square,
//! tours are assembled by Held-Karp plus a subset DP, and every chosen tour
//! is traced and checked for the piece bound. A tour that violates it is
//! re-priced with the configuration DP restricted to its customers; its
//! relaxed cost is a lower bound, so once every chosen tour is certified the
//! answer is optimal.

use std::collections::HashMap;
use std::sync::Arc;

use crate::dissection::{Dissection, SquareId};
use crate::error::{Error, Result};
use crate::instance::PerturbedInstance;
use crate::oracle::partition_dp;
use crate::solution::{is_ilight, Solution, Tour, Waypoint};

use super::config;
use super::expand::{Expander, Pt};
use super::levels::{Composite, Levels, INF};
use super::{DpParams, RelaxedSolution};

/// Largest customer count handled by the subset DP.
const SUBSET_LIMIT: usize = 16;

/// Site-to-site matrices keyed by level and relative site positions. Only
/// squares with few sites are worth keeping: they recur across shifts.
#[derive(Default)]
pub(crate) struct Cache {
    map: HashMap<(usize, Vec<[i64; 2]>), Arc<Vec<f64>>>,
}

const CACHE_SITES: usize = 2;

/// Distinct customer/depot locations. Site 0 is the depot.
pub(crate) struct Sites {
    pub pos: Vec<[i64; 2]>,
    pub of_customer: Vec<usize>,
}

impl Sites {
    pub fn new(d: &Dissection) -> Self {
        let mut pos = vec![d.depot_fine()];
        let mut at: HashMap<[i64; 2], usize> = HashMap::from([(d.depot_fine(), 0)]);
        let of_customer = (0..d.n())
            .map(|i| {
                let p = d.point_fine(i);
                *at.entry(p).or_insert_with(|| {
                    pos.push(p);
                    pos.len() - 1
                })
            })
            .collect();
        Sites { pos, of_customer }
    }
}

struct Ctx<'a> {
    lv: &'a Levels,
    d: &'a Dissection,
    sites: &'a Sites,
    cache: &'a mut Cache,
}

impl<'a> Ctx<'a> {
    /// Sites inside a square, ordered by position relative to its corner.
    fn content(&self, sq: SquareId) -> Vec<usize> {
        let Some(s) = self.d.square(sq) else {
            return Vec::new();
        };
        let mut v: Vec<usize> = s
            .points
            .iter()
            .map(|&i| self.sites.of_customer[i])
            .collect();
        if s.has_depot {
            v.push(0);
        }
        v.sort_by_key(|&x| self.sites.pos[x]);
        v.dedup();
        v
    }

    fn key(&self, sq: SquareId, content: &[usize]) -> (usize, Vec<[i64; 2]>) {
        let c = self.d.corner_fine(sq);
        (
            sq.level,
            content
                .iter()
                .map(|&x| [self.sites.pos[x][0] - c[0], self.sites.pos[x][1] - c[1]])
                .collect(),
        )
    }

    /// Node matrix of an occupied square: slots, then its sites.
    fn matrix(&mut self, sq: SquareId) -> Arc<Vec<f64>> {
        let content = self.content(sq);
        let cacheable = content.len() <= CACHE_SITES && sq.level > 0;
        let key = self.key(sq, &content);
        if cacheable {
            if let Some(m) = self.cache.map.get(&key) {
                return m.clone();
            }
        }
        let m = Arc::new(self.compute(sq, &content));
        if cacheable {
            self.cache.map.insert(key, m.clone());
        }
        m
    }

    fn compute(&mut self, sq: SquareId, content: &[usize]) -> Vec<f64> {
        let lv = self.lv;
        let ns = lv.ns();
        let n = ns + content.len();
        let mut mat = vec![INF; n * n];
        let l = sq.level;
        if l == lv.max_level {
            debug_assert_eq!(content.len(), 1, "a leaf holds a single location");
            for u in 0..ns {
                for v in 0..ns {
                    mat[u * n + v] = lv.pass_u[l][u * ns + v];
                }
                mat[u * n + ns] = lv.leaf_center[u];
                mat[ns * n + u] = lv.leaf_center[u];
            }
            mat[ns * n + ns] = 0.0;
            return mat;
        }
        let parts = self.children(sq);
        let comp = parts.composite(lv);
        let t = comp.total();
        let nodes = parts.locate(self, content);
        let root = l == 0;
        for x in 0..n {
            if x < ns && root {
                continue;
            }
            let src: Vec<(usize, f64)> = if x < ns {
                comp.at_slot(x).into_iter().map(|s| (s, 0.0)).collect()
            } else {
                vec![(nodes[x - ns], 0.0)]
            };
            let (dist, _) = comp.dijkstra(&src);
            for y in 0..n {
                if y == x {
                    mat[x * n + y] = if x < ns { INF } else { 0.0 };
                } else if y < ns {
                    if !root {
                        mat[x * n + y] = comp
                            .at_slot(y)
                            .into_iter()
                            .map(|s| dist[t + s])
                            .fold(INF, f64::min);
                    }
                } else {
                    mat[x * n + y] = dist[t + nodes[y - ns]];
                }
            }
        }
        mat
    }

    fn children(&mut self, sq: SquareId) -> Parts {
        let ns = self.lv.ns();
        let mut mats: [Option<Arc<Vec<f64>>>; 4] = Default::default();
        let mut sizes = [ns; 4];
        let mut contents: [Vec<usize>; 4] = Default::default();
        for (c, ch) in sq.children().into_iter().enumerate() {
            if self.d.is_occupied(ch) {
                contents[c] = self.content(ch);
                sizes[c] = ns + contents[c].len();
                mats[c] = Some(self.matrix(ch));
            }
        }
        Parts {
            level: sq.level,
            mats,
            sizes,
            contents,
        }
    }

    /// Appends the walk between nodes `x` and `y` of `sq`, excluding `x`.
    fn expand(&mut self, sq: SquareId, x: usize, y: usize, out: &mut Vec<Pt>) {
        let lv = self.lv;
        let ns = lv.ns();
        let ex = Expander { lv, d: self.d };
        if sq.level == lv.max_level {
            match (x < ns, y < ns) {
                (true, true) => ex.pass(sq, x, y, false, out),
                (true, false) => out.push((ex.centre(sq), None)),
                (false, true) => out.push((ex.slot(sq, y), None)),
                (false, false) => {}
            }
            return;
        }
        let content = self.content(sq);
        let parts = self.children(sq);
        let comp = parts.composite(lv);
        let t = comp.total();
        let nodes = parts.locate(self, &content);
        let src: Vec<(usize, f64)> = if x < ns {
            comp.at_slot(x).into_iter().map(|s| (s, 0.0)).collect()
        } else {
            vec![(nodes[x - ns], 0.0)]
        };
        let (dist, pred) = comp.dijkstra(&src);
        let ends = if y < ns {
            comp.at_slot(y)
        } else {
            vec![nodes[y - ns]]
        };
        let end = ends
            .into_iter()
            .fold((INF, usize::MAX), |b, s| {
                if dist[t + s] < b.0 {
                    (dist[t + s], s)
                } else {
                    b
                }
            })
            .1;
        let children = sq.children();
        for (c, a, b) in comp.trace(&pred, end) {
            if parts.mats[c].is_some() {
                self.expand(children[c], a, b, out);
            } else {
                ex.pass(children[c], a, b, false, out);
            }
        }
    }
}

struct Parts {
    level: usize,
    mats: [Option<Arc<Vec<f64>>>; 4],
    sizes: [usize; 4],
    contents: [Vec<usize>; 4],
}

impl Parts {
    fn composite<'b>(&'b self, lv: &'b Levels) -> Composite<'b> {
        let empty = lv.pass_u[self.level + 1].as_slice();
        let mats: [&[f64]; 4] =
            std::array::from_fn(|c| self.mats[c].as_deref().map_or(empty, |m| m.as_slice()));
        Composite::new(&lv.frame, mats, self.sizes, lv.junction[self.level])
    }

    /// Composite state of each site of the parent's content.
    fn locate(&self, ctx: &Ctx, content: &[usize]) -> Vec<usize> {
        let ns = ctx.lv.ns();
        let mut offs = [0; 4];
        for c in 1..4 {
            offs[c] = offs[c - 1] + self.sizes[c - 1];
        }
        content
            .iter()
            .map(|s| {
                let c = (0..4)
                    .find(|&c| self.contents[c].contains(s))
                    .expect("site lies in a child");
                offs[c] + ns + self.contents[c].iter().position(|x| x == s).unwrap()
            })
            .collect()
    }
}

/// Held-Karp over an explicit metric; node `n` is the depot.
pub(super) struct Tsp {
    n: usize,
    path: Vec<f64>,
}

impl Tsp {
    pub(super) fn build(dist: &[Vec<f64>]) -> Self {
        let n = dist.len() - 1;
        let mut path = vec![INF; (1usize << n) * n];
        for j in 0..n {
            path[(1 << j) * n + j] = dist[n][j];
        }
        for set in 1usize..(1 << n) {
            for j in 0..n {
                let cur = path[set * n + j];
                if set & (1 << j) == 0 || !cur.is_finite() {
                    continue;
                }
                for nxt in 0..n {
                    if set & (1 << nxt) == 0 {
                        let idx = (set | 1 << nxt) * n + nxt;
                        let cand = cur + dist[j][nxt];
                        if cand < path[idx] {
                            path[idx] = cand;
                        }
                    }
                }
            }
        }
        Tsp { n, path }
    }

    pub(super) fn closed(&self, set: usize, dist: &[Vec<f64>]) -> (f64, usize) {
        let mut best = (INF, 0);
        for j in 0..self.n {
            if set & (1 << j) != 0 {
                let c = self.path[set * self.n + j] + dist[j][self.n];
                if c < best.0 {
                    best = (c, j);
                }
            }
        }
        best
    }

    fn order(&self, set: usize, dist: &[Vec<f64>]) -> Vec<usize> {
        let n = self.n;
        let (_, mut last) = self.closed(set, dist);
        let mut rest = set;
        let mut rev = vec![last];
        while rest & !(1 << last) != 0 {
            let prev = rest & !(1 << last);
            let target = self.path[rest * n + last];
            last = (0..n)
                .find(|&j| {
                    prev & (1 << j) != 0 && self.path[prev * n + j] + dist[j][last] == target
                })
                .expect("Held-Karp predecessor exists");
            rest = prev;
            rev.push(last);
        }
        rev.reverse();
        rev
    }
}

/// Solves exact mode on one dissection. Returns the traced solution, its
/// cost, the number of re-priced tours and the configurations used for them.
pub(crate) fn solve(
    lv: &Arc<Levels>,
    d: &Dissection,
    pinst: &PerturbedInstance,
    params: &DpParams,
    cache: &mut Cache,
) -> Result<(RelaxedSolution, f64, usize, usize)> {
    let n = d.n();
    let k = pinst.capacity;
    if n == 0 {
        return Ok((
            RelaxedSolution {
                solution: Solution::default(),
                demands: Vec::new(),
            },
            0.0,
            0,
            0,
        ));
    }
    if n > SUBSET_LIMIT {
        return Err(Error::Budget(format!(
            "exact mode handles at most {SUBSET_LIMIT} customers, got {n}"
        )));
    }
    let sites = Sites::new(d);
    let mut ctx = Ctx {
        lv,
        d,
        sites: &sites,
        cache,
    };
    let root = d.root();
    let ns = lv.ns();
    let content = ctx.content(root);
    let rm = ctx.matrix(root);
    let rn = ns + content.len();
    let node_of_site = |s: usize| ns + content.iter().position(|&x| x == s).unwrap();
    let node: Vec<usize> = (0..n)
        .map(|i| node_of_site(sites.of_customer[i]))
        .chain([node_of_site(0)])
        .collect();
    let dist: Vec<Vec<f64>> = node
        .iter()
        .map(|&a| node.iter().map(|&b| rm[a * rn + b]).collect())
        .collect();
    let tsp = Tsp::build(&dist);
    let full = (1usize << n) - 1;
    let mut block_cost: Vec<f64> = (0..=full)
        .map(|s| {
            if s == 0 || s.count_ones() as usize > k {
                INF
            } else {
                tsp.closed(s, &dist).0
            }
        })
        .collect();

    let mut certified: HashMap<usize, Vec<Tour>> = HashMap::new();
    let (mut repriced, mut cells) = (0, 0);
    loop {
        let (best, choice) = partition_dp(n, &block_cost);
        if !best[full].is_finite() {
            return Err(Error::Infeasible(
                "no light tour set exists for this dissection".into(),
            ));
        }
        let mut blocks = Vec::new();
        let mut rest = full;
        while rest != 0 {
            blocks.push(choice[rest]);
            rest &= !choice[rest];
        }
        let mut settled = true;
        for &b in &blocks {
            if certified.contains_key(&b) {
                continue;
            }
            let order = tsp.order(b, &dist);
            let tour = trace_tour(&mut ctx, &order, &node, d);
            let report = is_ilight(
                &Solution {
                    tours: vec![tour.clone()],
                },
                d,
                params.r,
            );
            if !report.portal_respecting() {
                return Err(Error::Internal(
                    "traced tour leaves the portal graph".into(),
                ));
            }
            if report.is_segment_light() {
                certified.insert(b, vec![tour]);
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&i| b & (1 << i) != 0).collect();
            let (cost, tours, used) = config::solve_subset(lv.clone(), d, pinst, params, &members)?;
            block_cost[b] = cost;
            certified.insert(b, tours);
            repriced += 1;
            cells += used;
            settled = false;
        }
        if settled {
            let tours = blocks.iter().flat_map(|b| certified[b].clone()).collect();
            let rs = RelaxedSolution {
                solution: Solution { tours },
                demands: Vec::new(),
            };
            return Ok((rs, best[full], repriced, cells));
        }
    }
}

fn trace_tour(ctx: &mut Ctx, order: &[usize], node: &[usize], d: &Dissection) -> Tour {
    let root = d.root();
    let depot_node = node[node.len() - 1];
    let mut pts: Vec<Pt> = vec![(d.depot_fine(), None)];
    let mut cur = depot_node;
    for &c in order {
        if node[c] != cur {
            ctx.expand(root, cur, node[c], &mut pts);
            cur = node[c];
        }
        let p = d.point_fine(c);
        match pts.last_mut() {
            Some(last) if last.0 == p && last.1.is_none() => last.1 = Some(c),
            _ => pts.push((p, Some(c))),
        }
    }
    if cur != depot_node {
        ctx.expand(root, cur, depot_node, &mut pts);
    }
    to_tour(d, order.to_vec(), &pts)
}

pub(crate) fn to_tour(d: &Dissection, customers: Vec<usize>, pts: &[Pt]) -> Tour {
    let path = pts
        .iter()
        .map(|&(p, visit)| Waypoint {
            at: d.to_grid(p),
            visit,
        })
        .collect();
    Tour::with_path(customers, path)
}
