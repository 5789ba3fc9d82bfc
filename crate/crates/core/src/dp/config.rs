//! The configuration DP.
//!
//! A configuration of a square lists its loaded segments: portal pair
//! `(p, q)` with `p <= q` (the depot is the last node) and either the exact
//! active count (unrounded) or a threshold index (rounded). A parent's
//! configurations come from gluing the children's segments into chains of at
//! most `4r + 1` pieces, with pass-through pieces filling the gaps.

use std::collections::HashMap;
use std::sync::Arc;

use crate::dissection::{build_dissection, Dissection, SquareId};
use crate::error::{Error, Result};
use crate::instance::PerturbedInstance;
use crate::solution::{Solution, Tour, Waypoint};
use crate::typing::DropDemand;

use super::expand::{Expander, Pt};
use super::levels::{DepotTables, Layered, Levels, Piece, INF};
use super::{depot_tables, DpParams, RelaxedSolution, ThresholdSeq};

type Node = u8;
const DEPOT: Node = u8::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Label {
    /// Rounded down to threshold index `i`.
    Rnd(u8),
    /// Exact active count.
    Unr(u16),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Entry {
    p: Node,
    q: Node,
    label: Label,
}

/// How one entry was built.
#[derive(Clone, Debug)]
struct Chain {
    /// Loaded child segments in walking order: child, entry index in the
    /// child's configuration, traversed from `q` to `p`.
    pieces: Vec<(u8, u16, bool)>,
    /// Pass pieces before, between and after the loaded ones.
    hops: Vec<u8>,
    from: Node,
    to: Node,
    /// Threshold index and actual count when rounded here.
    round: Option<(u8, u16)>,
}

struct Cell {
    config: Vec<Entry>,
    cost: f64,
    children: [u32; 4],
    chains: Vec<Chain>,
}

#[derive(Default)]
struct Table {
    cells: Vec<Cell>,
    index: HashMap<Vec<Entry>, u32>,
}

const NO_CELL: u32 = u32::MAX;

/// Gap tables for one level: cheapest runs of pass pieces between child
/// states, by number of pieces.
struct Gaps {
    st: usize,
    /// `mid[l][(h * S + o) * S + i]`: from OUT `o`, `h` pass pieces, into IN `i`.
    mid: Vec<Vec<f64>>,
    /// `start[l][(h * ns + u) * S + i]`: from parent slot `u` into IN `i`.
    start: Vec<Vec<f64>>,
    /// `dstart[l][h * S + i]`: from the depot into IN `i` (`h >= 1`).
    dstart: Vec<Vec<f64>>,
}

impl Gaps {
    fn new(lv: &Levels, dt: &DepotTables) -> Self {
        let (ns, st, hh) = (lv.ns(), lv.frame.states(), lv.hops + 1);
        let mut gaps = Gaps {
            st,
            mid: Vec::new(),
            start: Vec::new(),
            dstart: Vec::new(),
        };
        for l in 0..lv.max_level {
            let (piece, j) = (&lv.pass_b[l + 1], lv.junction[l]);
            let mut mid = vec![INF; hh * st * st];
            for o in 0..st {
                let init: Vec<(usize, f64)> = lv.frame.twins[o].iter().map(|&i| (i, j)).collect();
                let lay = Layered::run(&lv.frame, piece, j, &init, &[], lv.hops);
                for h in 0..hh {
                    mid[(h * st + o) * st..(h * st + o + 1) * st].copy_from_slice(&lay.y[h]);
                }
            }
            let mut start = vec![INF; hh * ns * st];
            for u in 0..ns {
                let init: Vec<(usize, f64)> =
                    lv.frame.at_slot[u].iter().map(|&i| (i, 0.0)).collect();
                let lay = Layered::run(&lv.frame, piece, j, &init, &[], lv.hops);
                for h in 0..hh {
                    start[(h * ns + u) * st..(h * ns + u + 1) * st].copy_from_slice(&lay.y[h]);
                }
            }
            let lay = lv.depot_search(l, dt.child[l], &dt.pass[l + 1]);
            let dstart = lay.y.concat();
            gaps.mid.push(mid);
            gaps.start.push(start);
            gaps.dstart.push(dstart);
        }
        gaps
    }
}

/// Cheapest placements of one chain of loaded pieces.
struct ChainCost {
    /// `(p, q, cost, from, to, hops)` with `p <= q`, ascending cost.
    opts: Vec<(Node, Node, f64, Node, Node, Vec<u8>)>,
}

impl ChainCost {
    /// Cheapest placement; at the root only depot-to-depot counts.
    fn min(&self, root: bool) -> Option<f64> {
        if root {
            self.opts
                .iter()
                .find(|o| o.0 == DEPOT && o.1 == DEPOT)
                .map(|o| o.2)
        } else {
            self.opts.first().map(|o| o.2)
        }
    }
}

/// Fixed inputs of one gluing search.
struct GlueCtx<'b> {
    id: SquareId,
    nodes: &'b [Node],
    /// Loaded pieces: (child, entry index, p, q, count).
    loaded: &'b [(u8, u16, Node, Node, usize)],
    cells: [u32; 4],
    /// Summed cost of the chosen child cells.
    base: f64,
    limit: f64,
    root: bool,
}

/// Chains built so far in a gluing search.
struct Search {
    used: Vec<bool>,
    chains: Vec<Vec<(usize, bool)>>,
    costs: Vec<Arc<ChainCost>>,
    labels: Vec<Vec<(Label, Option<(u8, u16)>)>>,
}

/// Finished tables of one run, ready for trace-back.
pub(crate) struct Tables {
    pub cost: f64,
    pub cells: usize,
    lv: Arc<Levels>,
    d: Dissection,
    dt: DepotTables,
    seq: ThresholdSeq,
    tables: HashMap<SquareId, Table>,
    root_cell: u32,
}

struct Solver<'a> {
    lv: &'a Levels,
    d: &'a Dissection,
    gaps: &'a Gaps,
    seq: &'a ThresholdSeq,
    gamma: Option<usize>,
    k: usize,
    budget: usize,
    bound: f64,
    outside: &'a HashMap<SquareId, f64>,
    tables: HashMap<SquareId, Table>,
    cells: usize,
    work: usize,
}

/// Runs the configuration DP. With `bound`, configurations that cannot lead
/// to a solution of cost at most `bound` are pruned; if that leaves no
/// solution the search is repeated without pruning.
pub(crate) fn solve(
    lv: Arc<Levels>,
    d: &Dissection,
    pinst: &PerturbedInstance,
    params: &DpParams,
    seq: &ThresholdSeq,
    bound: Option<f64>,
) -> Result<Tables> {
    let dt = depot_tables(&lv, d);
    let gaps = Gaps::new(&lv, &dt);
    let outside = outside_bounds(&lv, d);
    let mut attempts = vec![INF];
    if let Some(b) = bound {
        let b = b * (1.0 + 1e-9) + 1e-9;
        attempts.splice(0..0, [b, 1.5 * b]);
    }
    let mut used = 0;
    for b in attempts {
        let mut s = Solver {
            lv: &lv,
            d,
            gaps: &gaps,
            seq,
            gamma: params.gamma,
            k: pinst.capacity,
            budget: params.budget.saturating_sub(used),
            bound: b,
            outside: &outside,
            tables: HashMap::new(),
            cells: 0,
            work: 0,
        };
        s.run()?;
        used += s.cells;
        if let Some((cell, cost)) = s.best_root() {
            return Ok(Tables {
                cost,
                cells: used,
                lv: lv.clone(),
                d: d.clone(),
                dt,
                seq: seq.clone(),
                tables: s.tables,
                root_cell: cell,
            });
        }
    }
    Err(Error::Infeasible("no admissible root configuration".into()))
}

/// Exact-mode configuration DP restricted to `members`: cost and tours
/// (original customer indices) of the cheapest light solution on them.
pub(crate) fn solve_subset(
    lv: Arc<Levels>,
    d: &Dissection,
    pinst: &PerturbedInstance,
    params: &DpParams,
    members: &[usize],
) -> Result<(f64, Vec<Tour>, usize)> {
    let mut sub = pinst.clone();
    sub.points = members.iter().map(|&i| pinst.points[i]).collect();
    let sd = build_dissection(&sub, d.shift.0, d.shift.1, d.m)?;
    let k = pinst.capacity.max(1);
    let values = if k == 1 { vec![1] } else { vec![1, k] };
    let seq = ThresholdSeq {
        values,
        growth: 1.0,
    };
    let exact = DpParams {
        gamma: None,
        ..params.clone()
    };
    let t = solve(lv, &sd, &sub, &exact, &seq, None)?;
    let rs = t.trace()?;
    let tours = rs
        .solution
        .tours
        .into_iter()
        .map(|t| {
            let customers = t.customers.iter().map(|&c| members[c]).collect();
            let path = t.path.map(|p| {
                p.into_iter()
                    .map(|w| Waypoint {
                        at: w.at,
                        visit: w.visit.map(|c| members[c]),
                    })
                    .collect()
            });
            Tour { customers, path }
        })
        .collect();
    Ok((t.cost, tours, t.cells))
}

impl<'a> Solver<'a> {
    fn ns(&self) -> usize {
        self.lv.ns()
    }

    fn run(&mut self) -> Result<()> {
        for l in (0..=self.lv.max_level).rev() {
            let ids: Vec<SquareId> = self.d.level_squares(l).map(|s| s.id).collect();
            for id in ids {
                let t = if l == self.lv.max_level {
                    self.leaf(id)?
                } else {
                    self.internal(id)?
                };
                self.tables.insert(id, t);
            }
        }
        Ok(())
    }

    fn best_root(&self) -> Option<(u32, f64)> {
        let t = self.tables.get(&self.d.root())?;
        let mut best: Option<(u32, f64)> = None;
        for (i, c) in t.cells.iter().enumerate() {
            if best.is_none_or(|b| c.cost < b.1) {
                best = Some((i as u32, c.cost));
            }
        }
        best
    }

    /// Usable endpoints of a square: its portal slots, then the depot if
    /// inside. The root only has the depot.
    fn nodes(&self, id: SquareId) -> Vec<Node> {
        let mut v = Vec::new();
        if id.level > 0 {
            v.extend(
                (0..self.ns())
                    .filter(|&k| self.d.is_portal_slot(id, k))
                    .map(|k| k as Node),
            );
        }
        if self.d.contains_depot(id) {
            v.push(DEPOT);
        }
        v
    }

    /// Lower bound on the cost outside a square.
    fn outside(&self, id: SquareId) -> f64 {
        self.outside.get(&id).copied().unwrap_or(0.0)
    }

    fn count(&self, l: Label) -> usize {
        match l {
            Label::Unr(x) => x as usize,
            Label::Rnd(i) => self.seq.values[i as usize],
        }
    }

    /// Labels a segment with `x` active points may carry.
    fn labels(&self, x: usize, root: bool) -> Vec<(Label, Option<(u8, u16)>)> {
        let mut v = Vec::new();
        let Some(_) = self.gamma else {
            if x <= self.k {
                v.push((Label::Unr(x as u16), None));
            }
            return v;
        };
        let g = self.seq.growth;
        if x <= self.k || (!root && (x as f64) < self.k as f64 * g) {
            v.push((Label::Unr(x as u16), None));
        }
        for (i, &t) in self.seq.values.iter().enumerate() {
            if t <= x && (x as f64) < t as f64 * g {
                v.push((Label::Rnd(i as u8), Some((i as u8, x as u16))));
            }
        }
        v
    }

    /// Group constraints on a configuration.
    fn admissible(&self, cfg: &[Entry]) -> bool {
        let Some(gamma) = self.gamma else { return true };
        let th = &self.seq.values;
        let tau = th.len() - 1;
        let mut rounded = vec![0usize; th.len()];
        let mut bucket = vec![0usize; th.len()];
        let mut unrounded = 0;
        for e in cfg {
            match e.label {
                Label::Rnd(i) => rounded[i as usize] += 1,
                Label::Unr(x) => {
                    unrounded += 1;
                    let i = th.iter().rposition(|&t| t <= x as usize).unwrap_or(0);
                    bucket[i] += 1;
                }
            }
        }
        rounded.iter().all(|&r| r % gamma == 0)
            && bucket[..tau].iter().all(|&b| b <= gamma)
            && unrounded <= gamma * tau.max(1)
    }

    fn insert(
        &mut self,
        id: SquareId,
        table: &mut Table,
        mut items: Vec<(Entry, Chain)>,
        cost: f64,
        children: [u32; 4],
    ) -> Result<()> {
        items.sort_by_key(|a| a.0);
        let config: Vec<Entry> = items.iter().map(|x| x.0).collect();
        if !self.admissible(&config) {
            return Ok(());
        }
        match table.index.get(&config) {
            Some(&i) => {
                let cell = &mut table.cells[i as usize];
                if cost < cell.cost {
                    cell.cost = cost;
                    cell.children = children;
                    cell.chains = items.into_iter().map(|x| x.1).collect();
                }
            }
            None => {
                self.cells += 1;
                if self.cells > self.budget {
                    return Err(Error::Budget(format!(
                        "square {id:?}: configuration budget of {} exhausted ({} in this square)",
                        self.budget,
                        table.cells.len()
                    )));
                }
                table.index.insert(config.clone(), table.cells.len() as u32);
                table.cells.push(Cell {
                    config,
                    cost,
                    children,
                    chains: items.into_iter().map(|x| x.1).collect(),
                });
            }
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<()> {
        self.work += 1;
        if self.work > self.budget.saturating_mul(64) {
            return Err(Error::Budget(format!(
                "configuration DP gave up after {} gluing steps",
                self.work
            )));
        }
        Ok(())
    }

    fn leaf(&mut self, id: SquareId) -> Result<Table> {
        let mut table = Table::default();
        let cnt = self.d.square(id).map_or(0, |s| s.points.len());
        if cnt == 0 {
            self.insert(id, &mut table, Vec::new(), 0.0, [NO_CELL; 4])?;
            return Ok(table);
        }
        let nodes = self.nodes(id);
        let reach = |n: Node| {
            if n == DEPOT {
                0.0
            } else {
                self.lv.leaf_center[n as usize]
            }
        };
        let mut pairs = Vec::new();
        for (a, &p) in nodes.iter().enumerate() {
            for &q in &nodes[a..] {
                pairs.push((p, q, reach(p) + reach(q)));
            }
        }
        let limit = self.bound - self.outside(id);
        let root = id.level == 0;
        // Multisets of (pair, count) summing to `cnt`, in non-decreasing order.
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
        fn rec(
            rest: usize,
            from: (usize, usize),
            npairs: usize,
            stack: &mut Vec<(usize, usize)>,
            out: &mut Vec<Vec<(usize, usize)>>,
        ) {
            if rest == 0 {
                out.push(stack.clone());
                return;
            }
            for pi in from.0..npairs {
                let lo = if pi == from.0 { from.1 } else { 1 };
                for x in lo.max(1)..=rest {
                    stack.push((pi, x));
                    rec(rest - x, (pi, x), npairs, stack, out);
                    stack.pop();
                }
            }
        }
        rec(cnt, (0, 1), pairs.len(), &mut stack, &mut out);
        for multiset in out {
            let cost: f64 = multiset.iter().map(|&(pi, _)| pairs[pi].2).sum();
            if cost > limit {
                continue;
            }
            let options: Vec<Vec<(Label, Option<(u8, u16)>)>> = multiset
                .iter()
                .map(|&(_, x)| self.labels(x, root))
                .collect();
            let mut pick = vec![0usize; multiset.len()];
            if options.iter().any(|o| o.is_empty()) {
                continue;
            }
            loop {
                self.tick()?;
                let items: Vec<(Entry, Chain)> = multiset
                    .iter()
                    .zip(&pick)
                    .zip(&options)
                    .map(|((&(pi, _), &o), opts)| {
                        let (p, q, _) = pairs[pi];
                        let (label, round) = opts[o];
                        (
                            Entry { p, q, label },
                            Chain {
                                pieces: Vec::new(),
                                hops: Vec::new(),
                                from: p,
                                to: q,
                                round,
                            },
                        )
                    })
                    .collect();
                let ok = !root || items.iter().all(|(e, _)| e.p == DEPOT && e.q == DEPOT);
                if ok {
                    self.insert(id, &mut table, items, cost, [NO_CELL; 4])?;
                }
                if !advance(&mut pick, &options) {
                    break;
                }
            }
        }
        Ok(table)
    }

    fn internal(&mut self, id: SquareId) -> Result<Table> {
        let children = id.children();
        let limit = self.bound - self.outside(id);
        // Child cells sorted by cost, for early cut-off.
        let mut lists: Vec<(usize, Vec<(f64, u32)>)> = Vec::new();
        for (c, ch) in children.iter().enumerate() {
            if let Some(t) = self.tables.get(ch) {
                let mut v: Vec<(f64, u32)> = t
                    .cells
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x.cost, i as u32))
                    .collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                lists.push((c, v));
            }
        }
        let mut table = Table::default();
        let mut cache: HashMap<Vec<(u8, Node, Node)>, Arc<ChainCost>> = HashMap::new();
        let nodes = self.nodes(id);
        let mut cells = [NO_CELL; 4];
        self.combos(
            id, &mut table, &mut cache, &nodes, &lists, 0, &mut cells, 0.0, limit,
        )?;
        Ok(table)
    }

    /// Every choice of one cell per occupied child whose summed cost stays
    /// within `limit`.
    #[allow(clippy::too_many_arguments)]
    fn combos(
        &mut self,
        id: SquareId,
        table: &mut Table,
        cache: &mut HashMap<Vec<(u8, Node, Node)>, Arc<ChainCost>>,
        nodes: &[Node],
        lists: &[(usize, Vec<(f64, u32)>)],
        at: usize,
        cells: &mut [u32; 4],
        sum: f64,
        limit: f64,
    ) -> Result<()> {
        let Some((c, list)) = lists.get(at) else {
            return self.combine(id, table, cache, nodes, *cells, sum, limit);
        };
        for &(cost, idx) in list {
            if sum + cost > limit {
                break;
            }
            cells[*c] = idx;
            self.combos(
                id,
                table,
                cache,
                nodes,
                lists,
                at + 1,
                cells,
                sum + cost,
                limit,
            )?;
        }
        cells[*c] = NO_CELL;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn combine(
        &mut self,
        id: SquareId,
        table: &mut Table,
        cache: &mut HashMap<Vec<(u8, Node, Node)>, Arc<ChainCost>>,
        nodes: &[Node],
        cells: [u32; 4],
        base: f64,
        limit: f64,
    ) -> Result<()> {
        let children = id.children();
        // Loaded pieces: (child, entry index, p, q, count).
        let mut loaded: Vec<(u8, u16, Node, Node, usize)> = Vec::new();
        for c in 0..4 {
            if cells[c] == NO_CELL {
                continue;
            }
            let cell = &self.tables[&children[c]].cells[cells[c] as usize];
            for (ei, e) in cell.config.iter().enumerate() {
                loaded.push((c as u8, ei as u16, e.p, e.q, self.count(e.label)));
            }
        }
        if loaded.is_empty() {
            return self.insert(id, table, Vec::new(), base, cells);
        }
        let g = GlueCtx {
            id,
            nodes,
            loaded: &loaded,
            cells,
            base,
            limit,
            root: id.level == 0,
        };
        let mut search = Search {
            used: vec![false; loaded.len()],
            chains: Vec::new(),
            costs: Vec::new(),
            labels: Vec::new(),
        };
        self.next_chain(&g, table, cache, &mut search, base)
    }

    /// Starts a chain at the lowest unused piece, or places the finished
    /// gluing once every piece is used.
    fn next_chain(
        &mut self,
        g: &GlueCtx,
        table: &mut Table,
        cache: &mut HashMap<Vec<(u8, Node, Node)>, Arc<ChainCost>>,
        st: &mut Search,
        acc: f64,
    ) -> Result<()> {
        let Some(i) = st.used.iter().position(|u| !u) else {
            let mut choice = vec![0usize; st.chains.len()];
            let (chains, costs, labels) = (st.chains.clone(), st.costs.clone(), st.labels.clone());
            return self.place(
                g.id,
                table,
                &chains,
                g.loaded,
                &costs,
                &labels,
                &mut choice,
                0,
                g.base,
                g.limit,
                g.cells,
                g.root,
            );
        };
        st.used[i] = true;
        let mut seq = vec![(i, false)];
        self.grow(g, table, cache, st, &mut seq, i, acc)?;
        st.used[i] = false;
        Ok(())
    }

    /// Closes `seq` as a chain (if it can be placed within the limit), then
    /// tries every way to insert a further piece with index above `top`.
    /// Inserting pieces in increasing index order generates each chain once.
    #[allow(clippy::too_many_arguments)]
    fn grow(
        &mut self,
        g: &GlueCtx,
        table: &mut Table,
        cache: &mut HashMap<Vec<(u8, Node, Node)>, Arc<ChainCost>>,
        st: &mut Search,
        seq: &mut Vec<(usize, bool)>,
        top: usize,
        acc: f64,
    ) -> Result<()> {
        self.tick()?;
        let key: Vec<(u8, Node, Node)> = seq
            .iter()
            .map(|&(pi, rev)| {
                let (c, _, p, q, _) = g.loaded[pi];
                if rev {
                    (c, q, p)
                } else {
                    (c, p, q)
                }
            })
            .collect();
        let cc = match cache.get(&key) {
            Some(cc) => cc.clone(),
            None => {
                let cc = Arc::new(self.chain_cost(g.id.level, &key, g.nodes));
                cache.insert(key, cc.clone());
                cc
            }
        };
        if let Some(min) = cc.min(g.root) {
            let x: usize = seq.iter().map(|&(pi, _)| g.loaded[pi].4).sum();
            let labels = self.labels(x, g.root);
            if !labels.is_empty() && acc + min <= g.limit {
                st.chains.push(seq.clone());
                st.costs.push(cc);
                st.labels.push(labels);
                self.next_chain(g, table, cache, st, acc + min)?;
                st.chains.pop();
                st.costs.pop();
                st.labels.pop();
            }
        }
        if seq.len() >= self.lv.hops {
            return Ok(());
        }
        for j in top + 1..g.loaded.len() {
            if st.used[j] {
                continue;
            }
            st.used[j] = true;
            for pos in 0..=seq.len() {
                for rev in [false, true] {
                    seq.insert(pos, (j, rev));
                    self.grow(g, table, cache, st, seq, j, acc)?;
                    seq.remove(pos);
                }
            }
            st.used[j] = false;
        }
        Ok(())
    }

    /// Chooses an endpoint placement for each chain, then labels.
    #[allow(clippy::too_many_arguments)]
    fn place(
        &mut self,
        id: SquareId,
        table: &mut Table,
        chains: &[Vec<(usize, bool)>],
        loaded: &[(u8, u16, Node, Node, usize)],
        costs: &[Arc<ChainCost>],
        labels: &[Vec<(Label, Option<(u8, u16)>)>],
        choice: &mut Vec<usize>,
        at: usize,
        acc: f64,
        limit: f64,
        cells: [u32; 4],
        root: bool,
    ) -> Result<()> {
        if at == chains.len() {
            let mut pick = vec![0usize; chains.len()];
            loop {
                self.tick()?;
                let items: Vec<(Entry, Chain)> = (0..chains.len())
                    .map(|ci| {
                        let (p, q, _, from, to, ref hops) = costs[ci].opts[choice[ci]];
                        let (label, round) = labels[ci][pick[ci]];
                        let pieces = chains[ci]
                            .iter()
                            .map(|&(pi, rev)| (loaded[pi].0, loaded[pi].1, rev))
                            .collect();
                        (
                            Entry { p, q, label },
                            Chain {
                                pieces,
                                hops: hops.clone(),
                                from,
                                to,
                                round,
                            },
                        )
                    })
                    .collect();
                self.insert(id, table, items, acc, cells)?;
                if !advance(&mut pick, labels) {
                    break;
                }
            }
            return Ok(());
        }
        for (oi, o) in costs[at].opts.iter().enumerate() {
            if acc + o.2 > limit {
                break;
            }
            if root && (o.0 != DEPOT || o.1 != DEPOT) {
                continue;
            }
            choice[at] = oi;
            self.place(
                id,
                table,
                chains,
                loaded,
                costs,
                labels,
                choice,
                at + 1,
                acc + o.2,
                limit,
                cells,
                root,
            )?;
        }
        Ok(())
    }

    /// Cheapest gap costs for a chain of loaded pieces `(child, start, end)`
    /// in a level-`l` square, per endpoint pair.
    fn chain_cost(&self, l: usize, seq: &[(u8, Node, Node)], nodes: &[Node]) -> ChainCost {
        let (ns, st) = (self.ns(), self.gaps.st);
        let hops = self.lv.hops;
        let j = seq.len();
        if j > hops {
            return ChainCost { opts: Vec::new() };
        }
        let spare = hops - j;
        let state = |c: u8, s: Node| c as usize * ns + s as usize;
        // Interior gaps: best cost per total hop count, with the split.
        let mut inner: Vec<(f64, Vec<u8>)> = vec![(INF, Vec::new()); spare + 1];
        inner[0] = (0.0, Vec::new());
        for w in seq.windows(2) {
            let ((c1, _, e1), (c2, s2, _)) = (w[0], w[1]);
            if e1 == DEPOT || s2 == DEPOT {
                return ChainCost { opts: Vec::new() };
            }
            let (o, i) = (state(c1, e1), state(c2, s2));
            let mut next: Vec<(f64, Vec<u8>)> = vec![(INF, Vec::new()); spare + 1];
            for a in 0..=spare {
                if !inner[a].0.is_finite() {
                    continue;
                }
                for b in 0..=spare - a {
                    let g = self.gaps.mid[l][(b * st + o) * st + i];
                    let c = inner[a].0 + g;
                    if c < next[a + b].0 {
                        let mut split = inner[a].1.clone();
                        split.push(b as u8);
                        next[a + b] = (c, split);
                    }
                }
            }
            inner = next;
        }
        let (first_c, first_s, _) = seq[0];
        let (last_c, _, last_e) = seq[j - 1];
        // Cost of reaching node `n` from the chain's end state by `h` pass pieces.
        let end_cost = |n: Node, c: u8, s: Node, h: usize| -> f64 {
            if s == DEPOT {
                return if n == DEPOT && h == 0 { 0.0 } else { INF };
            }
            let i = state(c, s);
            if n == DEPOT {
                if h == 0 {
                    INF
                } else {
                    self.gaps.dstart[l][h * st + i]
                }
            } else {
                self.gaps.start[l][(h * ns + n as usize) * st + i]
            }
        };
        let mut best: HashMap<(Node, Node), (f64, Node, Node, Vec<u8>)> = HashMap::new();
        for &a in nodes {
            for &b in nodes {
                let mut top = (INF, Vec::new());
                for hs in 0..=spare {
                    let sc = end_cost(a, first_c, first_s, hs);
                    if !sc.is_finite() {
                        continue;
                    }
                    for hm in 0..=spare - hs {
                        if !inner[hm].0.is_finite() {
                            continue;
                        }
                        for he in 0..=spare - hs - hm {
                            let c = sc + inner[hm].0 + end_cost(b, last_c, last_e, he);
                            if c < top.0 {
                                let mut v = vec![hs as u8];
                                v.extend(&inner[hm].1);
                                v.push(he as u8);
                                top = (c, v);
                            }
                        }
                    }
                }
                if !top.0.is_finite() {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                let better = best.get(&key).is_none_or(|x| top.0 < x.0);
                if better {
                    best.insert(key, (top.0, a, b, top.1));
                }
            }
        }
        let mut opts: Vec<(Node, Node, f64, Node, Node, Vec<u8>)> = best
            .into_iter()
            .map(|((p, q), (c, f, t, h))| (p, q, c, f, t, h))
            .collect();
        opts.sort_by(|x, y| x.2.total_cmp(&y.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        ChainCost { opts }
    }
}

/// Lower bounds on the cost a solution spends outside each occupied square.
///
/// Contracting the square to one node, the outside parts of all tours form
/// one closed walk through the square and every site outside it, so a
/// shortest tour over those nodes bounds them from below. Distances are
/// Euclidean plus the least crossing charge any walk between the two must
/// pay, closed under shortest paths.
fn outside_bounds(lv: &Levels, d: &Dissection) -> HashMap<SquareId, f64> {
    const EXACT_LIMIT: usize = 12;
    let unit = d.fine_per_unit() as f64;
    let mut sites: Vec<[i64; 2]> = (0..d.n()).map(|i| d.point_fine(i)).collect();
    sites.push(d.depot_fine());
    let euclid =
        |a: [i64; 2], b: [i64; 2]| ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64) / unit;
    let charge = |a: [i64; 2], b: [i64; 2]| {
        let same = (0..=lv.max_level)
            .rev()
            .find(|&l| d.square_of_fine(a, l) == d.square_of_fine(b, l))
            .unwrap_or(0);
        if same == lv.max_level {
            0.0
        } else {
            lv.junction[same]
        }
    };
    let mut out = HashMap::new();
    for sq in d.occupied() {
        let id = sq.id;
        if id.level == 0 {
            out.insert(id, 0.0);
            continue;
        }
        let outer: Vec<[i64; 2]> = sites
            .iter()
            .copied()
            .filter(|&p| !d.contains_fine(id, p))
            .collect();
        if outer.is_empty() {
            out.insert(id, 0.0);
            continue;
        }
        let (c, s) = (d.corner_fine(id), d.side_fine(id.level));
        let to_square = |p: [i64; 2]| {
            let gap = |v: i64, lo: i64| (lo - v).max(v - (lo + s)).max(0) as f64;
            gap(p[0], c[0]).hypot(gap(p[1], c[1])) / unit + lv.junction[id.level - 1]
        };
        // Node `outer.len()` is the square.
        let n = outer.len() + 1;
        let mut dist = vec![vec![0.0; n]; n];
        for a in 0..outer.len() {
            for b in 0..outer.len() {
                if a != b {
                    dist[a][b] = euclid(outer[a], outer[b]) + charge(outer[a], outer[b]);
                }
            }
            dist[a][n - 1] = to_square(outer[a]);
            dist[n - 1][a] = dist[a][n - 1];
        }
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if dist[a][k] + dist[k][b] < dist[a][b] {
                        dist[a][b] = dist[a][k] + dist[k][b];
                    }
                }
            }
        }
        let lb = if outer.len() <= EXACT_LIMIT {
            let tsp = super::relax::Tsp::build(&dist);
            tsp.closed((1 << outer.len()) - 1, &dist).0
        } else {
            mst_weight(&dist)
        };
        out.insert(id, lb);
    }
    out
}

fn mst_weight(dist: &[Vec<f64>]) -> f64 {
    let n = dist.len();
    let mut best = dist[0].clone();
    let mut done = vec![false; n];
    done[0] = true;
    let mut total = 0.0;
    for _ in 1..n {
        let v = (0..n)
            .filter(|&v| !done[v])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .unwrap();
        done[v] = true;
        total += best[v];
        for w in 0..n {
            best[w] = best[w].min(dist[v][w]);
        }
    }
    total
}

/// Odometer step over option lists; false once exhausted.
fn advance<T>(pick: &mut [usize], options: &[Vec<T>]) -> bool {
    for i in (0..pick.len()).rev() {
        pick[i] += 1;
        if pick[i] < options[i].len() {
            return true;
        }
        pick[i] = 0;
    }
    false
}

#[cfg(test)]
/// All ways to arrange pieces `0..n` into chains (ordered sequences, each
/// with an orientation per piece), counting each chain once up to reversal:
/// the lowest piece of a chain is always forward.
fn glue(
    i: usize,
    n: usize,
    max_len: usize,
    chains: &mut Vec<Vec<(usize, bool)>>,
    out: &mut Vec<Vec<Vec<(usize, bool)>>>,
) {
    if i == n {
        out.push(chains.clone());
        return;
    }
    chains.push(vec![(i, false)]);
    glue(i + 1, n, max_len, chains, out);
    chains.pop();
    for ci in 0..chains.len() {
        if chains[ci].len() >= max_len {
            continue;
        }
        for pos in 0..=chains[ci].len() {
            for rev in [false, true] {
                chains[ci].insert(pos, (i, rev));
                glue(i + 1, n, max_len, chains, out);
                chains[ci].remove(pos);
            }
        }
    }
}

impl Tables {
    /// Reconstructs tours and drop demands from the back-pointers.
    pub fn trace(&self) -> Result<RelaxedSolution> {
        let root = self.d.root();
        let cell = self.cell(root, self.root_cell)?;
        let mut tours = Vec::new();
        let mut demands = Vec::new();
        for (ei, e) in cell.config.iter().enumerate() {
            if e.p != DEPOT || e.q != DEPOT {
                return Err(Error::Internal("root entry is not a depot tour".into()));
            }
            let (pts, mut dem) = self.walk(root, self.root_cell, ei, false)?;
            let customers: Vec<usize> = pts.iter().filter_map(|p| p.1).collect();
            for dd in &mut dem {
                dd.tour = tours.len();
            }
            demands.extend(dem);
            tours.push(super::relax::to_tour(&self.d, customers, &pts));
        }
        demands.sort_by(|a, b| b.level.cmp(&a.level));
        Ok(RelaxedSolution {
            solution: Solution { tours },
            demands,
        })
    }

    fn cell(&self, id: SquareId, idx: u32) -> Result<&Cell> {
        self.tables
            .get(&id)
            .and_then(|t| t.cells.get(idx as usize))
            .ok_or_else(|| Error::Internal(format!("dangling back-pointer to {id:?}#{idx}")))
    }

    fn node_pos(&self, id: SquareId, n: Node) -> [i64; 2] {
        if n == DEPOT {
            self.d.depot_fine()
        } else {
            self.d.perimeter_fine(id, n as usize)
        }
    }

    /// Waypoints of entry `ei` of a cell from `p` to `q` (or reversed),
    /// including both ends, plus the drop demands inside.
    fn walk(
        &self,
        id: SquareId,
        ci: u32,
        ei: usize,
        reversed: bool,
    ) -> Result<(Vec<Pt>, Vec<DropDemand>)> {
        let cell = self.cell(id, ci)?;
        let entry = *cell
            .config
            .get(ei)
            .ok_or_else(|| Error::Internal("dangling entry index".into()))?;
        let chain = &cell.chains[ei];
        let mut pts: Vec<Pt> = vec![(self.node_pos(id, chain.from), None)];
        let mut demands = Vec::new();
        let lv = &self.lv;
        let ex = Expander { lv, d: &self.d };
        let ns = lv.ns();
        if id.level == lv.max_level {
            let custs = self.leaf_customers(id, ci)?;
            let site = ex.centre(id);
            for &c in &custs[ei] {
                pts.push((site, Some(c)));
            }
            pts.push((self.node_pos(id, chain.to), None));
        } else {
            let children = id.children();
            let l = id.level;
            let frame = &lv.frame;
            let piece = &lv.pass_b[l + 1];
            let j = lv.junction[l];
            let ends: Vec<(usize, Node, Node)> = chain
                .pieces
                .iter()
                .map(|&(c, e, rev)| {
                    let ce = self
                        .cell(children[c as usize], cell.children[c as usize])
                        .map(|x| x.config[e as usize]);
                    ce.map(|ce| {
                        if rev {
                            (c as usize, ce.q, ce.p)
                        } else {
                            (c as usize, ce.p, ce.q)
                        }
                    })
                })
                .collect::<Result<_>>()?;
            // Start gap.
            let (c0, s0, _) = ends[0];
            if chain.hops[0] > 0 {
                let lay = if chain.from == DEPOT {
                    lv.depot_search(l, self.dt.child[l], &self.dt.pass[l + 1])
                } else {
                    let init: Vec<(usize, f64)> = frame.at_slot[chain.from as usize]
                        .iter()
                        .map(|&i| (i, 0.0))
                        .collect();
                    Layered::run(frame, piece, j, &init, &[], lv.hops)
                };
                let ps = lay.pieces_to_in(frame, chain.hops[0] as usize, c0 * ns + s0 as usize);
                ex.pieces(id, &ps, &self.dt, &mut pts);
            }
            for (k, &(c, e, rev)) in chain.pieces.iter().enumerate() {
                let child = children[c as usize];
                let (sub, dem) = self.walk(child, cell.children[c as usize], e as usize, rev)?;
                pts.extend_from_slice(&sub[1..]);
                demands.extend(dem);
                if k + 1 < chain.pieces.len() {
                    let (ca, _, ea) = ends[k];
                    let (cb, sb, _) = ends[k + 1];
                    let o = ca * ns + ea as usize;
                    let init: Vec<(usize, f64)> = frame.twins[o].iter().map(|&i| (i, j)).collect();
                    let lay = Layered::run(frame, piece, j, &init, &[], lv.hops);
                    let ps =
                        lay.pieces_to_in(frame, chain.hops[k + 1] as usize, cb * ns + sb as usize);
                    ex.pieces(id, &ps, &self.dt, &mut pts);
                }
            }
            // End gap, walked backwards from the exit and then reversed.
            let he = *chain.hops.last().unwrap() as usize;
            if he > 0 {
                let (cl, _, el) = ends[ends.len() - 1];
                let lay = if chain.to == DEPOT {
                    lv.depot_search(l, self.dt.child[l], &self.dt.pass[l + 1])
                } else {
                    let init: Vec<(usize, f64)> = frame.at_slot[chain.to as usize]
                        .iter()
                        .map(|&i| (i, 0.0))
                        .collect();
                    Layered::run(frame, piece, j, &init, &[], lv.hops)
                };
                let ps: Vec<Piece> = lay.pieces_to_in(frame, he, cl * ns + el as usize);
                let mut back: Vec<Pt> = vec![(self.node_pos(id, chain.to), None)];
                ex.pieces(id, &ps, &self.dt, &mut back);
                back.reverse();
                pts.extend_from_slice(&back[1..]);
            }
        }
        if let Some((i, x)) = chain.round {
            let t = self.seq.values[i as usize];
            demands.push(DropDemand {
                tour: 0,
                square: id,
                level: id.level,
                threshold: t,
                active: x as usize,
                drop: x as usize - t,
                points: pts.iter().filter_map(|p| p.1).collect(),
                entry: self.d.to_grid(pts[0].0),
                exit: self.d.to_grid(pts[pts.len() - 1].0),
            });
        }
        // The chain runs from `from` to `to`; orient it as requested.
        let forward = chain.from == entry.p;
        if forward == reversed {
            pts.reverse();
            for dd in &mut demands {
                dd.reverse();
            }
        }
        Ok((pts, demands))
    }

    /// Customers of a leaf handed to each entry, in index order.
    fn leaf_customers(&self, id: SquareId, ci: u32) -> Result<Vec<Vec<usize>>> {
        let cell = self.cell(id, ci)?;
        let pts = self
            .d
            .square(id)
            .map(|s| s.points.clone())
            .unwrap_or_default();
        let sizes: Vec<usize> = cell
            .config
            .iter()
            .zip(&cell.chains)
            .map(|(e, ch)| match (ch.round, e.label) {
                (Some((_, x)), _) => x as usize,
                (None, Label::Unr(x)) => x as usize,
                (None, Label::Rnd(_)) => unreachable!("rounded entries record their count"),
            })
            .collect();
        if sizes.iter().sum::<usize>() != pts.len() {
            return Err(Error::Internal(format!(
                "leaf {id:?} counts do not match its customers"
            )));
        }
        let mut out = Vec::new();
        let mut at = 0;
        for s in sizes {
            out.push(pts[at..at + s].to_vec());
            at += s;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gluings_count_sequences_up_to_reversal() {
        // Sets of oriented sequences up to reversal of each sequence:
        // n = 1: 1; n = 2: {a}{b} + ab, ba-equivalents with orientations = 1 + 4 = 5.
        let count = |n: usize| {
            let mut out = Vec::new();
            glue(0, n, 10, &mut Vec::new(), &mut out);
            out.len()
        };
        assert_eq!(count(1), 1);
        assert_eq!(count(2), 5);
        // n = 3: brute force over all arrangements, each chain canonicalized.
        let mut out = Vec::new();
        glue(0, 3, 10, &mut Vec::new(), &mut out);
        let mut seen = std::collections::BTreeSet::new();
        for g in &out {
            let mut canon: Vec<Vec<(usize, bool)>> = g
                .iter()
                .map(|ch| {
                    let rev: Vec<(usize, bool)> = ch.iter().rev().map(|&(p, r)| (p, !r)).collect();
                    ch.clone().min(rev)
                })
                .collect();
            canon.sort();
            assert!(seen.insert(canon), "duplicate gluing");
        }
        // 3 singletons + 3 * (pair with 4 forms) + 3! / 2 * 2^3 triples = 1 + 12 + 24.
        assert_eq!(out.len(), 37);
    }
}
