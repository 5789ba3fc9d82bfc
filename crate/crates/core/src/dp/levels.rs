//! Tables shared by both solvers.
//!
//! Everything inside a square is described relative to its four children.
//! A child has `4m` perimeter slots; a pair (child, slot) is a *state*,
//! numbered `c * 4m + s`. Children meet only along the parent's cross, where
//! every child slot is a portal, so the tables below depend on the level
//! alone and are shared across squares and shifts.

use crate::dissection::Dissection;

pub(crate) const INF: f64 = f64::INFINITY;
const NONE: u32 = u32::MAX;

/// Slot position on a square of side `side` ticks with `m` slots per side.
fn perimeter(side: i64, m: usize, k: usize) -> [i64; 2] {
    let step = side / m as i64;
    let t = (k % m) as i64 * step;
    match k / m {
        0 => [t, 0],
        1 => [side, t],
        2 => [side - t, side],
        _ => [0, side - t],
    }
}

/// Child/parent slot incidence, independent of the level.
pub(crate) struct Frame {
    pub m: usize,
    /// Slots per square, `4m`.
    pub ns: usize,
    /// Position of every child state, in ticks of the child (parent side `2m`).
    #[cfg_attr(not(test), allow(dead_code))]
    pub pos: Vec<[i64; 2]>,
    /// States of other children at the same position.
    pub twins: Vec<Vec<usize>>,
    /// Child states sitting on each parent slot.
    pub at_slot: Vec<Vec<usize>>,
}

impl Frame {
    pub fn new(m: usize) -> Self {
        let ns = 4 * m;
        let mut pos = Vec::with_capacity(4 * ns);
        for c in 0..4 {
            let off = [(c % 2) as i64 * m as i64, (c / 2) as i64 * m as i64];
            for s in 0..ns {
                let p = perimeter(m as i64, m, s);
                pos.push([off[0] + p[0], off[1] + p[1]]);
            }
        }
        let twins = (0..4 * ns)
            .map(|a| {
                (0..4 * ns)
                    .filter(|&b| b / ns != a / ns && pos[b] == pos[a])
                    .collect()
            })
            .collect();
        let at_slot = (0..ns)
            .map(|k| {
                let p = perimeter(2 * m as i64, m, k);
                (0..4 * ns).filter(|&b| pos[b] == p).collect()
            })
            .collect();
        Frame {
            m,
            ns,
            pos,
            twins,
            at_slot,
        }
    }

    pub fn states(&self) -> usize {
        4 * self.ns
    }

    /// Slot position of a square of side `side` (any unit).
    pub fn slot_pos(&self, side: i64, k: usize) -> [i64; 2] {
        perimeter(side, self.m, k)
    }
}

/// A move inside one child, as produced by path searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Piece {
    pub child: usize,
    /// Start node in the child (`None`: the depot).
    pub from: Option<usize>,
    pub to: usize,
}

/// Hop-layered search over a square's children, all sharing one piece
/// matrix. `x[h][o]` is the cheapest way to finish the `h`-th piece at OUT
/// state `o`; `y[h][i]` the cheapest way to stand at IN state `i` after `h`
/// pieces and a junction (or the initial placement when `h = 0`).
pub(crate) struct Layered {
    pub x: Vec<Vec<f64>>,
    xp: Vec<Vec<u32>>,
    pub y: Vec<Vec<f64>>,
    yp: Vec<Vec<u32>>,
}

impl Layered {
    /// Runs the search. `init_in` seeds `y[0]`; `init_out` seeds `x[1]`
    /// (a first piece that starts at the depot).
    pub fn run(
        frame: &Frame,
        piece: &[f64],
        junction: f64,
        init_in: &[(usize, f64)],
        init_out: &[(usize, f64)],
        hops: usize,
    ) -> Self {
        let (ns, st) = (frame.ns, frame.states());
        let mut x = vec![vec![INF; st]; hops + 1];
        let mut xp = vec![vec![NONE; st]; hops + 1];
        let mut y = vec![vec![INF; st]; hops + 1];
        let mut yp = vec![vec![NONE; st]; hops + 1];
        for &(i, c) in init_in {
            if c < y[0][i] {
                y[0][i] = c;
            }
        }
        for h in 1..=hops {
            if h == 1 {
                for &(o, c) in init_out {
                    if c < x[1][o] {
                        x[1][o] = c;
                    }
                }
            }
            for i in 0..st {
                let yc = y[h - 1][i];
                if !yc.is_finite() {
                    continue;
                }
                let (c, s) = (i / ns, i % ns);
                let row = &piece[s * ns..(s + 1) * ns];
                for (t, &pc) in row.iter().enumerate() {
                    let cand = yc + pc;
                    let o = c * ns + t;
                    if cand < x[h][o] {
                        x[h][o] = cand;
                        xp[h][o] = i as u32;
                    }
                }
            }
            for o in 0..st {
                let xc = x[h][o];
                if !xc.is_finite() {
                    continue;
                }
                for &i in &frame.twins[o] {
                    let cand = xc + junction;
                    if cand < y[h][i] {
                        y[h][i] = cand;
                        yp[h][i] = o as u32;
                    }
                }
            }
        }
        Layered { x, xp, y, yp }
    }

    /// Pieces of the best walk finishing its `h`-th piece at OUT state `o`.
    pub fn pieces_to_out(&self, frame: &Frame, mut h: usize, mut o: usize) -> Vec<Piece> {
        let ns = frame.ns;
        let mut rev = Vec::new();
        while h > 0 {
            let i = self.xp[h][o];
            if i == NONE {
                rev.push(Piece {
                    child: o / ns,
                    from: None,
                    to: o % ns,
                });
                break;
            }
            let i = i as usize;
            rev.push(Piece {
                child: o / ns,
                from: Some(i % ns),
                to: o % ns,
            });
            h -= 1;
            if h == 0 {
                break;
            }
            o = self.yp[h][i] as usize;
        }
        rev.reverse();
        rev
    }

    /// Pieces of the best walk reaching IN state `i` after `h` pieces.
    pub fn pieces_to_in(&self, frame: &Frame, h: usize, i: usize) -> Vec<Piece> {
        if h == 0 {
            return Vec::new();
        }
        self.pieces_to_out(frame, h, self.yp[h][i] as usize)
    }
}

/// Dijkstra over the children of one square where each child has its own
/// node set (its slots, then extra nodes such as sites) and piece matrix.
/// Junctions connect slot nodes of different children at equal positions.
pub(crate) struct Composite<'a> {
    pub frame: &'a Frame,
    pub sizes: [usize; 4],
    pub offs: [usize; 4],
    pub mats: [&'a [f64]; 4],
    pub junction: f64,
}

impl<'a> Composite<'a> {
    pub fn new(frame: &'a Frame, mats: [&'a [f64]; 4], sizes: [usize; 4], junction: f64) -> Self {
        let mut offs = [0; 4];
        for c in 1..4 {
            offs[c] = offs[c - 1] + sizes[c - 1];
        }
        Composite {
            frame,
            sizes,
            offs,
            mats,
            junction,
        }
    }

    pub fn total(&self) -> usize {
        self.offs[3] + self.sizes[3]
    }

    pub fn state(&self, c: usize, node: usize) -> usize {
        self.offs[c] + node
    }

    pub fn split(&self, st: usize) -> (usize, usize) {
        let c = (0..4).rev().find(|&c| st >= self.offs[c]).unwrap_or(0);
        (c, st - self.offs[c])
    }

    /// Composite states sitting on a parent slot.
    pub fn at_slot(&self, k: usize) -> Vec<usize> {
        let ns = self.frame.ns;
        self.frame.at_slot[k]
            .iter()
            .map(|&s| self.state(s / ns, s % ns))
            .collect()
    }

    /// Shortest distances from IN sources. States `0..T` are IN, `T..2T`
    /// OUT. Returns distances and predecessors.
    pub fn dijkstra(&self, sources: &[(usize, f64)]) -> (Vec<f64>, Vec<u32>) {
        let t = self.total();
        let ns = self.frame.ns;
        let mut dist = vec![INF; 2 * t];
        let mut pred = vec![NONE; 2 * t];
        let mut done = vec![false; 2 * t];
        for &(s, c) in sources {
            if c < dist[s] {
                dist[s] = c;
            }
        }
        loop {
            let mut best = NONE as usize;
            let mut bd = INF;
            for v in 0..2 * t {
                if !done[v] && dist[v] < bd {
                    bd = dist[v];
                    best = v;
                }
            }
            if best == NONE as usize {
                break;
            }
            done[best] = true;
            if best < t {
                let (c, x) = self.split(best);
                let n = self.sizes[c];
                let row = &self.mats[c][x * n..(x + 1) * n];
                for (yn, &w) in row.iter().enumerate() {
                    let v = t + self.offs[c] + yn;
                    if yn != x && bd + w < dist[v] {
                        dist[v] = bd + w;
                        pred[v] = best as u32;
                    }
                }
            } else {
                let (c, s) = self.split(best - t);
                if s < ns {
                    for &tw in &self.frame.twins[c * ns + s] {
                        let v = self.state(tw / ns, tw % ns);
                        if bd + self.junction < dist[v] {
                            dist[v] = bd + self.junction;
                            pred[v] = best as u32;
                        }
                    }
                }
            }
        }
        (dist, pred)
    }

    /// Pieces `(child, from node, to node)` of the shortest walk ending at
    /// OUT state `end` (composite index, without the `T` offset).
    pub fn trace(&self, pred: &[u32], end: usize) -> Vec<(usize, usize, usize)> {
        let t = self.total();
        let mut rev = Vec::new();
        let mut v = t + end;
        loop {
            let p = pred[v];
            debug_assert!(p != NONE, "OUT state always has a predecessor");
            let i = p as usize;
            let (c, x) = self.split(i);
            let (_, y) = self.split(v - t);
            rev.push((c, x, y));
            match pred[i] {
                NONE => break,
                o => v = o as usize,
            }
        }
        rev.reverse();
        rev
    }
}

/// Shift-invariant per-level tables.
pub(crate) struct Levels {
    pub frame: Frame,
    pub max_level: usize,
    /// Maximum pieces per segment, `4r + 1`.
    pub hops: usize,
    /// `junction[l]`: charge for moving between two children of a level-`l`
    /// square, `lambda * sum_{j > l} d_j`.
    pub junction: Vec<f64>,
    /// Distance from a leaf's centre to each of its slots (grid units).
    pub leaf_center: Vec<f64>,
    /// Hop-bounded and unbounded pass costs per level (`ns x ns`).
    pub pass_b: Vec<Vec<f64>>,
    pub pass_u: Vec<Vec<f64>>,
}

impl Levels {
    pub fn new(d: &Dissection, lambda: f64, r: usize) -> Self {
        let m = d.m as usize;
        let frame = Frame::new(m);
        let ns = frame.ns;
        let max_level = d.max_level;
        let hops = 4 * r + 1;
        let mut junction = vec![0.0; max_level + 1];
        for l in 0..max_level {
            junction[l] = lambda * ((l + 1)..=max_level).map(|j| d.d(j)).sum::<f64>();
        }
        let unit = |k: usize| {
            let p = frame.slot_pos(m as i64, k);
            [p[0] as f64 / m as f64, p[1] as f64 / m as f64]
        };
        let leaf_center: Vec<f64> = (0..ns)
            .map(|k| (unit(k)[0] - 0.5).hypot(unit(k)[1] - 0.5))
            .collect();
        let mut leaf = vec![INF; ns * ns];
        for u in 0..ns {
            for v in 0..ns {
                if u != v {
                    leaf[u * ns + v] = leaf_straight(&frame, u, v)
                        .unwrap_or(INF)
                        .min(leaf_center[u] + leaf_center[v]);
                }
            }
        }
        let mut pass_b = vec![Vec::new(); max_level + 1];
        let mut pass_u = vec![Vec::new(); max_level + 1];
        pass_b[max_level] = leaf.clone();
        pass_u[max_level] = leaf;
        for l in (0..max_level).rev() {
            let child_b = &pass_b[l + 1];
            let mut pb = vec![INF; ns * ns];
            for u in 0..ns {
                let init: Vec<(usize, f64)> = frame.at_slot[u].iter().map(|&s| (s, 0.0)).collect();
                let lay = Layered::run(&frame, child_b, junction[l], &init, &[], hops);
                for v in 0..ns {
                    if u == v {
                        continue;
                    }
                    for h in 1..=hops {
                        for &o in &frame.at_slot[v] {
                            pb[u * ns + v] = pb[u * ns + v].min(lay.x[h][o]);
                        }
                    }
                }
            }
            let child_u = pass_u[l + 1].as_slice();
            let comp = Composite::new(&frame, [child_u; 4], [ns; 4], junction[l]);
            let t = comp.total();
            let mut pu = vec![INF; ns * ns];
            for u in 0..ns {
                let src: Vec<(usize, f64)> =
                    comp.at_slot(u).into_iter().map(|s| (s, 0.0)).collect();
                let (dist, _) = comp.dijkstra(&src);
                for v in 0..ns {
                    if u != v {
                        for s in comp.at_slot(v) {
                            pu[u * ns + v] = pu[u * ns + v].min(dist[t + s]);
                        }
                    }
                }
            }
            pass_b[l] = pb;
            pass_u[l] = pu;
        }
        Levels {
            frame,
            max_level,
            hops,
            junction,
            leaf_center,
            pass_b,
            pass_u,
        }
    }

    pub fn ns(&self) -> usize {
        self.frame.ns
    }

    /// Whether the straight leaf move `u -> v` is cheaper than (or as
    /// cheap as) the detour through the centre.
    pub fn leaf_goes_straight(&self, u: usize, v: usize) -> bool {
        match leaf_straight(&self.frame, u, v) {
            Some(c) => c <= self.leaf_center[u] + self.leaf_center[v],
            None => false,
        }
    }
}

/// Straight move between two slots of a leaf, in grid units. Moves along
/// the right or top side belong to the neighbouring cell and are refused.
fn leaf_straight(frame: &Frame, u: usize, v: usize) -> Option<f64> {
    let m = frame.m as i64;
    let (a, b) = (frame.slot_pos(m, u), frame.slot_pos(m, v));
    if u == v || (a[0] == m && b[0] == m) || (a[1] == m && b[1] == m) {
        return None;
    }
    Some(((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64) / m as f64)
}

/// Depot-dependent tables for one dissection: the cheapest hop-bounded
/// walk from the depot to each slot of the depot's square at every level,
/// and the corresponding layered searches for gluing.
pub(crate) struct DepotTables {
    /// `pass[l][s]`.
    pub pass: Vec<Vec<f64>>,
    /// Child index of the depot's square below each level.
    pub child: Vec<usize>,
}

impl DepotTables {
    pub fn new(lv: &Levels, d: &Dissection) -> Self {
        let ns = lv.ns();
        let leaf = d.leaf_of_fine(d.depot_fine());
        let mut pass = vec![Vec::new(); lv.max_level + 1];
        let mut child = vec![0; lv.max_level + 1];
        pass[lv.max_level] = lv.leaf_center.clone();
        for l in (0..lv.max_level).rev() {
            let c = leaf.ancestor(l + 1).child_slot();
            child[l] = c;
            let lay = lv.depot_search(l, c, &pass[l + 1]);
            let mut p = vec![INF; ns];
            for (v, pv) in p.iter_mut().enumerate() {
                for h in 1..=lv.hops {
                    for &o in &lv.frame.at_slot[v] {
                        *pv = pv.min(lay.x[h][o]);
                    }
                }
            }
            pass[l] = p;
        }
        DepotTables { pass, child }
    }
}

impl Levels {
    /// Layered search inside a level-`l` square starting at the depot, which
    /// lies in child `c` with depot pass costs `below`.
    pub fn depot_search(&self, l: usize, c: usize, below: &[f64]) -> Layered {
        let ns = self.ns();
        let init: Vec<(usize, f64)> = (0..ns).map(|s| (c * ns + s, below[s])).collect();
        Layered::run(
            &self.frame,
            &self.pass_b[l + 1],
            self.junction[l],
            &[],
            &init,
            self.hops,
        )
    }
}
