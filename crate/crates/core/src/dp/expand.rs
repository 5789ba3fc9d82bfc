//! Unfolding table entries into waypoints on the fine lattice.

use crate::dissection::{Dissection, SquareId};

use super::levels::{Composite, DepotTables, Layered, Levels, Piece, INF};

/// A waypoint in fine coordinates, optionally visiting a customer.
pub(crate) type Pt = ([i64; 2], Option<usize>);

pub(crate) struct Expander<'a> {
    pub lv: &'a Levels,
    pub d: &'a Dissection,
}

impl<'a> Expander<'a> {
    pub fn slot(&self, sq: SquareId, k: usize) -> [i64; 2] {
        self.d.perimeter_fine(sq, k)
    }

    pub fn centre(&self, sq: SquareId) -> [i64; 2] {
        let c = self.d.corner_fine(sq);
        let h = self.d.side_fine(sq.level) / 2;
        [c[0] + h, c[1] + h]
    }

    /// Appends the walk of a pass piece `u -> v` through `sq`, excluding its
    /// start point.
    pub fn pass(&self, sq: SquareId, u: usize, v: usize, bounded: bool, out: &mut Vec<Pt>) {
        let lv = self.lv;
        let l = sq.level;
        if l == lv.max_level {
            if !lv.leaf_goes_straight(u, v) {
                out.push((self.centre(sq), None));
            }
            out.push((self.slot(sq, v), None));
            return;
        }
        let children = sq.children();
        let pieces: Vec<Piece> = if bounded {
            let init: Vec<(usize, f64)> = lv.frame.at_slot[u].iter().map(|&s| (s, 0.0)).collect();
            let lay = Layered::run(
                &lv.frame,
                &lv.pass_b[l + 1],
                lv.junction[l],
                &init,
                &[],
                lv.hops,
            );
            let (h, o) = best_out(lv, &lay, v);
            lay.pieces_to_out(&lv.frame, h, o)
        } else {
            let ns = lv.ns();
            let mat = lv.pass_u[l + 1].as_slice();
            let comp = Composite::new(&lv.frame, [mat; 4], [ns; 4], lv.junction[l]);
            let src: Vec<(usize, f64)> = comp.at_slot(u).into_iter().map(|s| (s, 0.0)).collect();
            let (dist, pred) = comp.dijkstra(&src);
            let t = comp.total();
            let end = comp
                .at_slot(v)
                .into_iter()
                .fold((INF, usize::MAX), |b, s| {
                    if dist[t + s] < b.0 {
                        (dist[t + s], s)
                    } else {
                        b
                    }
                })
                .1;
            comp.trace(&pred, end)
                .into_iter()
                .map(|(c, x, y)| Piece {
                    child: c,
                    from: Some(x),
                    to: y,
                })
                .collect()
        };
        for p in pieces {
            let from = p.from.expect("pass pieces start at slots");
            self.pass(children[p.child], from, p.to, bounded, out);
        }
    }

    /// Appends the hop-bounded walk from the depot to slot `v` of `sq`.
    pub fn depot_pass(&self, sq: SquareId, v: usize, dt: &DepotTables, out: &mut Vec<Pt>) {
        let lv = self.lv;
        let l = sq.level;
        if l == lv.max_level {
            out.push((self.slot(sq, v), None));
            return;
        }
        let lay = lv.depot_search(l, dt.child[l], &dt.pass[l + 1]);
        let (h, o) = best_out(lv, &lay, v);
        self.pieces(sq, &lay.pieces_to_out(&lv.frame, h, o), dt, out);
    }

    /// Appends a list of bounded pass pieces (possibly starting at the depot).
    pub fn pieces(&self, sq: SquareId, pieces: &[Piece], dt: &DepotTables, out: &mut Vec<Pt>) {
        let children = sq.children();
        for p in pieces {
            match p.from {
                None => self.depot_pass(children[p.child], p.to, dt, out),
                Some(f) => self.pass(children[p.child], f, p.to, true, out),
            }
        }
    }
}

/// Cheapest finish at parent slot `v`, preferring fewer pieces.
pub(crate) fn best_out(lv: &Levels, lay: &Layered, v: usize) -> (usize, usize) {
    let mut best = (INF, 0, 0);
    for h in 1..=lv.hops {
        for &o in &lv.frame.at_slot[v] {
            if lay.x[h][o] < best.0 {
                best = (lay.x[h][o], h, o);
            }
        }
    }
    (best.1, best.2)
}
