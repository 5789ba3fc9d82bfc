//! Shifted quadtree over the perturbed grid.
//!
//! The root box has side `L' = 2L` and lower-left corner
//! `(a - L - 1/2, b - L - 1/2)`. The half-unit offset keeps every integer grid
//! point off every dissection line. Positions inside the box are handled in
//! "fine units" of `1/(2m)` grid units measured from the root corner, in which
//! every customer, the depot and every portal has integer coordinates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::PerturbedInstance;

/// A square of the quadtree: level plus column/row among the `2^level`
/// squares of that level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SquareId {
    pub level: usize,
    pub i: u64,
    pub j: u64,
}

impl SquareId {
    pub fn parent(self) -> Option<SquareId> {
        (self.level > 0).then(|| SquareId {
            level: self.level - 1,
            i: self.i / 2,
            j: self.j / 2,
        })
    }

    /// Children in the order lower-left, lower-right, upper-left, upper-right.
    pub fn children(self) -> [SquareId; 4] {
        let l = self.level + 1;
        [
            SquareId {
                level: l,
                i: 2 * self.i,
                j: 2 * self.j,
            },
            SquareId {
                level: l,
                i: 2 * self.i + 1,
                j: 2 * self.j,
            },
            SquareId {
                level: l,
                i: 2 * self.i,
                j: 2 * self.j + 1,
            },
            SquareId {
                level: l,
                i: 2 * self.i + 1,
                j: 2 * self.j + 1,
            },
        ]
    }

    /// Index of this square among its parent's children.
    pub fn child_slot(self) -> usize {
        (self.i % 2 + 2 * (self.j % 2)) as usize
    }

    pub fn ancestor(self, level: usize) -> SquareId {
        debug_assert!(level <= self.level);
        let s = self.level - level;
        SquareId {
            level,
            i: self.i >> s,
            j: self.j >> s,
        }
    }
}

/// An occupied square: one that holds customers or the depot.
#[derive(Clone, Debug)]
pub struct Square {
    pub id: SquareId,
    /// Customer indices inside, ascending.
    pub points: Vec<usize>,
    pub has_depot: bool,
}

#[derive(Clone, Debug)]
pub struct Dissection {
    /// Side `L` of the perturbed bounding square.
    pub side: u64,
    /// Side `L' = 2L` of the root box.
    pub root_side: u64,
    pub shift: (u64, u64),
    pub max_level: usize,
    /// Portals per level-0 line unit; a power of two.
    pub m: u64,
    /// Grid coordinates of the root box's lower-left corner.
    pub origin: [f64; 2],
    /// Fine coordinates of the customers and the depot.
    points_fine: Vec<[i64; 2]>,
    depot_fine: [i64; 2],
    occupied: Vec<Square>,
    index: HashMap<SquareId, usize>,
}

/// Builds the dissection for shift `(a, b)` and portal density `m`.
pub fn build_dissection(pinst: &PerturbedInstance, a: u64, b: u64, m: u64) -> Result<Dissection> {
    let l = pinst.side;
    if a >= l || b >= l {
        return Err(Error::Parameter(format!(
            "shift ({a}, {b}) outside [0, {l})"
        )));
    }
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::Parameter(format!(
            "portal density m = {m} is not a power of two"
        )));
    }
    let root_side = 2 * l;
    let max_level = root_side.trailing_zeros() as usize;
    let origin = [a as f64 - l as f64 - 0.5, b as f64 - l as f64 - 0.5];
    let m_i = m as i64;
    let to_fine = |p: [i64; 2]| {
        [
            2 * m_i * (p[0] - a as i64 + l as i64) + m_i,
            2 * m_i * (p[1] - b as i64 + l as i64) + m_i,
        ]
    };
    let points_fine: Vec<[i64; 2]> = pinst.points.iter().map(|&p| to_fine(p)).collect();
    let depot_fine = to_fine(pinst.depot);

    let mut d = Dissection {
        side: l,
        root_side,
        shift: (a, b),
        max_level,
        m,
        origin,
        points_fine,
        depot_fine,
        occupied: Vec::new(),
        index: HashMap::new(),
    };
    for level in 0..=max_level {
        let mut found: Vec<(SquareId, Vec<usize>, bool)> = Vec::new();
        let mut at: HashMap<SquareId, usize> = HashMap::new();
        let mut touch = |id: SquareId, found: &mut Vec<(SquareId, Vec<usize>, bool)>| {
            *at.entry(id).or_insert_with(|| {
                found.push((id, Vec::new(), false));
                found.len() - 1
            })
        };
        let dep = d.square_of_fine(d.depot_fine, level);
        let slot = touch(dep, &mut found);
        found[slot].2 = true;
        for (idx, &p) in d.points_fine.iter().enumerate() {
            let slot = touch(d.square_of_fine(p, level), &mut found);
            found[slot].1.push(idx);
        }
        found.sort_by_key(|f| f.0);
        for (id, points, has_depot) in found {
            d.index.insert(id, d.occupied.len());
            d.occupied.push(Square {
                id,
                points,
                has_depot,
            });
        }
    }
    Ok(d)
}

/// All `L^2` shift pairs in lexicographic order.
pub fn enumerate_shifts(side: u64) -> impl Iterator<Item = (u64, u64)> {
    (0..side).flat_map(move |a| (0..side).map(move |b| (a, b)))
}

impl Dissection {
    pub fn root(&self) -> SquareId {
        SquareId {
            level: 0,
            i: 0,
            j: 0,
        }
    }

    /// Side `d_l = L' / 2^l` of level-`l` squares, in grid units.
    pub fn d(&self, level: usize) -> f64 {
        (self.root_side >> level) as f64
    }

    /// Side of a level-`l` square in fine units.
    pub fn side_fine(&self, level: usize) -> i64 {
        ((self.root_side >> level) * 2 * self.m) as i64
    }

    pub fn fine_per_unit(&self) -> i64 {
        2 * self.m as i64
    }

    pub fn point_fine(&self, i: usize) -> [i64; 2] {
        self.points_fine[i]
    }

    pub fn depot_fine(&self) -> [i64; 2] {
        self.depot_fine
    }

    /// Number of customers.
    pub fn n(&self) -> usize {
        self.points_fine.len()
    }

    /// Grid coordinates to the nearest fine lattice point.
    pub fn to_fine_rounded(&self, p: [f64; 2]) -> [i64; 2] {
        let u = self.fine_per_unit() as f64;
        [
            ((p[0] - self.origin[0]) * u).round() as i64,
            ((p[1] - self.origin[1]) * u).round() as i64,
        ]
    }

    /// Fractional fine coordinates to grid coordinates.
    pub fn to_grid_f(&self, p: [f64; 2]) -> [f64; 2] {
        let u = self.fine_per_unit() as f64;
        [self.origin[0] + p[0] / u, self.origin[1] + p[1] / u]
    }

    /// Fine coordinates to grid coordinates.
    pub fn to_grid(&self, p: [i64; 2]) -> [f64; 2] {
        let u = self.fine_per_unit() as f64;
        [
            self.origin[0] + p[0] as f64 / u,
            self.origin[1] + p[1] as f64 / u,
        ]
    }

    /// Grid coordinates to fine coordinates, if the point lies on the fine lattice.
    pub fn to_fine(&self, p: [f64; 2]) -> Option<[i64; 2]> {
        let u = self.fine_per_unit() as f64;
        let mut out = [0i64; 2];
        for a in 0..2 {
            let v = (p[a] - self.origin[a]) * u;
            let r = v.round();
            if (v - r).abs() > 1e-6 {
                return None;
            }
            out[a] = r as i64;
        }
        Some(out)
    }

    /// The level-`l` square containing a fine point (half-open, upper-right).
    pub fn square_of_fine(&self, p: [i64; 2], level: usize) -> SquareId {
        let s = self.side_fine(level);
        let cells = 1i64 << level;
        SquareId {
            level,
            i: p[0].div_euclid(s).clamp(0, cells - 1) as u64,
            j: p[1].div_euclid(s).clamp(0, cells - 1) as u64,
        }
    }

    pub fn leaf_of_fine(&self, p: [i64; 2]) -> SquareId {
        self.square_of_fine(p, self.max_level)
    }

    /// Lower-left corner of a square in fine units.
    pub fn corner_fine(&self, id: SquareId) -> [i64; 2] {
        let s = self.side_fine(id.level);
        [id.i as i64 * s, id.j as i64 * s]
    }

    /// Lower-left corner of a square in grid coordinates.
    pub fn corner(&self, id: SquareId) -> [f64; 2] {
        self.to_grid(self.corner_fine(id))
    }

    /// Level of the grid line at integer offset `k` (grid units) from the
    /// root corner; `None` when `k` is not a line of the dissection.
    pub fn line_level_index(&self, k: i64) -> Option<usize> {
        let ls = self.root_side as i64;
        if !(0..=ls).contains(&k) {
            return None;
        }
        if k == 0 || k == ls {
            return Some(0);
        }
        Some(self.max_level - k.trailing_zeros() as usize)
    }

    /// Level of the vertical (`axis = 0`) or horizontal (`axis = 1`) line at
    /// grid coordinate `c`; `None` if no dissection line lies there.
    pub fn line_level(&self, axis: usize, c: f64) -> Option<usize> {
        let k = c - self.origin[axis];
        if k != k.round() {
            return None;
        }
        self.line_level_index(k as i64)
    }

    /// Level of the line through fine coordinate `f` (which must be a
    /// multiple of the leaf side).
    fn line_level_fine(&self, f: i64) -> Option<usize> {
        let u = self.fine_per_unit();
        if f % u != 0 {
            return None;
        }
        self.line_level_index(f / u)
    }

    /// Fine position of perimeter slot `k` (0..4m), counter-clockwise from
    /// the lower-left corner.
    pub fn perimeter_fine(&self, id: SquareId, k: usize) -> [i64; 2] {
        let m = self.m as usize;
        let s = self.side_fine(id.level);
        let step = s / self.m as i64;
        let [x0, y0] = self.corner_fine(id);
        let t = (k % m) as i64 * step;
        match k / m {
            0 => [x0 + t, y0],
            1 => [x0 + s, y0 + t],
            2 => [x0 + s - t, y0 + s],
            3 => [x0, y0 + s - t],
            _ => unreachable!("perimeter slot out of range"),
        }
    }

    /// Whether perimeter slot `k` of the square is a portal: corners always
    /// are; other slots must sit on the portal grid of their side's line.
    pub fn is_portal_slot(&self, id: SquareId, k: usize) -> bool {
        let m = self.m as usize;
        if k.is_multiple_of(m) {
            return true;
        }
        let p = self.perimeter_fine(id, k);
        // Bottom/top sides lie on horizontal lines, left/right on vertical.
        let (line, along) = match k / m {
            0 | 2 => (p[1], p[0]),
            _ => (p[0], p[1]),
        };
        let Some(level) = self.line_level_fine(line) else {
            return false;
        };
        // Portal spacing on a level-j line is d_j / m grid units = 2 d_j fine units.
        let spacing = 2 * (self.root_side >> level) as i64;
        along % spacing == 0
    }

    /// Perimeter slots of the square that carry portals.
    pub fn portal_slots(&self, id: SquareId) -> Vec<usize> {
        (0..4 * self.m as usize)
            .filter(|&k| self.is_portal_slot(id, k))
            .collect()
    }

    pub fn contains_fine(&self, id: SquareId, p: [i64; 2]) -> bool {
        self.square_of_fine(p, id.level) == id
    }

    pub fn contains_depot(&self, id: SquareId) -> bool {
        self.contains_fine(id, self.depot_fine)
    }

    /// Portal coordinates of a square (grid units): boundary portals in
    /// counter-clockwise order, then the depot if the square contains it.
    pub fn portals(&self, id: SquareId) -> Vec<[f64; 2]> {
        let mut out: Vec<[f64; 2]> = self
            .portal_slots(id)
            .into_iter()
            .map(|k| self.to_grid(self.perimeter_fine(id, k)))
            .collect();
        if self.contains_depot(id) {
            out.push(self.to_grid(self.depot_fine));
        }
        out
    }

    pub fn occupied(&self) -> &[Square] {
        &self.occupied
    }

    pub fn square(&self, id: SquareId) -> Option<&Square> {
        self.index.get(&id).map(|&i| &self.occupied[i])
    }

    pub fn is_occupied(&self, id: SquareId) -> bool {
        self.index.contains_key(&id)
    }

    /// Occupied squares of one level.
    pub fn level_squares(&self, level: usize) -> impl Iterator<Item = &Square> {
        self.occupied.iter().filter(move |s| s.id.level == level)
    }

    /// Leaf square holding customer `i`.
    pub fn leaf_of_point(&self, i: usize) -> SquareId {
        self.leaf_of_fine(self.points_fine[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, perturb, Distribution};

    fn pinst_with_side(side: u64) -> PerturbedInstance {
        PerturbedInstance {
            points: vec![[2, 2], [6, 2]],
            depot: [2, 6],
            capacity: 1,
            side,
            scale: 1.0,
            offset: [0.0, 0.0],
            d: 1.0,
            epsilon: 1.0,
        }
    }

    #[test]
    fn unshifted_geometry() {
        let d = build_dissection(&pinst_with_side(8), 0, 0, 4).unwrap();
        assert_eq!(d.root_side, 16);
        assert_eq!(d.max_level, 4);
        assert_eq!(d.d(1), 8.0);
        assert_eq!(d.d(4), 1.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = pinst_with_side(8);
        assert!(matches!(
            build_dissection(&p, 8, 0, 4),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            build_dissection(&p, 0, 0, 3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn every_point_in_one_square_per_level() {
        let inst: crate::Instance = generate_instance(9, 3, Distribution::Uniform, 5).unwrap();
        let p = perturb(&inst, 0.5).unwrap();
        for (a, b) in [(0, 0), (3, 7), (p.side - 1, 1)] {
            let d = build_dissection(&p, a, b, 2).unwrap();
            for level in 0..=d.max_level {
                let mut seen = vec![0usize; p.n()];
                for sq in d.level_squares(level) {
                    for &i in &sq.points {
                        seen[i] += 1;
                    }
                }
                assert!(seen.iter().all(|&c| c == 1));
                assert_eq!(d.level_squares(level).filter(|s| s.has_depot).count(), 1);
            }
            // Nesting: occupied children of an occupied square hold exactly its points.
            for sq in d.occupied() {
                if sq.id.level == d.max_level {
                    continue;
                }
                let mut pts: Vec<usize> = sq
                    .id
                    .children()
                    .iter()
                    .filter_map(|c| d.square(*c))
                    .flat_map(|c| c.points.clone())
                    .collect();
                pts.sort();
                assert_eq!(pts, sq.points);
            }
        }
    }

    #[test]
    fn level_frequency_is_exact_over_all_shifts() {
        // Lines bounding squares of side L/2^l are the lines of level <= l + 1.
        let side = 8u64;
        let p = pinst_with_side(side);
        let c = 3.5;
        for l in 0..=3usize {
            let hits = (0..side)
                .filter(|&a| {
                    let d = build_dissection(&p, a, 0, 1).unwrap();
                    d.line_level(0, c).is_some_and(|lv| lv <= l + 1)
                })
                .count();
            assert_eq!(hits as u64, 1 << l, "level {l}");
        }
    }

    #[test]
    fn root_portal_count() {
        let d = build_dissection(&pinst_with_side(8), 0, 0, 4).unwrap();
        assert_eq!(d.portal_slots(d.root()).len(), 16);
    }

    #[test]
    fn portal_count_bound_and_depot_portal() {
        let inst: crate::Instance = generate_instance(8, 3, Distribution::Clustered, 2).unwrap();
        let p = perturb(&inst, 0.5).unwrap();
        for m in [1, 2, 4, 8] {
            let d = build_dissection(&p, 5 % p.side, 3 % p.side, m).unwrap();
            for sq in d.occupied() {
                let portals = d.portals(sq.id);
                assert!(portals.len() <= 4 * m as usize + 5);
                if sq.has_depot {
                    assert_eq!(*portals.last().unwrap(), d.to_grid(d.depot_fine()));
                    assert_eq!(d.to_grid(d.depot_fine()), p.depot_f64());
                }
            }
        }
    }

    #[test]
    fn child_portals_refine_parent_portals() {
        let inst: crate::Instance = generate_instance(6, 2, Distribution::Uniform, 9).unwrap();
        let p = perturb(&inst, 1.0).unwrap();
        let d = build_dissection(&p, 1, 2, 4).unwrap();
        for sq in d.occupied() {
            if sq.id.level == d.max_level {
                continue;
            }
            let parent: Vec<[i64; 2]> = d
                .portal_slots(sq.id)
                .iter()
                .map(|&k| d.perimeter_fine(sq.id, k))
                .collect();
            // Every parent portal is a portal of some child sharing that boundary point.
            for q in &parent {
                let ok = sq.id.children().iter().any(|&c| {
                    d.portal_slots(c)
                        .iter()
                        .any(|&k| d.perimeter_fine(c, k) == *q)
                });
                assert!(ok, "parent portal {q:?} missing in children of {:?}", sq.id);
            }
            // Child portals on the parent's boundary sit at parent spacing refined by two.
            let step = d.side_fine(sq.id.level) / d.m as i64 / 2;
            for c in sq.id.children() {
                for k in d.portal_slots(c) {
                    let q = d.perimeter_fine(c, k);
                    let corner = d.corner_fine(sq.id);
                    assert_eq!((q[0] - corner[0]) % step, 0);
                    assert_eq!((q[1] - corner[1]) % step, 0);
                }
            }
        }
    }

    #[test]
    fn shift_enumeration() {
        assert_eq!(enumerate_shifts(2).count(), 4);
        assert_eq!(enumerate_shifts(1).collect::<Vec<_>>(), vec![(0, 0)]);
        let all: Vec<_> = enumerate_shifts(4).collect();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
        assert_eq!(all.len(), 16);
    }

    #[test]
    fn deterministic() {
        let inst: crate::Instance = generate_instance(7, 2, Distribution::Uniform, 4).unwrap();
        let p = perturb(&inst, 0.5).unwrap();
        let a = build_dissection(&p, 3, 1, 2).unwrap();
        let b = build_dissection(&p, 3, 1, 2).unwrap();
        let ids = |d: &Dissection| {
            d.occupied()
                .iter()
                .map(|s| (s.id, s.points.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
    }
}
