//! Tours and solutions, plus the geometric checks the scheme relies on:
//! crossing counts, the extended objective, lightness and the relaxed
//! capacity definition.
//!
//! Geometry is evaluated on the fine lattice of a [`Dissection`]. A tour is
//! read as a walk from the depot back to the depot; every straight move is
//! cut where it meets a grid line and each piece is attributed to the leaf
//! cell containing its midpoint.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dissection::{Dissection, SquareId};
use crate::error::{Error, Result};
use crate::geometry::{dist_f64, route_length};
use crate::instance::Instance;
use crate::Scalar;

/// A point on a tour's geometric path (grid coordinates), optionally marking
/// the visit of a customer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub at: [f64; 2],
    pub visit: Option<usize>,
}

/// A depot-rooted tour. `path`, when present, starts and ends at the depot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub customers: Vec<usize>,
    pub path: Option<Vec<Waypoint>>,
}

impl Tour {
    pub fn new(customers: Vec<usize>) -> Self {
        Tour {
            customers,
            path: None,
        }
    }

    pub fn with_path(customers: Vec<usize>, path: Vec<Waypoint>) -> Self {
        Tour {
            customers,
            path: Some(path),
        }
    }

    pub fn len(&self) -> usize {
        self.customers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.customers.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub tours: Vec<Tour>,
}

/// Per-customer type in `-1..=l_max`; `-1` is black.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeAssignment {
    pub types: Vec<i32>,
}

impl TypeAssignment {
    pub fn all_black(n: usize) -> Self {
        TypeAssignment { types: vec![-1; n] }
    }

    /// Active at `level` means the type is strictly below it.
    pub fn is_active(&self, i: usize, level: usize) -> bool {
        self.types[i] < level as i32
    }

    pub fn is_black(&self, i: usize) -> bool {
        self.types[i] == -1
    }

    pub fn red(&self) -> Vec<usize> {
        (0..self.types.len())
            .filter(|&i| !self.is_black(i))
            .collect()
    }
}

/// Length of a tour: along its path when present, else the straight route.
pub fn tour_length<T: Scalar>(t: &Tour, inst: &Instance<T>) -> f64 {
    match &t.path {
        Some(p) => path_length(p),
        None => route_length(&t.customers, &inst.points, inst.depot).to_f64_lossy(),
    }
}

pub fn path_length(path: &[Waypoint]) -> f64 {
    path.windows(2).map(|w| dist_f64(w[0].at, w[1].at)).sum()
}

impl Solution {
    pub fn length<T: Scalar>(&self, inst: &Instance<T>) -> f64 {
        self.tours.iter().map(|t| tour_length(t, inst)).sum()
    }

    pub fn customer_count(&self) -> usize {
        self.tours.iter().map(Tour::len).sum()
    }
}

/// The solution file: tours as index lists, total length and optional
/// per-tour waypoint lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub tours: Vec<Vec<usize>>,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portals_path: Option<Vec<Vec<[f64; 2]>>>,
}

impl SolutionFile {
    pub fn from_solution<T: Scalar>(s: &Solution, inst: &Instance<T>) -> Self {
        let with_paths = !s.tours.is_empty() && s.tours.iter().all(|t| t.path.is_some());
        SolutionFile {
            tours: s.tours.iter().map(|t| t.customers.clone()).collect(),
            length: s.length(inst),
            portals_path: with_paths.then(|| {
                s.tours
                    .iter()
                    .map(|t| t.path.as_ref().unwrap().iter().map(|w| w.at).collect())
                    .collect()
            }),
        }
    }

    /// Tours without geometry; waypoint lists do not record visits.
    pub fn to_solution(&self) -> Solution {
        Solution {
            tours: self.tours.iter().map(|c| Tour::new(c.clone())).collect(),
        }
    }
}

pub fn parse_solution(text: &str) -> Result<SolutionFile> {
    serde_json::from_str(text).map_err(|e| Error::parse("<solution>", e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    Missing {
        customer: usize,
    },
    Duplicate {
        customer: usize,
        tours: Vec<usize>,
    },
    Capacity {
        tour: usize,
        load: usize,
        capacity: usize,
    },
    BadIndex {
        tour: usize,
        customer: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Coverage, duplicate and capacity violations of `s` for `n` customers and
/// capacity `k`.
pub fn is_feasible(s: &Solution, n: usize, k: usize) -> FeasibilityReport {
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut violations = Vec::new();
    for (t, tour) in s.tours.iter().enumerate() {
        if tour.len() > k {
            violations.push(Violation::Capacity {
                tour: t,
                load: tour.len(),
                capacity: k,
            });
        }
        for &c in &tour.customers {
            match seen.get_mut(c) {
                Some(v) => v.push(t),
                None => violations.push(Violation::BadIndex {
                    tour: t,
                    customer: c,
                }),
            }
        }
    }
    for (c, tours) in seen.into_iter().enumerate() {
        match tours.len() {
            0 => violations.push(Violation::Missing { customer: c }),
            1 => {}
            _ => violations.push(Violation::Duplicate { customer: c, tours }),
        }
    }
    FeasibilityReport { violations }
}

/// `eps / log2(n)^2`, with `log2(n)^2` taken as 1 when `n <= 1`.
pub fn penalty_weight(eps: f64, n: usize) -> f64 {
    if n <= 1 {
        eps
    } else {
        let l = (n as f64).log2();
        eps / (l * l)
    }
}

/// `1 + eps / log2(n)`, with `log2(n)` taken as 1 when `n <= 1`.
pub fn growth_factor(eps: f64, n: usize) -> f64 {
    if n <= 1 {
        1.0 + eps
    } else {
        1.0 + eps / (n as f64).log2()
    }
}

/// One stretch of a walk inside a single leaf cell, or a customer visit.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Step {
    pub leaf: SquareId,
    /// Start and end in fine coordinates (may be non-integral).
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub visit: Option<usize>,
}

/// Walk of a tour on the fine lattice: the path if present, else the
/// straight route through the customers.
fn walk_vertices(t: &Tour, d: &Dissection) -> Vec<([i64; 2], Option<usize>)> {
    match &t.path {
        Some(path) => path
            .iter()
            .map(|w| (d.to_fine_rounded(w.at), w.visit))
            .collect(),
        None => std::iter::once((d.depot_fine(), None))
            .chain(t.customers.iter().map(|&c| (d.point_fine(c), Some(c))))
            .chain(std::iter::once((d.depot_fine(), None)))
            .collect(),
    }
}

/// Cuts the walk into leaf-cell steps with exact rational arithmetic.
pub(crate) fn walk_steps(t: &Tour, d: &Dissection) -> Vec<Step> {
    let verts = walk_vertices(t, d);
    let s = d.side_fine(d.max_level) as i128;
    let cells = 1i128 << d.max_level;
    let mut steps = Vec::new();
    let leaf_at = |num: [i128; 2], den: i128| {
        // floor(num / (den * s)) with den > 0, clamped into the root box.
        let f = |v: i128| (v.div_euclid(den * s)).clamp(0, cells - 1) as u64;
        SquareId {
            level: d.max_level,
            i: f(num[0]),
            j: f(num[1]),
        }
    };
    for (k, &(p, visit)) in verts.iter().enumerate() {
        if let Some(c) = visit {
            let pf = [p[0] as f64, p[1] as f64];
            steps.push(Step {
                leaf: leaf_at([p[0] as i128, p[1] as i128], 1),
                from: pf,
                to: pf,
                visit: Some(c),
            });
        }
        let Some(&(q, _)) = verts.get(k + 1) else {
            break;
        };
        if p == q {
            continue;
        }
        // Parameters t = num/den in (0, 1) where the move meets a grid line.
        let mut cuts: Vec<(i128, i128)> = vec![(0, 1), (1, 1)];
        for a in 0..2 {
            let (u, v) = (p[a] as i128, q[a] as i128);
            if u == v {
                continue;
            }
            let (lo, hi) = (u.min(v), u.max(v));
            let mut line = lo.div_euclid(s) * s + s;
            while line < hi {
                let (num, den) = if v > u {
                    (line - u, v - u)
                } else {
                    (u - line, u - v)
                };
                cuts.push((num, den));
                line += s;
            }
        }
        cuts.sort_by(|x, y| (x.0 * y.1).cmp(&(y.0 * x.1)));
        cuts.dedup_by(|x, y| x.0 * y.1 == y.0 * x.1);
        let dp = [(q[0] - p[0]) as i128, (q[1] - p[1]) as i128];
        let point = |(n, dn): (i128, i128)| {
            [
                p[0] as f64 + dp[0] as f64 * n as f64 / dn as f64,
                p[1] as f64 + dp[1] as f64 * n as f64 / dn as f64,
            ]
        };
        for w in cuts.windows(2) {
            let ((n1, d1), (n2, d2)) = (w[0], w[1]);
            // Midpoint parameter (n1 d2 + n2 d1) / (2 d1 d2).
            let num_t = n1 * d2 + n2 * d1;
            let den = 2 * d1 * d2;
            let mid = [
                p[0] as i128 * den + num_t * dp[0],
                p[1] as i128 * den + num_t * dp[1],
            ];
            steps.push(Step {
                leaf: leaf_at(mid, den),
                from: point(w[0]),
                to: point(w[1]),
                visit: None,
            });
        }
    }
    steps
}

/// Crossing number `c(pi, level)` of one tour: consecutive steps whose
/// level-`level` squares differ.
pub fn tour_crossings(t: &Tour, d: &Dissection, level: usize) -> u64 {
    count_changes(&walk_steps(t, d), level)
}

fn count_changes(steps: &[Step], level: usize) -> u64 {
    steps
        .windows(2)
        .filter(|w| w[0].leaf.ancestor(level) != w[1].leaf.ancestor(level))
        .count() as u64
}

/// Total crossings of level-`level` square boundaries over all tours.
pub fn crossings(s: &Solution, d: &Dissection, level: usize) -> u64 {
    s.tours.iter().map(|t| tour_crossings(t, d, level)).sum()
}

/// Length of a tour on the dissection's lattice (grid units).
pub fn walk_length(t: &Tour, d: &Dissection) -> f64 {
    let u = d.fine_per_unit() as f64;
    walk_vertices(t, d)
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].0, w[1].0);
            ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64) / u
        })
        .sum()
}

/// Extended objective: total length plus `eps/log2(n)^2` times the
/// level-weighted crossing counts. `n` is the customer count of `d`.
pub fn extended_objective(s: &Solution, d: &Dissection, eps: f64) -> f64 {
    let lambda = penalty_weight(eps, d.n());
    let mut total = 0.0;
    for t in &s.tours {
        total += walk_length(t, d);
        let steps = walk_steps(t, d);
        let penalty: f64 = (0..=d.max_level)
            .map(|l| count_changes(&steps, l) as f64 * d.d(l))
            .sum();
        total += lambda * penalty;
    }
    total
}

/// Side of a square: bottom, right, top, left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum LightViolation {
    /// The tour crosses a dissection line away from a portal.
    NonPortal { tour: usize, at: [f64; 2] },
    /// More than `r` crossings of one side of one square.
    SideCrossings {
        tour: usize,
        square: SquareId,
        side: Side,
        count: usize,
    },
    /// A segment inside a square made of more than `4r + 1` child pieces.
    SegmentPieces {
        tour: usize,
        square: SquareId,
        pieces: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LightReport {
    pub violations: Vec<LightViolation>,
}

impl LightReport {
    pub fn portal_respecting(&self) -> bool {
        !self
            .violations
            .iter()
            .any(|v| matches!(v, LightViolation::NonPortal { .. }))
    }

    /// Portal-respecting with at most `r` crossings per square side.
    pub fn is_light(&self) -> bool {
        self.portal_respecting()
            && !self
                .violations
                .iter()
                .any(|v| matches!(v, LightViolation::SideCrossings { .. }))
    }

    /// Portal-respecting with at most `4r + 1` pieces per segment.
    pub fn is_segment_light(&self) -> bool {
        self.portal_respecting()
            && !self
                .violations
                .iter()
                .any(|v| matches!(v, LightViolation::SegmentPieces { .. }))
    }
}

/// Lightness of every tour: crossings only at portals, at most `r`
/// crossings per square side, and at most `4r + 1` child pieces per segment.
///
/// A crossing through a square corner is charged to the square's bottom or
/// top side.
pub fn is_ilight(s: &Solution, d: &Dissection, r: usize) -> LightReport {
    let mut violations = Vec::new();
    for (ti, t) in s.tours.iter().enumerate() {
        let steps: Vec<Step> = walk_steps(t, d)
            .into_iter()
            .filter(|st| st.visit.is_none())
            .collect();
        let mut sides: BTreeMap<(SquareId, Side), usize> = BTreeMap::new();
        for w in steps.windows(2) {
            let (a, b) = (w[0].leaf, w[1].leaf);
            if a == b {
                continue;
            }
            let at = w[0].to;
            let lca = (0..=d.max_level)
                .rev()
                .find(|&l| a.ancestor(l) == b.ancestor(l))
                .unwrap_or(0);
            let (ca, cb) = (a.ancestor(lca + 1), b.ancestor(lca + 1));
            if !is_portal_point(d, ca, at) && !is_portal_point(d, cb, at) {
                violations.push(LightViolation::NonPortal {
                    tour: ti,
                    at: d.to_grid_f(at),
                });
            }
            for l in (lca + 1)..=d.max_level {
                let (sa, sb) = (a.ancestor(l), b.ancestor(l));
                let side = exit_side(sa, sb);
                *sides.entry((sa, side)).or_default() += 1;
                *sides.entry((sb, opposite(side))).or_default() += 1;
            }
        }
        for ((square, side), count) in sides {
            if count > r {
                violations.push(LightViolation::SideCrossings {
                    tour: ti,
                    square,
                    side,
                    count,
                });
            }
        }
        for seg in raw_segments(&steps, d) {
            if seg.square.level < d.max_level {
                let pieces =
                    1 + count_changes(&steps[seg.start..seg.end], seg.square.level + 1) as usize;
                if pieces > 4 * r + 1 {
                    violations.push(LightViolation::SegmentPieces {
                        tour: ti,
                        square: seg.square,
                        pieces,
                    });
                }
            }
        }
    }
    LightReport { violations }
}

fn exit_side(from: SquareId, to: SquareId) -> Side {
    if to.j < from.j {
        Side::Bottom
    } else if to.j > from.j {
        Side::Top
    } else if to.i > from.i {
        Side::Right
    } else {
        Side::Left
    }
}

fn opposite(s: Side) -> Side {
    match s {
        Side::Bottom => Side::Top,
        Side::Top => Side::Bottom,
        Side::Left => Side::Right,
        Side::Right => Side::Left,
    }
}

/// Whether fine point `at` is a portal on the boundary of square `id`.
fn is_portal_point(d: &Dissection, id: SquareId, at: [f64; 2]) -> bool {
    let p = [at[0].round() as i64, at[1].round() as i64];
    if (at[0] - p[0] as f64).abs() > 1e-9 || (at[1] - p[1] as f64).abs() > 1e-9 {
        return false;
    }
    let s = d.side_fine(id.level);
    let step = s / d.m as i64;
    let [x0, y0] = d.corner_fine(id);
    let (dx, dy) = (p[0] - x0, p[1] - y0);
    let m = d.m as usize;
    let slot = if dy == 0 && (0..s).contains(&dx) && dx % step == 0 {
        Some((dx / step) as usize)
    } else if dx == s && (0..s).contains(&dy) && dy % step == 0 {
        Some(m + (dy / step) as usize)
    } else if dy == s && (1..=s).contains(&dx) && (s - dx) % step == 0 {
        Some(2 * m + ((s - dx) / step) as usize)
    } else if dx == 0 && (1..=s).contains(&dy) && (s - dy) % step == 0 {
        Some(3 * m + ((s - dy) / step) as usize)
    } else {
        None
    };
    slot.is_some_and(|k| d.is_portal_slot(id, k))
}

/// Maximal runs of steps inside one square, at every level.
struct RawSegment {
    square: SquareId,
    start: usize,
    end: usize,
}

fn raw_segments(steps: &[Step], d: &Dissection) -> Vec<RawSegment> {
    let mut out = Vec::new();
    for level in 0..=d.max_level {
        let mut start = 0;
        for k in 1..=steps.len() {
            let split = k == steps.len()
                || steps[k].leaf.ancestor(level) != steps[start].leaf.ancestor(level);
            if split {
                if start < k {
                    out.push(RawSegment {
                        square: steps[start].leaf.ancestor(level),
                        start,
                        end: k,
                    });
                }
                start = k;
            }
        }
    }
    out
}

/// A connected component of a tour inside a square that visits customers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub tour: usize,
    pub square: SquareId,
    /// Customers in visiting order.
    pub points: Vec<usize>,
    /// Where the segment enters and leaves the square (grid coordinates);
    /// the depot for depot-rooted ends.
    pub entry: [f64; 2],
    pub exit: [f64; 2],
}

/// All customer-visiting segments of a solution, ordered by level (deepest
/// first), then square, then tour.
pub fn segments(s: &Solution, d: &Dissection) -> Vec<Segment> {
    let mut out = Vec::new();
    for (ti, t) in s.tours.iter().enumerate() {
        let steps = walk_steps(t, d);
        for seg in raw_segments(&steps, d) {
            let run = &steps[seg.start..seg.end];
            let points: Vec<usize> = run.iter().filter_map(|st| st.visit).collect();
            if points.is_empty() {
                continue;
            }
            out.push(Segment {
                tour: ti,
                square: seg.square,
                points,
                entry: d.to_grid_f(run[0].from),
                exit: d.to_grid_f(run[run.len() - 1].to),
            });
        }
    }
    out.sort_by(|a, b| {
        b.square
            .level
            .cmp(&a.square.level)
            .then(a.square.cmp(&b.square))
            .then(a.tour.cmp(&b.tour))
    });
    out
}

/// Group size and threshold data for the relaxed-capacity definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxedParams {
    /// `None` means unbounded (no rounding ever required).
    pub gamma: Option<usize>,
    pub thresholds: Vec<usize>,
    pub growth: f64,
    pub capacity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RelaxedViolation {
    /// Part 1: a tour with more than `k` black customers.
    BlackLoad { tour: usize, load: usize },
    /// Part 1: a customer no tour visits.
    Uncovered { customer: usize },
    /// Part 2: threshold bucket `i` of a square needs more than `gamma`
    /// unrounded segments whatever the choice of rounded ones.
    Bucket {
        square: SquareId,
        bucket: usize,
        exact: usize,
        between: usize,
    },
    /// Part 3: a segment whose active count grows too fast one level down.
    Growth {
        tour: usize,
        square: SquareId,
        active: usize,
        active_below: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RelaxedReport {
    pub violations: Vec<RelaxedViolation>,
    /// Squares whose minimal number of unrounded segments exceeds
    /// `gamma * tau` (the per-square reading of the cap), with that number.
    pub gamma_tau_excess: Vec<(SquareId, usize)>,
}

impl RelaxedReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the relaxed-capacity definition for `s` under types `ta`.
///
/// Rounded/unrounded status is not observable from geometry, so part 2 is
/// checked existentially: in each bucket `[t_i, t_{i+1})` the segments with
/// exactly `t_i` active points may be rounded in groups of `gamma`; the
/// remainder plus the segments strictly inside the bucket must number at
/// most `gamma`. Segments with no active points belong to no bucket.
pub fn check_relaxed(
    s: &Solution,
    ta: &TypeAssignment,
    d: &Dissection,
    p: &RelaxedParams,
) -> RelaxedReport {
    let mut report = RelaxedReport::default();
    let n = ta.types.len();
    let mut covered = vec![false; n];
    for (ti, t) in s.tours.iter().enumerate() {
        let black = t
            .customers
            .iter()
            .filter(|&&c| c < n && ta.is_black(c))
            .count();
        if black > p.capacity {
            report.violations.push(RelaxedViolation::BlackLoad {
                tour: ti,
                load: black,
            });
        }
        for &c in &t.customers {
            if c < n {
                covered[c] = true;
            }
        }
    }
    for (c, ok) in covered.iter().enumerate() {
        if !ok {
            report
                .violations
                .push(RelaxedViolation::Uncovered { customer: c });
        }
    }

    let th = &p.thresholds;
    let tau = th.len().saturating_sub(1);
    let mut by_square: BTreeMap<SquareId, Vec<usize>> = BTreeMap::new();
    for seg in segments(s, d) {
        let level = seg.square.level;
        let active = seg
            .points
            .iter()
            .filter(|&&c| ta.is_active(c, level))
            .count();
        let below = seg
            .points
            .iter()
            .filter(|&&c| ta.is_active(c, level + 1))
            .count();
        if below as f64 > active as f64 * p.growth + 1e-9 {
            report.violations.push(RelaxedViolation::Growth {
                tour: seg.tour,
                square: seg.square,
                active,
                active_below: below,
            });
        }
        if active > 0 {
            by_square.entry(seg.square).or_default().push(active);
        }
    }
    let Some(gamma) = p.gamma else { return report };
    for (square, counts) in by_square {
        let mut min_unrounded = 0;
        for i in 0..=tau {
            let lo = th[i];
            let hi = th.get(i + 1).copied().unwrap_or(usize::MAX);
            let exact = counts.iter().filter(|&&x| x == lo).count();
            let between = counts.iter().filter(|&&x| x > lo && x < hi).count();
            let forced = exact % gamma + between;
            min_unrounded += forced;
            if i < tau && forced > gamma {
                report.violations.push(RelaxedViolation::Bucket {
                    square,
                    bucket: i,
                    exact,
                    between,
                });
            }
        }
        if min_unrounded > gamma * tau.max(1) {
            report.gamma_tau_excess.push((square, min_unrounded));
        }
    }
    report
}

/// Counts, per square, the customer-visiting segments (test helper for the
/// group-rounding bound).
pub fn segment_counts(s: &Solution, d: &Dissection) -> HashMap<SquareId, usize> {
    let mut m = HashMap::new();
    for seg in segments(s, d) {
        *m.entry(seg.square).or_default() += 1;
    }
    m
}
