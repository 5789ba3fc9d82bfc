//! Turning drop demands into point types.
//!
//! A rounded segment with `x` active points recorded at threshold `t`
//! must lose `y = x - t` active points at its level. The points chosen get
//! that level as their type; everything never chosen stays black (`-1`).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dissection::{Dissection, SquareId};
use crate::error::{Error, Result};
use crate::geometry::dist_f64;
use crate::solution::{segments, Solution, TypeAssignment};

/// A rounded segment and how many of its active points must go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropDemand {
    pub tour: usize,
    pub square: SquareId,
    pub level: usize,
    /// Recorded threshold `t_i`.
    pub threshold: usize,
    /// Active points `x` before rounding.
    pub active: usize,
    /// `y = x - t_i`.
    pub drop: usize,
    /// Customers on the segment from entry to exit.
    pub points: Vec<usize>,
    pub entry: [f64; 2],
    pub exit: [f64; 2],
}

impl DropDemand {
    /// The same segment walked the other way.
    pub fn reverse(&mut self) {
        self.points.reverse();
        std::mem::swap(&mut self.entry, &mut self.exit);
    }

    /// Points still active just below this segment's level.
    pub fn active_points(&self, ta: &TypeAssignment) -> Vec<usize> {
        self.points
            .iter()
            .copied()
            .filter(|&c| ta.is_active(c, self.level + 1))
            .collect()
    }
}

fn active_checked(dem: &DropDemand, ta: &TypeAssignment) -> Result<Vec<usize>> {
    let s = dem.active_points(ta);
    if s.len() != dem.active {
        return Err(Error::Contract(format!(
            "segment in {:?} has {} active points, demand expects {}",
            dem.square,
            s.len(),
            dem.active
        )));
    }
    if dem.drop > 0 && dem.drop >= s.len() {
        return Err(Error::Contract(format!(
            "cannot drop {} of {} active points",
            dem.drop,
            s.len()
        )));
    }
    Ok(s)
}

/// Cyclic interval of `y` points starting at position `start`.
pub fn interval(s: &[usize], start: usize, y: usize) -> Vec<usize> {
    (0..y).map(|t| s[(start + t) % s.len()]).collect()
}

/// Randomized selection: a uniform start, then `y` consecutive active points
/// in path order, wrapping from the exit back to the entry.
pub fn assign_types_random(demands: &[DropDemand], n: usize, seed: u64) -> Result<TypeAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ta = TypeAssignment::all_black(n);
    for dem in demands {
        let s = active_checked(dem, &ta)?;
        if dem.drop == 0 {
            continue;
        }
        let start = rng.gen_range(0..s.len());
        for c in interval(&s, start, dem.drop) {
            ta.types[c] = dem.level as i32;
        }
    }
    Ok(ta)
}

/// Per-interval quantities used by the derandomized choice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalScore {
    pub start: usize,
    /// Sum of depot distances over the interval.
    pub rad: f64,
    pub length: f64,
}

/// Gaps `z_0..z_{x-1}` of a segment: consecutive distances, with the last
/// one closing through the boundary points.
pub fn gaps(s: &[[f64; 2]], entry: [f64; 2], exit: [f64; 2]) -> Vec<f64> {
    let x = s.len();
    (0..x)
        .map(|i| {
            if i + 1 < x {
                dist_f64(s[i], s[i + 1])
            } else {
                dist_f64(entry, s[0]) + dist_f64(s[x - 1], exit)
            }
        })
        .collect()
}

/// Length of the interval of `y` points from `start`: the gaps between
/// consecutive chosen points, where wrapping from the last point to the first
/// costs the boundary gap.
pub fn interval_length(z: &[f64], start: usize, y: usize) -> f64 {
    (0..y.saturating_sub(1))
        .map(|t| z[(start + t) % z.len()])
        .sum()
}

/// Scores of all `|S|` cyclic intervals of length `y`.
pub fn interval_scores(
    s: &[[f64; 2]],
    depot: [f64; 2],
    entry: [f64; 2],
    exit: [f64; 2],
    y: usize,
) -> Vec<IntervalScore> {
    let z = gaps(s, entry, exit);
    let rad: Vec<f64> = s.iter().map(|&p| dist_f64(p, depot)).collect();
    (0..s.len())
        .map(|start| IntervalScore {
            start,
            rad: (0..y).map(|t| rad[(start + t) % s.len()]).sum(),
            length: interval_length(&z, start, y),
        })
        .collect()
}

/// Outcome of the derandomized assignment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Derandomized {
    pub assignment: TypeAssignment,
    /// Demands (by position) where no interval met both bounds and the
    /// minimax interval was used instead.
    pub fallbacks: Vec<usize>,
}

/// Derandomized selection: the first interval with
/// `Rad(Y) <= 4 (y/|S|) Rad(S)` and `length(Y) <= 4 (y/|S|) length(S)`,
/// else the interval minimizing the larger of the two normalized ratios.
pub fn assign_types_derandomized(
    demands: &[DropDemand],
    points: &[[f64; 2]],
    depot: [f64; 2],
) -> Result<Derandomized> {
    let mut ta = TypeAssignment::all_black(points.len());
    let mut fallbacks = Vec::new();
    for (di, dem) in demands.iter().enumerate() {
        let s = active_checked(dem, &ta)?;
        if dem.drop == 0 {
            continue;
        }
        let coords: Vec<[f64; 2]> = s.iter().map(|&c| points[c]).collect();
        let (start, fallback) = choose_interval(&coords, depot, dem.entry, dem.exit, dem.drop);
        if fallback {
            fallbacks.push(di);
        }
        for c in interval(&s, start, dem.drop) {
            ta.types[c] = dem.level as i32;
        }
    }
    Ok(Derandomized {
        assignment: ta,
        fallbacks,
    })
}

/// Start of the chosen interval and whether it is the minimax fallback.
pub fn choose_interval(
    s: &[[f64; 2]],
    depot: [f64; 2],
    entry: [f64; 2],
    exit: [f64; 2],
    y: usize,
) -> (usize, bool) {
    let scores = interval_scores(s, depot, entry, exit, y);
    let frac = y as f64 / s.len() as f64;
    let rad_all: f64 = s.iter().map(|&p| dist_f64(p, depot)).sum();
    let len_all: f64 = gaps(s, entry, exit).iter().sum();
    let tol = 1e-12;
    if let Some(sc) = scores
        .iter()
        .find(|sc| sc.rad <= 4.0 * frac * rad_all + tol && sc.length <= 4.0 * frac * len_all + tol)
    {
        return (sc.start, false);
    }
    let ratio = |v: f64, all: f64| {
        if all > 0.0 {
            v / (frac * all)
        } else if v > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let best = scores
        .iter()
        .map(|sc| {
            (
                ratio(sc.rad, rad_all).max(ratio(sc.length, len_all)),
                sc.start,
            )
        })
        .fold((f64::INFINITY, 0), |b, x| if x.0 < b.0 { x } else { b });
    (best.1, true)
}

/// Group rounding of a feasible solution, bottom-up: in each square and
/// threshold bucket `[t_i, t_{i+1})`, while at least `gamma` unrounded
/// segments fall in the bucket, the first `gamma` of them (by first point,
/// then boundary points) are rounded down to `t_i` by typing their earliest
/// active points with the square's level. Tours are not touched.
pub fn group_rounding(
    s: &Solution,
    d: &Dissection,
    gamma: usize,
    thresholds: &[usize],
) -> TypeAssignment {
    let n = d.n();
    let mut ta = TypeAssignment::all_black(n);
    if gamma == 0 || thresholds.is_empty() {
        return ta;
    }
    let mut by_level: BTreeMap<usize, BTreeMap<SquareId, Vec<_>>> = BTreeMap::new();
    for seg in segments(s, d) {
        by_level
            .entry(seg.square.level)
            .or_default()
            .entry(seg.square)
            .or_default()
            .push(seg);
    }
    for (&level, squares) in by_level.iter().rev() {
        for segs in squares.values() {
            let mut segs: Vec<_> = segs.iter().collect();
            segs.sort_by(|a, b| {
                a.points[0]
                    .cmp(&b.points[0])
                    .then(
                        a.entry
                            .partial_cmp(&b.entry)
                            .unwrap_or(std::cmp::Ordering::Equal),
                    )
                    .then(
                        a.exit
                            .partial_cmp(&b.exit)
                            .unwrap_or(std::cmp::Ordering::Equal),
                    )
            });
            for (i, &t) in thresholds.iter().enumerate() {
                let hi = thresholds.get(i + 1).copied().unwrap_or(usize::MAX);
                let bucket: Vec<(Vec<usize>, usize)> = segs
                    .iter()
                    .map(|seg| {
                        let act: Vec<usize> = seg
                            .points
                            .iter()
                            .copied()
                            .filter(|&c| ta.is_active(c, level + 1))
                            .collect();
                        let x = act.len();
                        (act, x)
                    })
                    .filter(|(_, x)| *x >= t && *x < hi)
                    .collect();
                for group in bucket.chunks(gamma).filter(|g| g.len() == gamma) {
                    for (act, x) in group {
                        for &c in &act[..x - t] {
                            ta.types[c] = level as i32;
                        }
                    }
                }
            }
        }
    }
    ta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissection::build_dissection;
    use crate::instance::{generate_instance, perturb, Distribution};
    use crate::solution::{check_relaxed, growth_factor, RelaxedParams};

    fn demand(points: Vec<usize>, level: usize, active: usize, drop: usize) -> DropDemand {
        DropDemand {
            tour: 0,
            square: SquareId { level, i: 0, j: 0 },
            level,
            threshold: active - drop,
            active,
            drop,
            points,
            entry: [0.0, 0.0],
            exit: [10.0, 0.0],
        }
    }

    #[test]
    fn zero_drop_leaves_types_alone() {
        let ta = assign_types_random(&[demand(vec![0, 1, 2], 2, 3, 0)], 3, 7).unwrap();
        assert!(ta.types.iter().all(|&t| t == -1));
    }

    #[test]
    fn random_selection_is_consecutive() {
        let pts = vec![4, 2, 0, 1, 3];
        for seed in 0..50 {
            let ta = assign_types_random(&[demand(pts.clone(), 3, 5, 2)], 5, seed).unwrap();
            let marked: Vec<usize> = (0..5).filter(|&k| ta.types[pts[k]] == 3).collect();
            assert_eq!(marked.len(), 2);
            let (a, b) = (marked[0], marked[1]);
            assert!(
                b == a + 1 || (a == 0 && b == 4),
                "positions {marked:?} not cyclically adjacent"
            );
        }
    }

    #[test]
    fn contract_violations() {
        assert!(matches!(
            assign_types_random(&[demand(vec![0, 1], 1, 2, 2)], 2, 0),
            Err(Error::Contract(_))
        ));
        // Active count mismatch once a deeper level took a point.
        let deeper = demand(vec![0, 1, 2], 3, 3, 1);
        let upper = demand(vec![0, 1, 2], 1, 3, 1);
        assert!(matches!(
            assign_types_random(&[deeper, upper], 3, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn deeper_labels_are_never_reselected() {
        let deeper = demand(vec![0, 1, 2, 3], 3, 4, 1);
        let upper = demand(vec![0, 1, 2, 3], 1, 3, 1);
        for seed in 0..30 {
            let ta = assign_types_random(&[deeper.clone(), upper.clone()], 4, seed).unwrap();
            assert_eq!(ta.types.iter().filter(|&&t| t == 3).count(), 1);
            assert_eq!(ta.types.iter().filter(|&&t| t == 1).count(), 1);
        }
    }

    #[test]
    fn interval_length_wraps_through_boundary() {
        // Points on a line from entry (0,0) to exit (10,0).
        let s = [[1.0, 0.0], [3.0, 0.0], [6.0, 0.0]];
        let z = gaps(&s, [0.0, 0.0], [10.0, 0.0]);
        assert_eq!(z, vec![2.0, 3.0, 1.0 + 4.0]);
        assert_eq!(interval_length(&z, 0, 2), 2.0);
        // Starting at the last point wraps: z_x = d(b1, s1) + d(s_x, b2).
        assert_eq!(interval_length(&z, 2, 2), 5.0);
        assert_eq!(interval_length(&z, 1, 1), 0.0);
    }

    #[test]
    fn symmetric_segment_takes_first_interval() {
        // Points on a circle around the depot, evenly spaced and closed up
        // through the boundary so every gap is equal.
        let k = 6;
        let s: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / k as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        let (entry, exit) = (s[0], s[k - 1]);
        // Boundary points at the first and last point make z_x = d(s_x, s_1)
        // only when they coincide with the neighbours; use the midpoint.
        let mid = [(s[0][0] + s[k - 1][0]) / 2.0, (s[0][1] + s[k - 1][1]) / 2.0];
        let _ = (entry, exit);
        let (start, fb) = choose_interval(&s, [0.0, 0.0], mid, mid, 2);
        assert_eq!((start, fb), (0, false));
    }

    #[test]
    fn derandomized_meets_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = rng.gen_range(2..9);
            let y = rng.gen_range(1..x);
            let s: Vec<[f64; 2]> = (0..x)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let depot = [rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 3.0];
            let (entry, exit) = ([0.0, rng.gen::<f64>()], [1.0, rng.gen::<f64>()]);
            let (start, fb) = choose_interval(&s, depot, entry, exit, y);
            // The averaging argument guarantees a qualifying interval.
            assert!(!fb);
            let sc = &interval_scores(&s, depot, entry, exit, y)[start];
            let frac = y as f64 / x as f64;
            let rad_all: f64 = s.iter().map(|&p| dist_f64(p, depot)).sum();
            let len_all: f64 = gaps(&s, entry, exit).iter().sum();
            assert!(sc.rad <= 4.0 * frac * rad_all + 1e-12);
            assert!(sc.length <= 4.0 * frac * len_all + 1e-12);
            // First qualifying interval: none before it qualifies.
            for e in &interval_scores(&s, depot, entry, exit, y)[..start] {
                assert!(e.rad > 4.0 * frac * rad_all || e.length > 4.0 * frac * len_all);
            }
        }
    }

    #[test]
    fn group_rounding_examples() {
        let inst: crate::Instance = generate_instance(8, 4, Distribution::Clustered, 4).unwrap();
        let p = perturb(&inst, 1.0).unwrap();
        let d = build_dissection(&p, 1, 2, 2).unwrap();
        let sol = crate::partition::partition_solve(&p.as_instance()).unwrap();
        // gamma above every segment count: nothing is rounded.
        let ta = group_rounding(&sol, &d, 100, &[1, 2, 3, 4]);
        assert!(ta.types.iter().all(|&t| t == -1));
        for gamma in 1..=3 {
            let th = [1, 2, 3, 4];
            let ta = group_rounding(&sol, &d, gamma, &th);
            let params = RelaxedParams {
                gamma: Some(gamma),
                thresholds: th.to_vec(),
                growth: growth_factor(1.0, 8),
                capacity: 4,
            };
            assert!(check_relaxed(&sol, &ta, &d, &params).passes());
        }
    }

    #[test]
    fn group_rounding_single_segment() {
        // One tour of 5 customers with thresholds [1, 4, 8].
        use crate::instance::PerturbedInstance;
        use crate::solution::Tour;
        let p = PerturbedInstance {
            points: vec![[2, 2], [6, 2], [10, 2], [14, 2], [14, 6]],
            depot: [2, 6],
            capacity: 8,
            side: 16,
            scale: 1.0,
            offset: [0.0, 0.0],
            d: 1.0,
            epsilon: 1.0,
        };
        let d = build_dissection(&p, 0, 0, 2).unwrap();
        let sol = Solution {
            tours: vec![Tour::new(vec![0, 1, 2, 3, 4])],
        };
        let ta = group_rounding(&sol, &d, 1, &[1, 4, 8]);
        // With gamma = 1 every segment is rounded onto a threshold at its
        // own level, so at least one point is dropped somewhere.
        assert!(ta.types.iter().any(|&t| t >= 0));
        for seg in segments(&sol, &d) {
            let active = seg
                .points
                .iter()
                .filter(|&&c| ta.is_active(c, seg.square.level))
                .count();
            assert!(
                [1, 4, 8].contains(&active),
                "segment in {:?} ends with {active}",
                seg.square
            );
        }
    }
}
