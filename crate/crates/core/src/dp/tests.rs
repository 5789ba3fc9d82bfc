use super::*;
use crate::dissection::{build_dissection, enumerate_shifts};
use crate::instance::{generate_instance, perturb, Distribution, Instance};
use crate::oracle::exact_cvrp;
use crate::solution::{check_relaxed, extended_objective, is_feasible, is_ilight, walk_length};
use crate::typing::group_rounding;

fn pinst(n: usize, k: usize, dist: Distribution, seed: u64, eps: f64) -> PerturbedInstance {
    let inst: Instance = generate_instance(n, k, dist, seed).unwrap();
    perturb(&inst, eps).unwrap()
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn threshold_examples() {
    assert_eq!(thresholds(1, 0.5, 10).unwrap().values, vec![1]);
    assert_eq!(thresholds(4, 1.0, 16).unwrap().values, vec![1, 2, 3, 4]);
    let t = thresholds(8, 0.5, 16).unwrap();
    assert_eq!(t.values.first(), Some(&1));
    assert_eq!(t.values.last(), Some(&8));
    assert!(t.values.windows(2).all(|w| w[0] < w[1]));
    assert!(t.values.len() <= 25);
    assert!((t.growth - 1.125).abs() < 1e-12);
    assert!(thresholds(0, 0.5, 4).is_err());
    assert!(thresholds(3, 0.0, 4).is_err());
}

#[test]
fn trimming_keeps_capacity() {
    let t = thresholds(8, 1.0, 16).unwrap();
    assert_eq!(t.trimmed(2).values, vec![1, 8]);
    assert_eq!(t.trimmed(1).values, vec![8]);
    assert_eq!(t.trimmed(100), t);
}

#[test]
fn parameter_validation() {
    let p = pinst(3, 2, Distribution::Uniform, 1, 1.0);
    let d = build_dissection(&p, 0, 0, 2).unwrap();
    for bad in [
        DpParams {
            m: 3,
            ..DpParams::default()
        },
        DpParams {
            m: 2,
            gamma: Some(0),
            ..DpParams::default()
        },
    ] {
        assert!(matches!(solve_dp(&p, &d, &bad), Err(Error::Parameter(_))));
    }
    // Dissection built with another m.
    assert!(matches!(
        solve_dp(&p, &d, &DpParams::default()),
        Err(Error::Parameter(_))
    ));
    let bad_th = DpParams {
        m: 2,
        thresholds: Some(vec![1, 1, 2]),
        ..DpParams::default()
    };
    assert!(matches!(
        solve_dp(&p, &d, &bad_th),
        Err(Error::Parameter(_))
    ));
}

fn exact_params(m: u64, r: usize) -> DpParams {
    DpParams {
        m,
        r,
        ..DpParams::default()
    }
}

/// Runs the exact mode and checks the invariants every traced solution must
/// meet. Returns the cost and the traced tours.
fn run_checked(p: &PerturbedInstance, d: &Dissection, params: &DpParams) -> (f64, Solution) {
    let out = solve_dp(p, d, params).unwrap();
    let rs = trace_back(&out).unwrap();
    let s = rs.solution;
    assert!(is_feasible(&s, p.n(), p.capacity).is_feasible());
    assert!(s.tours.iter().all(|t| t.path.is_some()));
    let f = extended_objective(&s, d, p.epsilon);
    assert!(
        rel_eq(f, out.cost),
        "traced F {f} differs from table cost {}",
        out.cost
    );
    let light = is_ilight(&s, d, params.r);
    assert!(
        light.portal_respecting() && light.is_segment_light(),
        "{:?}",
        light.violations
    );
    (out.cost, s)
}

#[test]
fn single_customer() {
    let p = pinst(1, 1, Distribution::Uniform, 3, 1.0);
    let d = build_dissection(&p, 1, 2, 2).unwrap();
    let (cost, s) = run_checked(&p, &d, &exact_params(2, 1));
    assert_eq!(s.tours.len(), 1);
    let direct = 2.0 * crate::geometry::dist_f64(p.point_f64(0), p.depot_f64());
    assert!(cost + 1e-9 >= direct);
}

#[test]
fn traced_objective_matches_and_beats_nothing_below_opt() {
    for seed in 0..6 {
        let p = pinst(5, 2 + (seed as usize % 2), Distribution::Uniform, seed, 1.0);
        let (_, opt) = exact_cvrp(&p.as_instance()).unwrap();
        for (a, b) in [(0, 0), (3, 5), (7, 1)] {
            let (a, b) = (a % p.side, b % p.side);
            let d = build_dissection(&p, a, b, 2).unwrap();
            let (cost, s) = run_checked(&p, &d, &exact_params(2, 2));
            let len = s.tours.iter().map(|t| walk_length(t, &d)).sum::<f64>();
            assert!(len + 1e-9 >= opt, "walk {len} below optimum {opt}");
            assert!(cost + 1e-9 >= len);
        }
    }
}

#[test]
fn more_portals_and_more_pieces_never_hurt() {
    for seed in 0..4 {
        let p = pinst(4, 2, Distribution::Clustered, seed, 1.0);
        let (a, b) = (seed % p.side, (2 * seed + 1) % p.side);
        let base = {
            let d = build_dissection(&p, a, b, 2).unwrap();
            solve_dp(&p, &d, &exact_params(2, 1)).unwrap().cost
        };
        let d = build_dissection(&p, a, b, 2).unwrap();
        let more_r = solve_dp(&p, &d, &exact_params(2, 2)).unwrap().cost;
        assert!(more_r <= base + 1e-9);
        let d4 = build_dissection(&p, a, b, 4).unwrap();
        let more_m = solve_dp(&p, &d4, &exact_params(4, 1)).unwrap().cost;
        assert!(more_m <= base + 1e-9);
    }
}

#[test]
fn deterministic_and_engine_matches_one_shot() {
    let p = pinst(6, 3, Distribution::Uniform, 11, 1.0);
    let params = exact_params(2, 2);
    let mut engine = DpEngine::new(&p, &params).unwrap();
    for (a, b) in enumerate_shifts(p.side).step_by(7).take(6) {
        let d = build_dissection(&p, a, b, 2).unwrap();
        let one = solve_dp(&p, &d, &params).unwrap();
        let two = engine.solve(&d).unwrap();
        assert_eq!(one.cost, two.cost);
        assert_eq!(trace_back(&one).unwrap(), trace_back(&two).unwrap());
    }
}

#[test]
fn exact_mode_has_no_drops() {
    let p = pinst(5, 2, Distribution::Uniform, 2, 1.0);
    let d = build_dissection(&p, 1, 1, 2).unwrap();
    let out = solve_dp(&p, &d, &exact_params(2, 2)).unwrap();
    assert_eq!(out.mode, DpMode::Exact);
    assert!(trace_back(&out).unwrap().demands.is_empty());
}

#[test]
fn configuration_dp_agrees_with_exact_mode() {
    // With gamma above every segment count and thresholds at every load
    // value, rounding never applies and the configuration DP solves the
    // same problem as the exact mode.
    let cases = [
        (1, 7, (3, 0)),
        (2, 33, (3, 0)),
        (2, 7, (0, 0)),
        (3, 3, (3, 0)),
        (3, 5, (11, 2)),
    ];
    for (n, seed, (a, b)) in cases {
        let p = pinst(n, 2, Distribution::Uniform, seed, 1.0);
        let d = build_dissection(&p, a % p.side, b % p.side, 1).unwrap();
        let exact = solve_dp(&p, &d, &exact_params(1, 1)).unwrap().cost;
        let params = DpParams {
            m: 1,
            r: 1,
            gamma: Some(8),
            thresholds: Some(vec![1, 2]),
            ..DpParams::default()
        };
        let out = solve_dp(&p, &d, &params).unwrap();
        assert_eq!(out.mode, DpMode::Rounded);
        assert!(
            rel_eq(out.cost, exact),
            "n {n} seed {seed}: configuration {} vs exact {exact}",
            out.cost
        );
        let rs = trace_back(&out).unwrap();
        assert!(is_feasible(&rs.solution, p.n(), p.capacity).is_feasible());
        let f = extended_objective(&rs.solution, &d, p.epsilon);
        assert!(
            rel_eq(f, out.cost),
            "traced F {f} differs from table cost {}",
            out.cost
        );
        let light = is_ilight(&rs.solution, &d, 1);
        assert!(
            light.portal_respecting() && light.is_segment_light(),
            "{:?}",
            light.violations
        );
    }
}

/// Six points on a line, three on each side of the depot.
fn line_instance() -> PerturbedInstance {
    let points = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]
        .iter()
        .map(|&x| [x, 0.0])
        .collect();
    let inst = Instance::new([0.0, 0.0], points, 3).unwrap();
    perturb(&inst, 1.0).unwrap()
}

#[test]
fn rounded_line_passes_relaxed_checker() {
    let p = line_instance();
    let params = DpParams {
        m: 1,
        r: 1,
        gamma: Some(2),
        tau_cap: Some(2),
        ..DpParams::default()
    };
    let rp = params.relaxed_params(&p).unwrap();
    assert_eq!(rp.thresholds, vec![1, 3]);
    let mut rounded = 0;
    for (a, b) in [(0, 0), (1, 3), (5, 2)] {
        let d = build_dissection(&p, a, b, 1).unwrap();
        let out = solve_dp(&p, &d, &params).unwrap();
        let rs = trace_back(&out).unwrap();
        let f = extended_objective(&rs.solution, &d, p.epsilon);
        assert!(rel_eq(f, out.cost));
        rounded += rs.demands.len();
        for dd in &rs.demands {
            let t = rp.thresholds[..].binary_search(&dd.threshold).is_ok();
            assert!(
                t && dd.threshold <= dd.active
                    && (dd.active as f64) < dd.threshold as f64 * rp.growth
            );
            assert_eq!(dd.drop, dd.active - dd.threshold);
        }
        for seed in 0..5 {
            let ta = crate::typing::assign_types_random(&rs.demands, p.n(), seed).unwrap();
            let report = check_relaxed(&rs.solution, &ta, &d, &rp);
            assert!(report.passes(), "{:?}", report.violations);
        }
    }
    assert!(rounded > 0, "no shift produced a rounded segment");
}

#[test]
fn group_rounding_of_traced_tours() {
    let p = pinst(6, 3, Distribution::Clustered, 5, 1.0);
    let d = build_dissection(&p, 2, 1, 2).unwrap();
    let (_, s) = run_checked(&p, &d, &exact_params(2, 2));
    let params = DpParams {
        m: 2,
        gamma: Some(2),
        ..DpParams::default()
    };
    let rp = params.relaxed_params(&p).unwrap();
    let ta = group_rounding(&s, &d, 2, &rp.thresholds);
    let report = check_relaxed(&s, &ta, &d, &rp);
    assert!(report.passes(), "{:?}", report.violations);
}

#[test]
fn budget_is_an_error() {
    let p = pinst(5, 3, Distribution::Uniform, 9, 1.0);
    let d = build_dissection(&p, 0, 0, 1).unwrap();
    let params = DpParams {
        m: 1,
        r: 1,
        gamma: Some(1),
        budget: 3,
        ..DpParams::default()
    };
    assert!(matches!(solve_dp(&p, &d, &params), Err(Error::Budget(_))));
}

#[test]
fn unit_groups_drop_points() {
    // With gamma 1 every segment is rounded, and three clustered points force
    // loads that fall strictly between thresholds.
    let mut dropped = 0;
    for seed in 0..3 {
        let p = pinst(3, 2, Distribution::Clustered, seed, 1.0);
        let d = build_dissection(&p, 0, 0, 1).unwrap();
        let params = DpParams {
            m: 1,
            r: 1,
            gamma: Some(1),
            ..DpParams::default()
        };
        let rp = params.relaxed_params(&p).unwrap();
        let out = solve_dp(&p, &d, &params).unwrap();
        let rs = trace_back(&out).unwrap();
        let bound = p.epsilon / (p.n() as f64).log2();
        for dd in &rs.demands {
            assert!(
                dd.threshold <= dd.active && (dd.active as f64) < dd.threshold as f64 * rp.growth
            );
            assert!(dd.drop as f64 <= dd.active as f64 * bound + 1e-9);
            dropped += dd.drop;
        }
        let ta = crate::typing::assign_types_random(&rs.demands, p.n(), seed).unwrap();
        let red = ta.types.iter().filter(|&&t| t >= 0).count();
        assert_eq!(red, rs.demands.iter().map(|dd| dd.drop).sum::<usize>());
        // Rounded loads only bound the black points of each tour.
        for t in &rs.solution.tours {
            assert!(t.customers.iter().filter(|&&i| ta.is_black(i)).count() <= p.capacity);
        }
        let report = check_relaxed(&rs.solution, &ta, &d, &rp);
        assert!(report.passes(), "{:?}", report.violations);
    }
    assert!(dropped > 0);
}
