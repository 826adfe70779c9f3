mod common;

use opinion_weights::geometry::{
    barycentric_coords, hull_2d, hull_contains, interior_margin, HullClass, Points,
};
use proptest::prelude::*;

fn seg_dist(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    ((q[0] - a[0] - t * dx).powi(2) + (q[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Brute force: `q` is in the hull iff it lies in a triangle of input
/// points (or on a segment); the distance to the hull is the smallest
/// distance to any segment between input points.
fn oracle_distance(pts: &[[f64; 2]], q: [f64; 2]) -> f64 {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let (d1, d2, d3) = (cross(a, b, q), cross(b, c, q), cross(c, a, q));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                if !(neg && pos) && cross(a, b, c) != 0.0 {
                    return 0.0;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i..n {
            best = best.min(seg_dist(q, pts[i], pts[j]));
        }
    }
    best
}

/// Distance to the boundary through the edges that have every point on
/// one side.
fn oracle_margin(pts: &[[f64; 2]], q: [f64; 2]) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j && pts[i] != pts[j] && (0..n).all(|k| cross(pts[i], pts[j], pts[k]) >= 0.0) {
                best = best.min(seg_dist(q, pts[i], pts[j]));
            }
        }
    }
    best
}

fn cloud() -> impl Strategy<Value = (Vec<[f64; 2]>, [f64; 2])> {
    (
        prop::collection::vec(prop::array::uniform2(-1.0..1.0f64), 3..=10),
        prop::array::uniform2(-1.5..1.5f64),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn membership_agrees_with_polygon_oracle((pts, q) in cloud()) {
        let tol = 1e-9;
        let exact = oracle_distance(&pts, q);
        let margin = if exact == 0.0 { oracle_margin(&pts, q) } else { 0.0 };
        // Skip queries within a rounding band of the boundary.
        prop_assume!(if exact > 0.0 { exact > 1e-7 } else { margin > 1e-7 });
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let m = hull_contains(Points::new(&flat, 2), &q, tol).unwrap();
        let expected = if exact > tol {
            HullClass::Outside
        } else if margin > tol {
            HullClass::Inside
        } else {
            HullClass::Boundary
        };
        prop_assert_eq!(m.class, expected);
        prop_assert!((m.distance - exact).abs() <= 1e-6 * (1.0 + exact));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hull_contains_all_inputs((pts, _) in cloud()) {
        let hull = hull_2d(&pts);
        for p in &pts {
            let inside = hull.edges().all(|(a, b)| cross(a, b, *p) >= -1e-12);
            prop_assert!(inside);
        }
        for v in &hull.vertices {
            prop_assert!(pts.contains(v));
        }
    }

    #[test]
    fn margin_matches_oracle((pts, q) in cloud()) {
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let exact = if oracle_distance(&pts, q) == 0.0 { oracle_margin(&pts, q) } else { 0.0 };
        let m = interior_margin(Points::new(&flat, 2), &q).unwrap();
        prop_assert!((m - exact).abs() <= 1e-9);
    }

    #[test]
    fn barycentric_reproduces_target(pts in prop::collection::vec(prop::array::uniform2(-1.0..1.0f64), 3..=8), raw in prop::collection::vec(0.2..1.0f64, 8)) {
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let w = &raw[..pts.len()];
        let total: f64 = w.iter().sum();
        let q = [0, 1].map(|k| pts.iter().zip(w).map(|(p, wi)| p[k] * wi / total).sum::<f64>());
        let c = barycentric_coords(Points::new(&flat, 2), &q, 1e-6).unwrap();
        let rebuilt = [0, 1].map(|k| pts.iter().zip(&c.tau).map(|(p, t)| p[k] * t).sum::<f64>());
        let norm_q = (q[0] * q[0] + q[1] * q[1]).sqrt();
        prop_assert!(((rebuilt[0] - q[0]).powi(2) + (rebuilt[1] - q[1]).powi(2)).sqrt() <= 1e-8 * (1.0 + norm_q));
        prop_assert!((c.tau.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(c.tau.iter().all(|&t| t >= 1e-6));
    }
}
