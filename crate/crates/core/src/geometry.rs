//! Weighted barycenter, convex hulls and hull membership.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{distance, SystemState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("membership solver stalled")]
    Stalled,
    #[error("target outside hull (residual {residual:e})")]
    OutsideHull { residual: f64 },
    #[error("target too close to boundary for strictly positive coefficients (min coefficient {min_coefficient:e})")]
    TooCloseToBoundary { min_coefficient: f64 },
    #[error("empty point set")]
    Empty,
    #[error("query has dimension {query}, points have dimension {points}")]
    Dimension { query: usize, points: usize },
    #[error("tolerance must be positive")]
    Tolerance,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Borrowed row-major point cloud.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    coords: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(coords: &'a [f64], dim: usize) -> Self {
        assert!(
            dim > 0 && coords.len().is_multiple_of(dim),
            "coordinates do not tile dimension {dim}"
        );
        Self { coords, dim }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &'a [f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.coords.chunks(self.dim)
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(GeometryError::Empty);
        }
        if q.len() != self.dim {
            return Err(GeometryError::Dimension {
                query: q.len(),
                points: self.dim,
            });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn weighted_mean(points: Points<'_>, weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; points.dim()];
    for (p, &w) in points.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(p) {
            *o += w * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    out
}

/// `sum m_i x_i / sum m_i`.
pub fn barycenter(state: &SystemState) -> Vec<f64> {
    weighted_mean(state.points(), state.weights())
}

/// Counterclockwise convex polygon without collinear vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull2D {
    pub vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain. Collinear input yields the two extreme points,
/// coincident input a single vertex.
pub fn hull_2d(points: &[[f64; 2]]) -> Hull2D {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return Hull2D { vertices: pts };
    }
    let mut lower: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 2 && lower[0] == lower[1] {
        lower.pop();
    }
    Hull2D { vertices: lower }
}

impl Hull2D {
    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Distance from `q` to the polygon boundary when `q` lies strictly
    /// inside, 0 otherwise. Degenerate hulls have empty interior.
    pub fn interior_distance(&self, q: [f64; 2]) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for (a, b) in self.edges() {
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let signed = cross(a, b, q) / len;
            if signed <= 0.0 {
                return 0.0;
            }
            best = best.min(signed);
        }
        best
    }
}

/// Result of a hull membership query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HullClass {
    Inside,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub class: HullClass,
    /// Upper estimate of `dist(q, hull)`.
    pub distance: f64,
}

const FW_MAX_ITERATIONS: usize = 100_000;
const FW_STALL_ITERATIONS: usize = 1_000;

/// Pairwise Frank-Wolfe on `|sum xi_i p_i - q|^2` over the simplex, stopped
/// once the duality gap drops below `tol^2`, the residual is below `tol^2`,
/// or progress hits the rounding floor. With `decide` set it also stops as
/// soon as the side of `tol` the distance lies on is certain.
/// Returns the distance estimate `|sum xi_i p_i - q|`.
pub(crate) fn frank_wolfe_distance(
    points: Points<'_>,
    q: &[f64],
    tol: f64,
    decide: bool,
) -> Result<f64> {
    let gap_tol = tol * tol;
    let n = points.len();
    let dim = points.dim();
    let start = (0..n)
        .min_by(|&a, &b| distance(points.get(a), q).total_cmp(&distance(points.get(b), q)))
        .ok_or(GeometryError::Empty)?;
    let scale = points
        .iter()
        .map(|p| distance(p, q))
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let mut xi = vec![0.0; n];
    xi[start] = 1.0;
    let mut x = vec![0.0; dim];
    let mut r = vec![0.0; dim];
    let mut grad = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for _ in 0..FW_MAX_ITERATIONS {
        x.iter_mut().for_each(|c| *c = 0.0);
        for (p, &w) in points.iter().zip(&xi) {
            if w != 0.0 {
                x.iter_mut().zip(p).for_each(|(xk, pk)| *xk += w * pk);
            }
        }
        r.iter_mut()
            .zip(x.iter().zip(q))
            .for_each(|(ri, (xk, qk))| *ri = xk - qk);
        for (g, p) in grad.iter_mut().zip(points.iter()) {
            *g = 2.0 * dot(p, &r);
        }
        let toward = (0..n).min_by(|&a, &b| grad[a].total_cmp(&grad[b])).unwrap();
        let away = (0..n)
            .filter(|&i| xi[i] > 0.0)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]))
            .unwrap();
        // Formed from x - p directly so the rounding scales with |r|, not
        // with the coordinate size.
        let gap: f64 = 2.0
            * r.iter()
                .zip(x.iter().zip(points.get(toward)))
                .map(|(ri, (xk, pk))| ri * (xk - pk))
                .sum::<f64>();
        let norm_r = dot(&r, &r).sqrt();
        let floor = 1e-14 * norm_r * scale;
        if gap < gap_tol || gap <= floor || toward == away || norm_r <= gap_tol.max(1e-15 * scale) {
            return Ok(norm_r);
        }
        // Rounding can leave the pairwise steps cycling; stop once the
        // residual has not improved for a while.
        if norm_r < best {
            best = norm_r;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > FW_STALL_ITERATIONS {
                return Ok(best);
            }
        }
        // The gap bounds the suboptimality: dist^2 >= |r|^2 - gap.
        if decide && (norm_r <= tol || norm_r * norm_r - gap > gap_tol) {
            return Ok(norm_r);
        }
        let dir: Vec<f64> = points
            .get(toward)
            .iter()
            .zip(points.get(away))
            .map(|(s, v)| s - v)
            .collect();
        let dd = dot(&dir, &dir);
        if dd == 0.0 {
            return Ok(norm_r);
        }
        let gamma_max = xi[away];
        let gamma = (-dot(&r, &dir) / dd).clamp(0.0, gamma_max);
        if gamma == 0.0 {
            return Ok(norm_r);
        }
        xi[toward] += gamma;
        if gamma >= gamma_max {
            xi[away] = 0.0;
        } else {
            xi[away] -= gamma;
        }
    }
    Err(GeometryError::Stalled)
}

/// Classifies `q` against the convex hull of `points`.
///
/// The distance comes from Frank-Wolfe with stopping rule gap < tol^2;
/// `Inside` additionally requires an interior margin larger than `tol`.
pub fn hull_contains(points: Points<'_>, q: &[f64], tol: f64) -> Result<Membership> {
    points.check_query(q)?;
    if !(tol > 0.0) {
        return Err(GeometryError::Tolerance);
    }
    let distance = frank_wolfe_distance(points, q, tol, false)?;
    let class = if distance > tol {
        HullClass::Outside
    } else if interior_margin(points, q)? > tol {
        HullClass::Inside
    } else {
        HullClass::Boundary
    };
    Ok(Membership { class, distance })
}

/// Distance from `q` to the hull boundary (0 when outside or on it).
///
/// Exact for `d <= 2`. For `d >= 3` this is a certified lower bound: the
/// largest `eta` with every `q +- eta e_k` inside the hull, divided by
/// `sqrt(d)` (the inscribed radius of that cross-polytope).
pub fn interior_margin(points: Points<'_>, q: &[f64]) -> Result<f64> {
    points.check_query(q)?;
    match points.dim() {
        1 => {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[0]), hi.max(p[0]))
                });
            Ok((q[0] - lo).min(hi - q[0]).max(0.0))
        }
        2 => {
            let pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
            Ok(hull_2d(&pts).interior_distance([q[0], q[1]]))
        }
        dim => cross_polytope_margin(points, q, dim),
    }
}

fn cross_polytope_margin(points: Points<'_>, q: &[f64], dim: usize) -> Result<f64> {
    // Upper bound on eta from the support function along +-e_k.
    let mut hi = f64::INFINITY;
    for k in 0..dim {
        let (lo_k, hi_k) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[k]), hi.max(p[k]))
            });
        hi = hi.min(q[k] - lo_k).min(hi_k - q[k]);
    }
    if hi <= 0.0 {
        return Ok(0.0);
    }
    let scale = points
        .iter()
        .map(|p| distance(p, q))
        .fold(0.0_f64, f64::max);
    let member_tol = 1e-12 * scale.max(1.0);
    let all_inside = |eta: f64| -> Result<bool> {
        let mut probe = q.to_vec();
        for k in 0..dim {
            for sign in [-1.0, 1.0] {
                probe[k] = q[k] + sign * eta;
                if frank_wolfe_distance(points, &probe, member_tol, true)? > member_tol {
                    return Ok(false);
                }
            }
            probe[k] = q[k];
        }
        Ok(true)
    };
    let mut lo = 0.0;
    if !all_inside(0.0)? {
        return Ok(0.0);
    }
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if all_inside(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo / (dim as f64).sqrt())
}

/// Convex-combination coefficients reproducing a target point.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricCoords {
    pub tau: Vec<f64>,
    pub residual: f64,
}

const DYKSTRA_MAX_ITERATIONS: usize = 200_000;

/// Coefficients `tau` on the simplex with `sum tau_i x_i = q`, chosen as the
/// exact solution closest to the uniform vector `1/N` (the vanishing-
/// regularisation limit of `|X tau - q|^2 + lambda |tau - 1/N|^2`).
///
/// Computed by Dykstra's alternating projections between the affine set
/// `{X tau = q, sum tau = 1}` and the nonnegative orthant.
pub fn barycentric_coords(
    points: Points<'_>,
    q: &[f64],
    tau_min: f64,
) -> Result<BarycentricCoords> {
    points.check_query(q)?;
    let n = points.len();
    let dim = points.dim();
    let rows = dim + 1;
    let a = DMatrix::from_fn(rows, n, |r, c| if r < dim { points.get(c)[r] } else { 1.0 });
    let b = nalgebra::DVector::from_fn(rows, |r, _| if r < dim { q[r] } else { 1.0 });
    let gram = &a * a.transpose();
    let gram_pinv = gram
        .clone()
        .pseudo_inverse(1e-12 * gram.norm().max(1.0))
        .expect("pseudo-inverse with nonnegative epsilon");
    let project_affine = |y: &nalgebra::DVector<f64>| -> nalgebra::DVector<f64> {
        let defect = &a * y - &b;
        y - a.transpose() * (&gram_pinv * defect)
    };

    let tolerance = 1e-8 * (1.0 + dot(q, q).sqrt());
    let mut x = nalgebra::DVector::from_element(n, 1.0 / n as f64);
    let mut p = nalgebra::DVector::zeros(n);
    let mut corr = nalgebra::DVector::zeros(n);
    for _ in 0..DYKSTRA_MAX_ITERATIONS {
        let y = project_affine(&(&x + &p));
        p = &x + &p - &y;
        let shifted = &y + &corr;
        let next = shifted.map(|v| v.max(0.0));
        corr = shifted - &next;
        let moved = (&next - &x).norm();
        x = next;
        if moved < 1e-15 {
            break;
        }
    }

    let total: f64 = x.sum();
    if total <= 0.0 {
        return Err(GeometryError::OutsideHull {
            residual: f64::INFINITY,
        });
    }
    let tau: Vec<f64> = x.iter().map(|v| v / total).collect();
    let mut reproduced = vec![0.0; dim];
    for (pt, &w) in points.iter().zip(&tau) {
        reproduced.iter_mut().zip(pt).for_each(|(r, c)| *r += w * c);
    }
    let residual = distance(&reproduced, q);
    if residual > tolerance {
        return Err(GeometryError::OutsideHull { residual });
    }
    let min_coefficient = tau.iter().copied().fold(f64::INFINITY, f64::min);
    if min_coefficient < tau_min {
        return Err(GeometryError::TooCloseToBoundary { min_coefficient });
    }
    Ok(BarycentricCoords { tau, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(pts: &[[f64; 2]]) -> Vec<f64> {
        pts.iter().flatten().copied().collect()
    }

    const TRIANGLE: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn barycenter_examples() {
        let s = SystemState::new(vec![vec![0.0], vec![2.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(barycenter(&s), vec![1.0]);
        let s = SystemState::new(vec![vec![0.0], vec![4.0]], vec![1.0, 3.0]).unwrap();
        assert_eq!(barycenter(&s), vec![3.0]);
        let s = SystemState::new(vec![vec![1.5, -2.0]], vec![0.3]).unwrap();
        assert_eq!(barycenter(&s), vec![1.5, -2.0]);
    }

    #[test]
    fn hull_drops_interior_point() {
        let h = hull_2d(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2]]);
        assert_eq!(h.vertices, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn hull_degenerate_inputs() {
        assert_eq!(hull_2d(&[[1.0, 1.0]; 4]).vertices, vec![[1.0, 1.0]]);
        let h = hull_2d(&[[0.0, 0.0], [2.0, 2.0], [1.0, 1.0], [3.0, 3.0]]);
        assert_eq!(h.vertices, vec![[0.0, 0.0], [3.0, 3.0]]);
    }

    #[test]
    fn hull_drops_collinear_edge_points() {
        let h = hull_2d(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]);
        assert_eq!(h.vertices.len(), 4);
    }

    #[test]
    fn membership_triangle() {
        let f = flat(&TRIANGLE);
        let pts = Points::new(&f, 2);
        let m = hull_contains(pts, &[0.25, 0.25], 1e-9).unwrap();
        assert_eq!(m.class, HullClass::Inside);
        let m = hull_contains(pts, &[1.0, 1.0], 1e-9).unwrap();
        assert_eq!(m.class, HullClass::Outside);
        assert!((m.distance - 0.5_f64.sqrt()).abs() < 1e-9);
        let m = hull_contains(pts, &[0.5, 0.5], 1e-9).unwrap();
        assert_eq!(m.class, HullClass::Boundary);
    }

    #[test]
    fn membership_errors() {
        let f = flat(&TRIANGLE);
        let pts = Points::new(&f, 2);
        assert_eq!(
            hull_contains(pts, &[0.0], 1e-9),
            Err(GeometryError::Dimension {
                query: 1,
                points: 2
            })
        );
        assert_eq!(
            hull_contains(pts, &[0.0, 0.0], 0.0),
            Err(GeometryError::Tolerance)
        );
    }

    #[test]
    fn membership_in_three_dimensions() {
        let f = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let pts = Points::new(&f, 3);
        let m = hull_contains(pts, &[0.1, 0.1, 0.1], 1e-9).unwrap();
        assert_eq!(m.class, HullClass::Inside);
        let m = hull_contains(pts, &[1.0, 1.0, 1.0], 1e-9).unwrap();
        assert_eq!(m.class, HullClass::Outside);
        // Projection of (1,1,1) onto x+y+z=1 is (1/3,1/3,1/3), distance 2/sqrt(3).
        assert!((m.distance - 2.0 / 3.0_f64.sqrt()).abs() < 1e-9);
        let m = hull_contains(pts, &[0.5, 0.5, 0.0], 1e-9).unwrap();
        assert_eq!(m.class, HullClass::Boundary);
    }

    #[test]
    fn margin_examples() {
        let f = flat(&[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]);
        let pts = Points::new(&f, 2);
        // Oracle: point-to-edge distances 1 (x = 0), 1 (y = 0), sqrt(2) (x + y = 4).
        let oracle = [1.0, 1.0, 2.0 / 2.0_f64.sqrt()]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!((interior_margin(pts, &[1.0, 1.0]).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(interior_margin(pts, &[4.0, 0.0]).unwrap(), 0.0);
        assert_eq!(interior_margin(pts, &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn margin_one_dimension() {
        let f = vec![0.0, 3.0, 1.0];
        assert_eq!(interior_margin(Points::new(&f, 1), &[1.0]).unwrap(), 1.0);
        assert_eq!(interior_margin(Points::new(&f, 1), &[-1.0]).unwrap(), 0.0);
    }

    #[test]
    fn margin_lower_bound_in_three_dimensions() {
        // Unit cube, centre: true margin 0.5, cross-polytope bound 0.5/sqrt(3).
        let mut f = Vec::new();
        for i in 0..8 {
            f.extend([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        let eta = interior_margin(Points::new(&f, 3), &[0.5, 0.5, 0.5]).unwrap();
        assert!(eta <= 0.5 + 1e-12);
        assert!((eta - 0.5 / 3.0_f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn barycentric_unique_1d() {
        let f = vec![0.0, 1.0];
        let c = barycentric_coords(Points::new(&f, 1), &[0.25], 1e-3).unwrap();
        assert!((c.tau[0] - 0.75).abs() < 1e-12 && (c.tau[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn barycentric_simplex_centroid_is_uniform() {
        let f = flat(&TRIANGLE);
        let c = barycentric_coords(Points::new(&f, 2), &[1.0 / 3.0, 1.0 / 3.0], 1e-3).unwrap();
        for t in &c.tau {
            assert!((t - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn barycentric_square_centre() {
        let f = flat(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let c = barycentric_coords(Points::new(&f, 2), &[0.5, 0.5], 1e-3).unwrap();
        // Exact solutions form the family (s, 1/2 - s, s, 1/2 - s); the one
        // closest to uniform is found by exhaustive search over s.
        let grid_best = (0..=100_000)
            .map(|k| 0.5 * k as f64 / 100_000.0)
            .min_by(|a, b| {
                let dev = |s: f64| 2.0 * ((s - 0.25).powi(2) + (0.25 - s).powi(2));
                dev(*a).total_cmp(&dev(*b))
            })
            .unwrap();
        assert!((grid_best - 0.25).abs() < 1e-12);
        for t in &c.tau {
            assert!((t - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn barycentric_outside_and_boundary_errors() {
        let f = flat(&TRIANGLE);
        let pts = Points::new(&f, 2);
        assert!(matches!(
            barycentric_coords(pts, &[1.0, 1.0], 1e-3),
            Err(GeometryError::OutsideHull { .. })
        ));
        assert!(matches!(
            barycentric_coords(pts, &[0.5, 0.5], 1e-3),
            Err(GeometryError::TooCloseToBoundary { .. })
        ));
    }
}
