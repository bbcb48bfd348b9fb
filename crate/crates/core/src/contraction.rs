//! Most contracted directions of 2x2 matrices and of derivative products along
//! orbits, and stable curves as integral curves of those direction fields.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::curves::SampledCurve;
use crate::error::{Error, Result};
use crate::map::{MapFamily, Mat2, Point};

pub type Vec2 = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionResult {
    /// Unit vector realizing `min ||M u||`.
    pub e: Vec2,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `M e`
    pub image_e: Vec2,
}

/// Relative gap below which the most contracted direction is undefined.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Fix the sign: nonnegative first component, ties broken by the second.
pub fn canonical_sign(v: Vec2) -> Vec2 {
    if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) {
        -v
    } else {
        v
    }
}

/// Singular values `(lambda_max, lambda_min)` of `m` given `|det m|`.
fn singular_values(m: &Mat2, det_abs: f64) -> (f64, f64) {
    let (a, c, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let s = a * a + b * b + c * c + d * d;
    // S^2 - 4 det^2 factored to avoid cancellation
    let p = (a - d) * (a - d) + (b + c) * (b + c);
    let q = (a + d) * (a + d) + (b - c) * (b - c);
    let disc = (p * q).sqrt();
    let lmax = (0.5 * (s + disc)).sqrt();
    let lmin = if lmax > 0.0 { det_abs / lmax } else { 0.0 };
    (lmax, lmin)
}

/// Most contracted direction when `|det m|` is known more accurately than the
/// entries can provide (long products).
pub fn most_contracted_with_det(m: &Mat2, det_abs: f64) -> Result<ContractionResult> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { index: 0 });
    }
    let (lmax, lmin) = singular_values(m, det_abs);
    if lmax == 0.0 || lmax - lmin < DEGENERACY_TOL * lmax {
        return Err(Error::DegenerateMatrix);
    }
    let (a, c, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let l2 = lmin * lmin;
    let cross = a * c + b * d;
    let v1 = Vec2::new(c * c + d * d - l2, -cross);
    let v2 = Vec2::new(-cross, a * a + b * b - l2);
    let v = if v1.norm_squared() >= v2.norm_squared() {
        v1
    } else {
        v2
    };
    let e = canonical_sign(v / v.norm());
    Ok(ContractionResult {
        e,
        lambda_min: lmin,
        lambda_max: lmax,
        image_e: m * e,
    })
}

pub fn most_contracted(m: &Mat2) -> Result<ContractionResult> {
    most_contracted_with_det(m, m.determinant().abs())
}

/// Accumulated derivative `DT^i(z0)` kept as `exp(log_scale) * matrix`.
#[derive(Clone, Debug)]
pub struct DerivativeProduct {
    pub matrix: Mat2,
    pub log_scale: f64,
    pub log_det: f64,
    pub steps: usize,
}

impl Default for DerivativeProduct {
    fn default() -> Self {
        DerivativeProduct {
            matrix: Mat2::identity(),
            log_scale: 0.0,
            log_det: 0.0,
            steps: 0,
        }
    }
}

impl DerivativeProduct {
    pub const RENORMALIZE_EVERY: usize = 16;

    pub fn push(&mut self, j: &Mat2) {
        self.matrix = j * self.matrix;
        self.log_det += j.determinant().abs().ln();
        self.steps += 1;
        if self.steps.is_multiple_of(Self::RENORMALIZE_EVERY) {
            self.renormalize();
        }
    }

    pub fn renormalize(&mut self) {
        let n = self.matrix.norm();
        if n > 0.0 && n.is_finite() {
            self.matrix /= n;
            self.log_scale += n.ln();
        }
    }

    /// `log ||DT^i||` (operator norm).
    pub fn log_norm(&self) -> f64 {
        let det_abs = (self.log_det - 2.0 * self.log_scale).exp();
        let (lmax, _) = singular_values(&self.matrix, det_abs);
        lmax.ln() + self.log_scale
    }

    /// Most contracted direction of the product. Singular values in the
    /// result are those of the normalized matrix; see [`Self::log_scale`].
    pub fn contraction(&self) -> Result<ContractionResult> {
        let det_abs = (self.log_det - 2.0 * self.log_scale).exp();
        most_contracted_with_det(&self.matrix, det_abs)
    }

    /// The full product (may overflow for long products).
    pub fn full(&self) -> Mat2 {
        self.matrix * self.log_scale.exp()
    }
}

/// `DT^n(z)`
pub fn derivative_product(m: &MapFamily, z: Point, n: usize) -> DerivativeProduct {
    let mut prod = DerivativeProduct::default();
    let mut p = z;
    for _ in 0..n {
        prod.push(&m.jacobian(p));
        p = m.eval(p);
    }
    prod
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitDirection {
    pub i: usize,
    pub point: Point,
    pub e: Vec2,
    pub log_lambda_min: f64,
    pub log_lambda_max: f64,
    /// `||DT^i||^{1/i}`
    pub growth: f64,
    /// `||e_i x e_{i-1}||`, absent for `i = 1`.
    pub defect: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitContraction {
    pub steps: Vec<OrbitDirection>,
    /// `min_i ||DT^i||^{1/i}`
    pub kappa: f64,
    pub kappa_floor: f64,
}

impl OrbitContraction {
    pub fn defects(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.defect).collect()
    }

    /// Smallest `r` with `d_i <= r^{i-1}` for every defect above `floor`.
    pub fn envelope_ratio(&self, floor: f64) -> f64 {
        self.steps
            .iter()
            .filter_map(|s| s.defect.map(|d| (s.i, d)))
            .filter(|&(_, d)| d > floor)
            .map(|(i, d)| d.powf(1.0 / (i as f64 - 1.0)))
            .fold(0.0, f64::max)
    }
}

fn cross(u: &Vec2, v: &Vec2) -> f64 {
    u.x * v.y - u.y * v.x
}

/// `e_i = e(DT^i(z0))` for `i = 1..n` with the growth test
/// `||DT^i|| >= kappa_floor^i`. `kappa_floor = None` uses `10 sqrt|b|`.
pub fn e_n_along_orbit(
    m: &MapFamily,
    z0: Point,
    n: usize,
    kappa_floor: Option<f64>,
) -> Result<OrbitContraction> {
    if n == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    let floor = kappa_floor.unwrap_or(10.0 * m.b().abs().sqrt());
    let mut prod = DerivativeProduct::default();
    let mut z = z0;
    let mut steps: Vec<OrbitDirection> = Vec::with_capacity(n);
    let mut kappa = f64::INFINITY;
    for i in 1..=n {
        prod.push(&m.jacobian(z));
        let log_norm = prod.log_norm();
        let growth = (log_norm / i as f64).exp();
        if !growth.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        if growth < floor || growth == 0.0 {
            return Err(Error::HyperbolicityLost {
                step: i,
                growth,
                floor,
            });
        }
        kappa = kappa.min(growth);
        let r = prod.contraction()?;
        let defect = steps.last().map(|prev| cross(&r.e, &prev.e).abs());
        steps.push(OrbitDirection {
            i,
            point: z0,
            e: r.e,
            log_lambda_min: r.lambda_min.ln() + prod.log_scale,
            log_lambda_max: r.lambda_max.ln() + prod.log_scale,
            growth,
            defect,
        });
        z = m.eval(z);
    }
    Ok(OrbitContraction {
        steps,
        kappa,
        kappa_floor: floor,
    })
}

/// The field `z -> e_order(z)` with its slope `q_order`.
#[derive(Clone, Copy, Debug)]
pub struct DirectionField<'a> {
    pub map: &'a MapFamily,
    pub order: usize,
    pub kappa_floor: f64,
}

impl<'a> DirectionField<'a> {
    pub fn new(map: &'a MapFamily, order: usize) -> Self {
        DirectionField {
            map,
            order,
            kappa_floor: 0.0,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.kappa_floor = floor;
        self
    }

    pub fn direction(&self, z: Point) -> Result<Vec2> {
        let prod = derivative_product(self.map, z, self.order);
        if self.kappa_floor > 0.0 {
            let growth = (prod.log_norm() / self.order as f64).exp();
            if growth < self.kappa_floor {
                return Err(Error::HyperbolicityLost {
                    step: self.order,
                    growth,
                    floor: self.kappa_floor,
                });
            }
        }
        Ok(prod.contraction()?.e)
    }

    pub fn slope(&self, z: Point) -> Result<f64> {
        let e = self.direction(z)?;
        Ok(e.y / e.x)
    }

    pub fn sample(&self, points: &[Point]) -> Vec<(Point, Result<Vec2>)> {
        points.iter().map(|&p| (p, self.direction(p))).collect()
    }
}

#[derive(Clone, Debug)]
pub struct StableCurve {
    pub curve: SampledCurve,
    /// Index of `z0` among the curve points.
    pub center: usize,
    /// `d(T^i z, T^i z0)` for `i = 0..=order` at each curve point.
    pub distances: Vec<Vec<f64>>,
    /// Set when integration stopped early because the field became undefined.
    pub truncated: bool,
}

/// Integral curve of `e_order` through `z0` by the midpoint rule, extended
/// in both directions up to arclength `max_len` or the edge of the working box.
/// `step = None` uses `min(1e-3, |b|)`.
pub fn stable_curve(
    m: &MapFamily,
    z0: Point,
    order: usize,
    max_len: f64,
    step: Option<f64>,
) -> Result<StableCurve> {
    let field = DirectionField::new(m, order).with_floor(10.0 * m.b().abs().sqrt());
    let e0 = field.direction(z0)?;
    let mut h = step.unwrap_or_else(|| 1e-3f64.min(m.b().abs()));
    if h <= 0.0 {
        h = 1e-3;
    }
    let region = m.trapping_box().rect;
    let mut truncated = false;
    let mut integrate = |sign: f64| -> Vec<Point> {
        let mut pts = Vec::new();
        let mut z = z0;
        let mut dir = e0 * sign;
        let mut len = 0.0;
        while len + 1e-15 < max_len {
            let hh = h.min(max_len - len);
            let mid = z + dir * (0.5 * hh);
            let em = match field.direction(mid) {
                Ok(e) => e,
                Err(_) => {
                    truncated = true;
                    break;
                }
            };
            let em = if em.dot(&dir) < 0.0 { -em } else { em };
            let next = z + em * hh;
            if !region.contains(&next) {
                break;
            }
            let en = match field.direction(next) {
                Ok(e) => e,
                Err(_) => {
                    truncated = true;
                    break;
                }
            };
            dir = if en.dot(&em) < 0.0 { -en } else { en };
            z = next;
            len += hh;
            pts.push(z);
        }
        pts
    };
    let fwd = integrate(1.0);
    let bwd = integrate(-1.0);
    let center = bwd.len();
    let mut points: Vec<Point> = bwd.into_iter().rev().collect();
    points.push(z0);
    points.extend(fwd);

    let orbit0 = crate::map::iterate_orbit(m, z0, order)?;
    let distances = points
        .iter()
        .map(|&p| {
            let mut q = p;
            let mut out = Vec::with_capacity(order + 1);
            for (i, zi) in orbit0.iter().enumerate() {
                if i > 0 {
                    q = m.eval(q);
                }
                out.push((q - zi).norm());
            }
            out
        })
        .collect();
    Ok(StableCurve {
        curve: SampledCurve::from_points(points, false, 0),
        center,
        distances,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn angle_scan(m: &Mat2, n: usize) -> f64 {
        // minimizer of ||M (cos t, sin t)|| over [0, pi), refined by golden section
        let f = |t: f64| (m * Vec2::new(t.cos(), t.sin())).norm_squared();
        let step = std::f64::consts::PI / n as f64;
        let (mut best_t, mut best) = (0.0, f64::INFINITY);
        for k in 0..n {
            let t = k as f64 * step;
            let v = f(t);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        let (mut lo, mut hi) = (best_t - step, best_t + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    fn angle_between_lines(u: &Vec2, v: &Vec2) -> f64 {
        let c = cross(u, v).abs() / (u.norm() * v.norm());
        c.min(1.0).asin()
    }

    #[test]
    fn diagonal_matrix() {
        let r = most_contracted(&Mat2::new(2.0, 0.0, 0.0, 0.05)).unwrap();
        assert_eq!(r.e, Vec2::new(0.0, 1.0));
        assert!((r.lambda_min - 0.05).abs() < 1e-15);
        assert!((r.lambda_max - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_is_degenerate() {
        assert_eq!(
            most_contracted(&Mat2::new(0.0, -1.0, 1.0, 0.0)),
            Err(Error::DegenerateMatrix)
        );
        assert_eq!(
            most_contracted(&Mat2::new(3.0, 0.0, 0.0, 3.0)),
            Err(Error::DegenerateMatrix)
        );
    }

    #[test]
    fn upper_triangular_against_angle_scan() {
        let m = Mat2::new(1.0, 1.0, 0.0, 0.1);
        let r = most_contracted(&m).unwrap();
        let t = angle_scan(&m, 1_000_000);
        let oracle = Vec2::new(t.cos(), t.sin());
        assert!(angle_between_lines(&r.e, &oracle) < 1e-6);
        assert!(((m * oracle).norm() - r.lambda_min).abs() < 1e-12);
    }

    #[test]
    fn image_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let m = Mat2::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let Ok(r) = most_contracted(&m) else { continue };
            let (a, c, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let det = m.determinant();
            let l2 = r.lambda_min * r.lambda_min;
            let closed = Vec2::new(-a * l2 + d * det, -b * l2 - c * det);
            // both are parallel to the same line; compare up to scale
            if closed.norm() > 1e-9 && r.image_e.norm() > 1e-9 {
                assert!(angle_between_lines(&closed, &r.image_e) < 1e-7);
            }
            assert!((r.image_e.norm() - r.lambda_min).abs() <= 1e-10 * r.lambda_max);
        }
    }

    #[test]
    fn kernel_direction_for_rank_one() {
        let m = Mat2::new(-4.0, 1.0, 0.0, 0.0);
        let r = most_contracted(&m).unwrap();
        assert_eq!(r.lambda_min, 0.0);
        assert!((m * r.e).norm() < 1e-15);
        let k = Vec2::new(1.0, 4.0).normalize();
        assert!((r.e - k).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn result_invariants(a in -5.0f64..5.0, b in -5.0f64..5.0,
                             c in -5.0f64..5.0, d in -5.0f64..5.0) {
            let m = Mat2::new(a, c, b, d);
            if let Ok(r) = most_contracted(&m) {
                prop_assert!((r.e.norm() - 1.0).abs() < 1e-12);
                prop_assert!(r.lambda_min <= r.lambda_max);
                prop_assert!((r.image_e.norm() - r.lambda_min).abs() <= 1e-10 * r.lambda_max);
                let det = m.determinant().abs();
                prop_assert!((r.lambda_min * r.lambda_max - det).abs()
                             <= 1e-10 * r.lambda_max * r.lambda_max);
                prop_assert!(r.e.x > 0.0 || (r.e.x == 0.0 && r.e.y >= 0.0));
            }
        }

        #[test]
        fn no_unit_vector_is_more_contracted(a in -5.0f64..5.0, b in -5.0f64..5.0,
                                             c in -5.0f64..5.0, d in -5.0f64..5.0,
                                             t in 0.0f64..6.3) {
            let m = Mat2::new(a, c, b, d);
            if let Ok(r) = most_contracted(&m) {
                let u = Vec2::new(t.cos(), t.sin());
                prop_assert!((m * u).norm() >= r.lambda_min - 1e-12 * r.lambda_max);
            }
        }
    }

    #[test]
    fn product_matches_direct_multiplication() {
        let m = MapFamily::henon(1.4, 0.3).unwrap();
        let z = Point::new(0.2, 0.05);
        let prod = derivative_product(&m, z, 40);
        let mut direct = Mat2::identity();
        let mut p = z;
        for _ in 0..40 {
            direct = m.jacobian(p) * direct;
            p = m.eval(p);
        }
        let rel = (prod.full() - direct).norm() / direct.norm();
        assert!(rel < 1e-10, "{rel}");
        assert!((prod.log_det - 40.0 * 0.3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn single_step_equals_one_matrix() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let z = Point::new(0.4, 1e-5);
        let oc = e_n_along_orbit(&m, z, 1, None).unwrap();
        let direct = most_contracted(&m.jacobian(z)).unwrap();
        assert_eq!(oc.steps.len(), 1);
        assert!((oc.steps[0].e - direct.e).norm() < 1e-14);
        assert!(oc.steps[0].defect.is_none());
    }

    #[test]
    fn b_zero_gives_constant_kernel_direction() {
        let m = MapFamily::henon(2.0, 0.0).unwrap();
        let z = Point::new(0.3, 0.0);
        let oc = e_n_along_orbit(&m, z, 8, None).unwrap();
        let kernel = canonical_sign(Vec2::new(1.0, 2.0 * 2.0 * 0.3).normalize());
        for s in &oc.steps {
            assert!((s.e - kernel).norm() < 1e-12);
            assert_eq!(s.log_lambda_min, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn hyperbolicity_floor_is_enforced() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let z = Point::new(0.4, 0.0);
        match e_n_along_orbit(&m, z, 5, Some(1e6)) {
            Err(Error::HyperbolicityLost { step: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    fn attractor_point(m: &MapFamily, n: usize) -> Point {
        let orbit = crate::map::iterate_orbit(m, Point::new(0.1, 0.0), n).unwrap();
        *orbit.last().unwrap()
    }

    #[test]
    fn defects_decay_geometrically() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let mut z = attractor_point(&m, 1000);
        while z.x.abs() < 0.3 {
            z = m.eval(z);
        }
        let oc = e_n_along_orbit(&m, z, 10, None).unwrap();
        let bound = 10.0 * m.b() / (oc.kappa * oc.kappa);
        let d = oc.defects();
        for w in d.windows(2) {
            if w[0] > 1e-14 && w[1] > 1e-14 {
                assert!(w[1] / w[0] <= bound, "{:?} bound {bound}", d);
            }
        }
    }

    #[test]
    fn e1_slope_near_two_a_x() {
        let a = 1.9;
        let m = MapFamily::henon(a, 1e-4).unwrap();
        let z = Point::new(0.5, 0.0);
        let sc = stable_curve(&m, z, 1, 0.01, None).unwrap();
        let c = &sc.curve;
        let t = c.tangents[sc.center];
        let slope = t.y / t.x;
        assert!((slope - 2.0 * a * 0.5).abs() < 0.1 * 2.0 * a * 0.5, "{slope}");
        // numerical minimizer of ||DT v||
        let j = m.jacobian(z);
        let th = angle_scan(&j, 100_000);
        assert!((th.tan() - slope).abs() < 1e-3);
    }

    #[test]
    fn zero_length_curve_is_a_point() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let sc = stable_curve(&m, Point::new(0.5, 0.0), 1, 0.0, None).unwrap();
        assert_eq!(sc.curve.points.len(), 1);
        assert_eq!(sc.center, 0);
    }

    #[test]
    fn stable_curve_points_contract() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let z0 = Point::new(0.5, 0.0);
        let order = 10;
        let sc = stable_curve(&m, z0, order, 1e-3, None).unwrap();
        let prod = derivative_product(&m, z0, order);
        let oc = e_n_along_orbit(&m, z0, order, None).unwrap();
        let r = 10.0 * m.b() / (oc.kappa * oc.kappa);
        // numerical floor: integration error amplified by ||DT^order||
        let floor = 1e-11 * prod.log_norm().exp();
        for (k, dist) in sc.distances.iter().enumerate() {
            let d0 = dist[0];
            let d = dist[order];
            assert!(d <= d0 * r.powi(order as i32) + floor, "node {k}: {d} vs {d0}");
        }
        assert!(!sc.truncated);
    }
}
