//! Map families, orbits and admissibility checks on the one-dimensional base map.
//!
//! A family is a planar map `T(x, y) = (F(x, y, a) + b u, b v)` whose `b = 0`
//! restriction to the line `y = 0` is the base map `f_a`. Every family carries
//! its Jacobian, the partial derivatives of the Jacobian entries (needed by the
//! curvature push-forward), the critical points of `f_a` and a working box.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Rect {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Self {
        Rect {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_lo && p.x <= self.x_hi && p.y >= self.y_lo && p.y <= self.y_hi
    }

    /// Corners in counter-clockwise order starting at the lower-left one.
    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x_lo, self.y_lo),
            Point::new(self.x_hi, self.y_lo),
            Point::new(self.x_hi, self.y_hi),
            Point::new(self.x_lo, self.y_hi),
        ]
    }
}

/// Working region `R_0`. `strict` is set only when the map sends the sampled
/// boundary strictly inside the rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrappingBox {
    pub rect: Rect,
    pub strict: bool,
    /// Smallest normalized distance of a boundary image to the box exterior.
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Interval,
    Circle,
}

type EvalFn = dyn Fn(&MapParams, Point) -> Point + Send + Sync;
type JacFn = dyn Fn(&MapParams, Point) -> Mat2 + Send + Sync;

/// A user-supplied family given by closures. Jacobian partials and base-map
/// derivatives are taken by central differences.
pub struct CustomFamily {
    pub name: String,
    pub eval: Box<EvalFn>,
    pub jacobian: Box<JacFn>,
    pub critical_xs: Vec<f64>,
}

#[derive(Clone)]
pub enum FamilyKind {
    /// `(1 - a x^2 + y, b x)`
    Henon,
    /// `(1 - a x^2 + y + b k x y, b (x + k y))`
    Perturbed { kappa: f64 },
    /// Degree-one circle map `x + a + L sin(2 pi x)` with a dissipative extension
    /// `(f_a(x) + y mod 1, b (y/2 + sin(2 pi x)/(2 pi)))`.
    Circle { amplitude: f64 },
    Custom(Arc<CustomFamily>),
}

impl fmt::Debug for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::Henon => write!(f, "Henon"),
            FamilyKind::Perturbed { kappa } => write!(f, "Perturbed {{ kappa: {kappa} }}"),
            FamilyKind::Circle { amplitude } => write!(f, "Circle {{ amplitude: {amplitude} }}"),
            FamilyKind::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MapFamily {
    pub params: MapParams,
    pub kind: FamilyKind,
    critical_xs: Vec<f64>,
    trapping: TrappingBox,
}

const FD_STEP: f64 = 1e-5;

impl MapFamily {
    fn build(kind: FamilyKind, params: MapParams) -> Result<Self> {
        if !params.a.is_finite() || !params.b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameters must be finite (a = {}, b = {})",
                params.a, params.b
            )));
        }
        let critical_xs = match &kind {
            FamilyKind::Henon | FamilyKind::Perturbed { .. } => vec![0.0],
            FamilyKind::Circle { amplitude } => {
                let l = *amplitude;
                if 2.0 * PI * l <= 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "circle amplitude {l} gives a diffeomorphism (needs 2 pi L > 1)"
                    )));
                }
                let t = (-1.0 / (2.0 * PI * l)).acos() / (2.0 * PI);
                let mut xs = vec![t, 1.0 - t];
                xs.sort_by(|p, q| p.total_cmp(q));
                xs
            }
            FamilyKind::Custom(c) => {
                let mut xs = c.critical_xs.clone();
                xs.sort_by(|p, q| p.total_cmp(q));
                xs
            }
        };
        let placeholder = TrappingBox {
            rect: Rect::new(-1.0, 1.0, -1.0, 1.0),
            strict: false,
            margin: f64::NEG_INFINITY,
        };
        let mut fam = MapFamily {
            params,
            kind,
            critical_xs,
            trapping: placeholder,
        };
        fam.trapping = find_trapping_box(&fam);
        Ok(fam)
    }

    pub fn henon(a: f64, b: f64) -> Result<Self> {
        Self::build(FamilyKind::Henon, MapParams { a, b })
    }

    pub fn perturbed(a: f64, b: f64, kappa: f64) -> Result<Self> {
        Self::build(FamilyKind::Perturbed { kappa }, MapParams { a, b })
    }

    pub fn circle(a: f64, b: f64, amplitude: f64) -> Result<Self> {
        Self::build(FamilyKind::Circle { amplitude }, MapParams { a, b })
    }

    pub fn custom(family: CustomFamily, a: f64, b: f64) -> Result<Self> {
        Self::build(FamilyKind::Custom(Arc::new(family)), MapParams { a, b })
    }

    /// Same family at other parameters.
    pub fn with_params(&self, a: f64, b: f64) -> Result<Self> {
        Self::build(self.kind.clone(), MapParams { a, b })
    }

    /// Replace the working box. Strictness is re-evaluated.
    pub fn with_box(mut self, rect: Rect) -> Self {
        let margin = box_margin(&self, &rect);
        self.trapping = TrappingBox {
            rect,
            strict: margin > 0.0,
            margin,
        };
        self
    }

    pub fn name(&self) -> String {
        match &self.kind {
            FamilyKind::Henon => "henon".into(),
            FamilyKind::Perturbed { .. } => "perturbed".into(),
            FamilyKind::Circle { .. } => "circle".into(),
            FamilyKind::Custom(c) => c.name.clone(),
        }
    }

    pub fn a(&self) -> f64 {
        self.params.a
    }

    pub fn b(&self) -> f64 {
        self.params.b
    }

    pub fn topology(&self) -> Topology {
        match self.kind {
            FamilyKind::Circle { .. } => Topology::Circle,
            _ => Topology::Interval,
        }
    }

    pub fn critical_xs(&self) -> &[f64] {
        &self.critical_xs
    }

    pub fn trapping_box(&self) -> &TrappingBox {
        &self.trapping
    }

    pub fn eval(&self, p: Point) -> Point {
        let MapParams { a, b } = self.params;
        let (x, y) = (p.x, p.y);
        match &self.kind {
            FamilyKind::Henon => Point::new(1.0 - a * x * x + y, b * x),
            FamilyKind::Perturbed { kappa } => {
                Point::new(1.0 - a * x * x + y + b * kappa * x * y, b * (x + kappa * y))
            }
            FamilyKind::Circle { amplitude } => {
                let s = (2.0 * PI * x).sin();
                let nx = x + a + amplitude * s + y;
                Point::new(nx.rem_euclid(1.0), b * (0.5 * y + s / (2.0 * PI)))
            }
            FamilyKind::Custom(c) => (c.eval)(&self.params, p),
        }
    }

    pub fn jacobian(&self, p: Point) -> Mat2 {
        let MapParams { a, b } = self.params;
        let (x, y) = (p.x, p.y);
        match &self.kind {
            FamilyKind::Henon => Mat2::new(-2.0 * a * x, 1.0, b, 0.0),
            FamilyKind::Perturbed { kappa } => Mat2::new(
                -2.0 * a * x + b * kappa * y,
                1.0 + b * kappa * x,
                b,
                b * kappa,
            ),
            FamilyKind::Circle { amplitude } => {
                let c = (2.0 * PI * x).cos();
                Mat2::new(1.0 + 2.0 * PI * amplitude * c, 1.0, b * c, 0.5 * b)
            }
            FamilyKind::Custom(c) => (c.jacobian)(&self.params, p),
        }
    }

    /// Partial derivatives of the Jacobian entries, `(d/dx DT, d/dy DT)`.
    pub fn jacobian_partials(&self, p: Point) -> (Mat2, Mat2) {
        let MapParams { a, b } = self.params;
        match &self.kind {
            FamilyKind::Henon => (Mat2::new(-2.0 * a, 0.0, 0.0, 0.0), Mat2::zeros()),
            FamilyKind::Perturbed { kappa } => (
                Mat2::new(-2.0 * a, b * kappa, 0.0, 0.0),
                Mat2::new(b * kappa, 0.0, 0.0, 0.0),
            ),
            FamilyKind::Circle { amplitude } => {
                let s = (2.0 * PI * p.x).sin();
                (
                    Mat2::new(
                        -4.0 * PI * PI * amplitude * s,
                        0.0,
                        -2.0 * PI * b * s,
                        0.0,
                    ),
                    Mat2::zeros(),
                )
            }
            FamilyKind::Custom(_) => {
                let h = FD_STEP;
                let dx = (self.jacobian(p + Point::new(h, 0.0))
                    - self.jacobian(p - Point::new(h, 0.0)))
                    / (2.0 * h);
                let dy = (self.jacobian(p + Point::new(0.0, h))
                    - self.jacobian(p - Point::new(0.0, h)))
                    / (2.0 * h);
                (dx, dy)
            }
        }
    }

    /// The one-dimensional map `f_a(x) = F(x, 0, a)`. Circle maps are returned
    /// as a lift (no reduction mod 1).
    pub fn base_map(&self, x: f64) -> f64 {
        let a = self.params.a;
        match &self.kind {
            FamilyKind::Henon | FamilyKind::Perturbed { .. } => 1.0 - a * x * x,
            FamilyKind::Circle { amplitude } => x + a + amplitude * (2.0 * PI * x).sin(),
            FamilyKind::Custom(c) => {
                let p0 = MapParams { a, b: 0.0 };
                (c.eval)(&p0, Point::new(x, 0.0)).x
            }
        }
    }

    pub fn base_deriv(&self, x: f64) -> f64 {
        let a = self.params.a;
        match &self.kind {
            FamilyKind::Henon | FamilyKind::Perturbed { .. } => -2.0 * a * x,
            FamilyKind::Circle { amplitude } => 1.0 + 2.0 * PI * amplitude * (2.0 * PI * x).cos(),
            FamilyKind::Custom(_) => {
                let h = FD_STEP;
                (self.base_map(x + h) - self.base_map(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn base_deriv2(&self, x: f64) -> f64 {
        let a = self.params.a;
        match &self.kind {
            FamilyKind::Henon | FamilyKind::Perturbed { .. } => -2.0 * a,
            FamilyKind::Circle { amplitude } => {
                -4.0 * PI * PI * amplitude * (2.0 * PI * x).sin()
            }
            FamilyKind::Custom(_) => {
                let h = 1e-4;
                (self.base_map(x + h) - 2.0 * self.base_map(x) + self.base_map(x - h)) / (h * h)
            }
        }
    }

    pub fn base_deriv3(&self, x: f64) -> f64 {
        match &self.kind {
            FamilyKind::Henon | FamilyKind::Perturbed { .. } => 0.0,
            FamilyKind::Circle { amplitude } => {
                -8.0 * PI * PI * PI * amplitude * (2.0 * PI * x).cos()
            }
            FamilyKind::Custom(_) => {
                let h = 1e-3;
                (self.base_map(x + 2.0 * h) - 2.0 * self.base_map(x + h)
                    + 2.0 * self.base_map(x - h)
                    - self.base_map(x - 2.0 * h))
                    / (2.0 * h * h * h)
            }
        }
    }

    /// Base map reduced to the circle when the family is a circle family.
    pub fn base_map_reduced(&self, x: f64) -> f64 {
        match self.topology() {
            Topology::Interval => self.base_map(x),
            Topology::Circle => self.base_map(x).rem_euclid(1.0),
        }
    }

    /// Distance between two base-space coordinates (circle-aware).
    pub fn base_distance(&self, x0: f64, x1: f64) -> f64 {
        match self.topology() {
            Topology::Interval => (x0 - x1).abs(),
            Topology::Circle => {
                let d = (x0 - x1).rem_euclid(1.0);
                d.min(1.0 - d)
            }
        }
    }

    /// Distance from `x` to the nearest critical point of the base map.
    pub fn distance_to_critical_set(&self, x: f64) -> f64 {
        self.critical_xs
            .iter()
            .map(|&c| self.base_distance(x, c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Core interval of the base dynamics: hull of the first two images of the
    /// critical points (for circle maps the whole circle).
    pub fn base_core_interval(&self) -> (f64, f64) {
        if self.topology() == Topology::Circle {
            return (0.0, 1.0);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &c in &self.critical_xs {
            let v1 = self.base_map(c);
            let v2 = self.base_map(v1);
            for v in [v1, v2] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !(lo.is_finite() && hi.is_finite()) || hi - lo < 1e-9 {
            let c = self.critical_xs.first().copied().unwrap_or(0.0);
            return (c - 1.0, c + 1.0);
        }
        (lo, hi)
    }
}

/// Central finite-difference Jacobian of `eval`.
pub fn jacobian_fd(m: &MapFamily, p: Point, h: f64) -> Mat2 {
    let ex = Point::new(h, 0.0);
    let ey = Point::new(0.0, h);
    let cx = (m.eval(p + ex) - m.eval(p - ex)) / (2.0 * h);
    let cy = (m.eval(p + ey) - m.eval(p - ey)) / (2.0 * h);
    Mat2::new(cx.x, cy.x, cx.y, cy.y)
}

pub fn henon_family(a: f64, b: f64) -> Result<MapFamily> {
    MapFamily::henon(a, b)
}

/// `[z0, T z0, ..., T^n z0]`. Non-finite coordinates abort with their index.
pub fn iterate_orbit(m: &MapFamily, z0: Point, n: usize) -> Result<Vec<Point>> {
    if !(z0.x.is_finite() && z0.y.is_finite()) {
        return Err(Error::NonFinite { index: 0 });
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(z0);
    let mut z = z0;
    for i in 1..=n {
        z = m.eval(z);
        if !(z.x.is_finite() && z.y.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        out.push(z);
    }
    Ok(out)
}

/// Like [`iterate_orbit`] but aborts as soon as the orbit leaves `region`.
pub fn iterate_orbit_in(m: &MapFamily, z0: Point, n: usize, region: &Rect) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut z = z0;
    for i in 0..=n {
        if i > 0 {
            z = m.eval(z);
        }
        if !(z.x.is_finite() && z.y.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if !region.contains(&z) {
            return Err(Error::Escape {
                index: i,
                x: z.x,
                y: z.y,
            });
        }
        out.push(z);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// working box

fn boundary_samples(rect: &Rect, per_edge: usize, extra_xs: &[f64]) -> Vec<Point> {
    let mut pts = Vec::with_capacity(4 * per_edge + 2 * extra_xs.len());
    for k in 0..=per_edge {
        let t = k as f64 / per_edge as f64;
        let x = rect.x_lo + t * rect.width();
        let y = rect.y_lo + t * rect.height();
        pts.push(Point::new(x, rect.y_lo));
        pts.push(Point::new(x, rect.y_hi));
        pts.push(Point::new(rect.x_lo, y));
        pts.push(Point::new(rect.x_hi, y));
    }
    for &x in extra_xs {
        if x > rect.x_lo && x < rect.x_hi {
            pts.push(Point::new(x, rect.y_lo));
            pts.push(Point::new(x, rect.y_hi));
        }
    }
    pts
}

/// Normalized margin: positive iff every sampled boundary image lies strictly
/// inside the rectangle.
fn box_margin(m: &MapFamily, rect: &Rect) -> f64 {
    if rect.width() <= 0.0 || rect.height() <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let circle = m.topology() == Topology::Circle;
    let mut worst = f64::INFINITY;
    for p in boundary_samples(rect, 256, m.critical_xs()) {
        let q = m.eval(p);
        if !(q.x.is_finite() && q.y.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let dy = (q.y - rect.y_lo).min(rect.y_hi - q.y) / rect.height();
        let d = if circle {
            dy
        } else {
            let dx = (q.x - rect.x_lo).min(rect.x_hi - q.x) / rect.width();
            dx.min(dy)
        };
        worst = worst.min(d);
    }
    worst
}

/// Coordinate search for a rectangle mapped strictly into itself. When none is
/// found the initial guess is returned flagged as non-strict.
pub fn find_trapping_box(m: &MapFamily) -> TrappingBox {
    let b = m.b().abs();
    if m.topology() == Topology::Circle {
        let eta = 2.0 * b / (2.0 * PI * (1.0 - 0.5 * b).max(1e-3)) + 1e-9;
        let rect = Rect::new(0.0, 1.0, -eta, eta);
        let margin = box_margin(m, &rect);
        return TrappingBox {
            rect,
            strict: margin > 0.0,
            margin,
        };
    }
    let (lo, hi) = m.base_core_interval();
    let span = hi - lo;
    let xmax = lo.abs().max(hi.abs()).max(1.0);
    let eta = 1.5 * b * xmax + 1e-9 * span;
    let pad = 4.0 * eta + 1e-6 * span;
    let initial = Rect::new(lo - pad, hi + pad, -eta, eta);
    let init_margin = box_margin(m, &initial);
    if init_margin > 0.0 {
        return TrappingBox {
            rect: initial,
            strict: true,
            margin: init_margin,
        };
    }

    // Parameters: left pad, right pad, top, bottom (all positive offsets).
    let mut params = [pad, pad, eta, eta];
    let to_rect = |q: &[f64; 4]| Rect::new(lo - q[0], hi + q[1], -q[3], q[2]);
    let mut best = box_margin(m, &to_rect(&params));
    let mut steps = [0.05 * span, 0.05 * span, eta, eta];
    for _ in 0..400 {
        let mut improved = false;
        for k in 0..4 {
            for dir in [1.0, -1.0] {
                let mut trial = params;
                trial[k] += dir * steps[k];
                if trial[k] <= 0.0 {
                    continue;
                }
                let score = box_margin(m, &to_rect(&trial));
                if score > best {
                    best = score;
                    params = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in steps.iter_mut() {
                *s *= 0.5;
            }
            if steps[0] < 1e-9 * span && steps[2] < 1e-6 * eta {
                break;
            }
        }
    }
    if best > 0.0 {
        TrappingBox {
            rect: to_rect(&params),
            strict: true,
            margin: best,
        }
    } else {
        TrappingBox {
            rect: initial,
            strict: false,
            margin: init_margin,
        }
    }
}

// ---------------------------------------------------------------------------
// admissibility of the base map

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MisiurewiczOptions {
    pub n_horizon: usize,
    pub tol: f64,
    pub p_max: usize,
    pub schwarzian_grid: usize,
    /// Half-width of the neighborhoods of critical points excluded from the
    /// Schwarzian sample (`delta / 10` by default).
    pub exclusion: f64,
}

impl Default for MisiurewiczOptions {
    fn default() -> Self {
        MisiurewiczOptions {
            n_horizon: 100,
            tol: 1e-3,
            p_max: 8,
            schwarzian_grid: 10_000,
            exclusion: (-2.0f64).exp() / 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicExpansion {
    pub period: usize,
    pub orbits_found: usize,
    pub min_multiplier: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MisiurewiczReport {
    /// `(critical x, f''(x))` by finite differences.
    pub second_derivatives: Vec<(f64, f64)>,
    pub nonflat: bool,
    /// Largest sampled Schwarzian derivative away from the critical set.
    pub schwarzian_max: f64,
    pub negative_schwarzian: bool,
    pub periodic: Vec<PeriodicExpansion>,
    pub repelling: bool,
    /// `min_{1 <= n <= horizon} d(f^n c, C)` per critical point.
    pub critical_orbit_margins: Vec<f64>,
    pub non_recurrent: bool,
    pub passes: bool,
}

fn schwarzian(m: &MapFamily, x: f64) -> f64 {
    let d1 = m.base_deriv(x);
    let d2 = m.base_deriv2(x);
    let d3 = m.base_deriv3(x);
    d3 / d1 - 1.5 * (d2 / d1).powi(2)
}

fn iterate_base(m: &MapFamily, x: f64, n: usize) -> f64 {
    (0..n).fold(x, |acc, _| m.base_map(acc))
}

fn base_multiplier(m: &MapFamily, x: f64, n: usize) -> f64 {
    let mut acc = 1.0;
    let mut xi = x;
    for _ in 0..n {
        acc *= m.base_deriv(xi);
        xi = m.base_map(xi);
    }
    acc
}

/// Roots of `f^p(x) - x` in `[lo, hi]` (circle maps: lifts reduced by integers).
fn periodic_points(m: &MapFamily, p: usize, lo: f64, hi: f64) -> Vec<f64> {
    let circle = m.topology() == Topology::Circle;
    let g = |x: f64| {
        let v = iterate_base(m, x, p) - x;
        if circle {
            // distance to the nearest integer, signed
            v - v.round()
        } else {
            v
        }
    };
    let samples = (64usize << p.min(12)).max(2000);
    let mut roots = Vec::new();
    let mut x_prev = lo;
    let mut g_prev = g(lo);
    for k in 1..=samples {
        let x = lo + (hi - lo) * k as f64 / samples as f64;
        let gx = g(x);
        let jump = circle && (gx - g_prev).abs() > 0.5;
        if !jump && g_prev * gx <= 0.0 && g_prev.is_finite() && gx.is_finite() {
            let (mut a, mut b) = (x_prev, x);
            let mut ga = g_prev;
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                let gm = g(mid);
                if ga * gm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    ga = gm;
                }
            }
            let r = 0.5 * (a + b);
            if roots
                .last()
                .is_none_or(|&q: &f64| (r - q).abs() > 1e-9 * (hi - lo))
            {
                roots.push(r);
            }
        }
        x_prev = x;
        g_prev = gx;
    }
    roots
}

/// Sampled check of the four conditions on the base map: non-flat critical
/// points, negative Schwarzian, repelling periodic orbits up to `p_max`, and
/// critical orbits staying away from the critical set.
pub fn misiurewicz_check(m: &MapFamily, opts: &MisiurewiczOptions) -> MisiurewiczReport {
    let h = 1e-4;
    let second_derivatives: Vec<(f64, f64)> = m
        .critical_xs()
        .iter()
        .map(|&c| {
            let d2 = (m.base_map(c + h) - 2.0 * m.base_map(c) + m.base_map(c - h)) / (h * h);
            (c, d2)
        })
        .collect();
    let nonflat = second_derivatives.iter().all(|&(_, d)| d.abs() > opts.tol);

    let (lo, hi) = m.base_core_interval();
    let mut schwarzian_max = f64::NEG_INFINITY;
    let n = opts.schwarzian_grid.max(2);
    for k in 0..n {
        let x = lo + (hi - lo) * (k as f64 + 0.5) / n as f64;
        if m.distance_to_critical_set(x) < opts.exclusion {
            continue;
        }
        let s = schwarzian(m, x);
        if s.is_finite() {
            schwarzian_max = schwarzian_max.max(s);
        }
    }
    let negative_schwarzian = schwarzian_max < 0.0;

    let pad = 1e-6 * (hi - lo);
    let (plo, phi) = if m.topology() == Topology::Circle {
        (0.0, 1.0)
    } else {
        (lo - pad, hi + pad)
    };
    let mut periodic = Vec::new();
    for p in 1..=opts.p_max {
        let roots = periodic_points(m, p, plo, phi);
        let min_multiplier = roots
            .iter()
            .map(|&r| base_multiplier(m, r, p).abs())
            .fold(f64::INFINITY, f64::min);
        periodic.push(PeriodicExpansion {
            period: p,
            orbits_found: roots.len(),
            min_multiplier,
        });
    }
    let repelling = periodic
        .iter()
        .all(|e| e.orbits_found == 0 || e.min_multiplier > 1.0 + opts.tol);

    let critical_orbit_margins: Vec<f64> = m
        .critical_xs()
        .iter()
        .map(|&c| {
            let mut x = c;
            let mut margin = f64::INFINITY;
            for _ in 0..opts.n_horizon {
                x = m.base_map_reduced(x);
                margin = margin.min(m.distance_to_critical_set(x));
            }
            margin
        })
        .collect();
    let non_recurrent = critical_orbit_margins.iter().all(|&d| d > opts.tol);

    MisiurewiczReport {
        passes: nonflat && negative_schwarzian && repelling && non_recurrent,
        second_derivatives,
        nonflat,
        schwarzian_max,
        negative_schwarzian,
        periodic,
        repelling,
        critical_orbit_margins,
        non_recurrent,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    /// `(critical x, d/dy T^1_{a,0}(x, 0))`
    pub values: Vec<(f64, f64)>,
    pub passes: bool,
}

/// `d/dy` of the first component of `T_{a,0}` at each `(x_c, 0)`.
pub fn nondegeneracy_check(m: &MapFamily) -> NondegeneracyReport {
    let m0 = MapFamily {
        params: MapParams {
            a: m.params.a,
            b: 0.0,
        },
        ..m.clone()
    };
    let values: Vec<(f64, f64)> = m
        .critical_xs()
        .iter()
        .map(|&c| (c, m0.jacobian(Point::new(c, 0.0))[(0, 1)]))
        .collect();
    let passes = values.iter().all(|&(_, v)| v != 0.0);
    NondegeneracyReport { values, passes }
}

/// Finite-difference estimate of `d/da f_a(x(a)) - d/da p(a)` at `b = 0` for the
/// first critical point, where `p` is the critical value. Requires the critical
/// orbit to land on a periodic orbit within `search` iterates; `p(a)` is then
/// continued by Newton's method along the preimage chain.
pub fn transversality_estimate(m: &MapFamily, search: usize) -> Result<f64> {
    if m.topology() != Topology::Interval {
        return Err(Error::Unsupported(
            "transversality estimate is implemented for interval families".into(),
        ));
    }
    let c = *m
        .critical_xs()
        .first()
        .ok_or_else(|| Error::Unsupported("no critical point".into()))?;
    let orbit: Vec<f64> = (0..=search + 1)
        .scan(c, |x, k| {
            let v = *x;
            if k > 0 {
                *x = m.base_map(*x);
            }
            Some(if k == 0 { v } else { *x })
        })
        .collect();
    // find j >= 1, period q with f^j(c) periodic
    let mut landing = None;
    'outer: for j in 1..=search {
        for q in 1..=8 {
            let xj = orbit[j];
            if (iterate_base(m, xj, q) - xj).abs() < 1e-10 {
                landing = Some((j, q));
                break 'outer;
            }
        }
    }
    let (j, q) = landing.ok_or_else(|| {
        Error::Unsupported("critical orbit does not land on a periodic orbit".into())
    })?;
    let newton = |fam: &MapFamily, target: &dyn Fn(f64) -> f64, x0: f64| -> f64 {
        let mut x = x0;
        for _ in 0..60 {
            let h = 1e-7;
            let g = target(x);
            let dg = (target(x + h) - target(x - h)) / (2.0 * h);
            if dg == 0.0 {
                break;
            }
            let step = g / dg;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let _ = fam;
        x
    };
    let continued_p = |a: f64| -> Result<f64> {
        let fam = m.with_params(a, 0.0)?;
        let per0 = orbit[j];
        let periodic = newton(&fam, &|x| iterate_base(&fam, x, q) - x, per0);
        let chain = j - 1;
        let p0 = orbit[1];
        Ok(newton(
            &fam,
            &|x| iterate_base(&fam, x, chain) - periodic,
            p0,
        ))
    };
    let critical_value = |a: f64| -> Result<f64> {
        let fam = m.with_params(a, 0.0)?;
        // critical point continuation: root of f_a'
        let mut x = c;
        for _ in 0..50 {
            let d2 = fam.base_deriv2(x);
            if d2 == 0.0 {
                break;
            }
            x -= fam.base_deriv(x) / d2;
        }
        Ok(fam.base_map(x))
    };
    let h = 1e-6;
    let a = m.a();
    let dv = (critical_value(a + h)? - critical_value(a - h)?) / (2.0 * h);
    let dp = (continued_p(a + h)? - continued_p(a - h)?) / (2.0 * h);
    Ok(dv - dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn henon_eval_matches_formula() {
        let m = MapFamily::henon(2.0, 0.0).unwrap();
        assert_eq!(m.eval(Point::new(0.0, 0.0)), Point::new(1.0, 0.0));
        assert_eq!(m.eval(Point::new(1.0, 0.0)), Point::new(-1.0, 0.0));
        assert_eq!(m.eval(Point::new(-1.0, 0.0)), Point::new(-1.0, 0.0));
        assert_eq!(m.base_deriv(-1.0), 4.0);
    }

    #[test]
    fn henon_jacobian_at_origin() {
        let m = MapFamily::henon(1.4, 0.3).unwrap();
        let j = m.jacobian(Point::new(0.0, 0.0));
        assert_eq!(j, Mat2::new(0.0, 1.0, 0.3, 0.0));
        assert!((j.determinant() + 0.3).abs() < 1e-15);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fams = [
            MapFamily::henon(1.4, 0.3).unwrap(),
            MapFamily::perturbed(1.8, 0.05, 0.7).unwrap(),
            MapFamily::circle(0.3, 0.02, 0.3).unwrap(),
        ];
        for m in &fams {
            for _ in 0..100 {
                let p = Point::new(rng.gen_range(0.05..0.95), rng.gen_range(-0.01..0.01));
                let exact = m.jacobian(p);
                let fd = jacobian_fd(m, p, 1e-6);
                let scale = exact.norm().max(1.0);
                assert!(
                    (exact - fd).norm() / scale < 1e-6,
                    "{} at {p:?}: {exact} vs {fd}",
                    m.name()
                );
            }
        }
    }

    #[test]
    fn jacobian_partials_match_finite_differences() {
        let m = MapFamily::perturbed(1.7, 0.1, 0.5).unwrap();
        let p = Point::new(0.3, 0.02);
        let (dx, dy) = m.jacobian_partials(p);
        let h = 1e-6;
        let fdx = (m.jacobian(p + Point::new(h, 0.0)) - m.jacobian(p - Point::new(h, 0.0))) / (2.0 * h);
        let fdy = (m.jacobian(p + Point::new(0.0, h)) - m.jacobian(p - Point::new(0.0, h))) / (2.0 * h);
        assert!((dx - fdx).norm() < 1e-6);
        assert!((dy - fdy).norm() < 1e-6);
    }

    #[test]
    fn henon_determinant_is_minus_b_everywhere() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        for k in 0..50 {
            let p = Point::new(-1.0 + 0.04 * k as f64, 1e-4 * (k as f64 - 25.0));
            assert_eq!(m.jacobian(p).determinant(), -1e-4);
        }
    }

    #[test]
    fn orbit_of_chebyshev_critical_point() {
        let m = MapFamily::henon(2.0, 0.0).unwrap();
        let orbit = iterate_orbit(&m, Point::new(0.0, 0.0), 3).unwrap();
        let expected = [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (-1.0, 0.0)];
        for (z, (x, y)) in orbit.iter().zip(expected) {
            assert_eq!((z.x, z.y), (x, y));
        }
        let single = iterate_orbit(&m, Point::new(0.3, 0.0), 0).unwrap();
        assert_eq!(single, vec![Point::new(0.3, 0.0)]);
    }

    #[test]
    fn fixed_point_orbit_is_constant() {
        let (a, b) = (1.4, 0.3);
        let m = MapFamily::henon(a, b).unwrap();
        let x = (b - 1.0 + ((1.0 - b) * (1.0 - b) + 4.0 * a).sqrt()) / (2.0 * a);
        assert!((x - 0.6314).abs() < 1e-4);
        let orbit = iterate_orbit(&m, Point::new(x, b * x), 2).unwrap();
        for z in &orbit {
            assert!((z - orbit[0]).norm() < 1e-9);
        }
    }

    #[test]
    fn orbit_overflow_reports_index() {
        let m = MapFamily::henon(2.0, 0.3).unwrap();
        match iterate_orbit(&m, Point::new(50.0, 0.0), 40) {
            Err(Error::NonFinite { index }) => assert!(index > 1 && index <= 40),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn trapping_box_for_henon_below_crisis() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let tb = m.trapping_box();
        assert!(tb.strict, "{tb:?}");
        // image of the boundary polyline lies strictly inside
        let r = tb.rect;
        for p in boundary_samples(&r, 2000, m.critical_xs()) {
            let q = m.eval(p);
            assert!(q.x > r.x_lo && q.x < r.x_hi && q.y > r.y_lo && q.y < r.y_hi);
        }
    }

    #[test]
    fn trapping_box_absent_beyond_crisis_is_flagged() {
        let m = MapFamily::henon(2.2, 0.0).unwrap();
        assert!(!m.trapping_box().strict);
        let m = MapFamily::henon(2.0, 1e-6).unwrap();
        let tb = m.trapping_box();
        assert!(!tb.strict);
        // the flagged box still contains the left fixed point
        let b = 1e-6;
        let xl = (b - 1.0 - ((1.0 - b) * (1.0 - b) + 8.0f64).sqrt()) / 4.0;
        assert!(tb.rect.contains(&Point::new(xl, b * xl)));
    }

    #[test]
    fn misiurewicz_at_chebyshev_parameter() {
        let m = MapFamily::henon(2.0, 0.0).unwrap();
        let r = misiurewicz_check(&m, &MisiurewiczOptions::default());
        assert!((r.second_derivatives[0].1 + 4.0).abs() < 1e-6);
        assert!((r.critical_orbit_margins[0] - 1.0).abs() < 1e-12);
        assert!(r.negative_schwarzian);
        assert!(r.repelling, "{:?}", r.periodic);
        assert!(r.passes);
        // f^p has 2^p fixed points, all with multiplier of modulus >= 2
        assert_eq!(r.periodic[2].orbits_found, 8);
    }

    #[test]
    fn misiurewicz_fails_with_attracting_fixed_point() {
        let m = MapFamily::henon(0.5, 0.0).unwrap();
        let r = misiurewicz_check(&m, &MisiurewiczOptions::default());
        assert!(!r.repelling);
        let fp = r.periodic[0].min_multiplier;
        assert!((fp - 0.7320508).abs() < 1e-5, "{fp}");
        assert!(!r.passes);
    }

    #[test]
    fn nondegeneracy() {
        let m = MapFamily::henon(2.0, 0.0).unwrap();
        let r = nondegeneracy_check(&m);
        assert!(r.passes);
        assert_eq!(r.values[0].1, 1.0);

        let bad = CustomFamily {
            name: "square-y".into(),
            eval: Box::new(|p: &MapParams, z: Point| {
                Point::new(1.0 - p.a * z.x * z.x + z.y * z.y, p.b * z.x)
            }),
            jacobian: Box::new(|p: &MapParams, z: Point| {
                Mat2::new(-2.0 * p.a * z.x, 2.0 * z.y, p.b, 0.0)
            }),
            critical_xs: vec![0.0],
        };
        let m = MapFamily::custom(bad, 2.0, 0.1).unwrap();
        let r = nondegeneracy_check(&m);
        assert!(!r.passes);
        assert_eq!(r.values[0].1, 0.0);
    }

    #[test]
    fn circle_family_critical_points() {
        let m = MapFamily::circle(0.2, 0.0, 0.3).unwrap();
        assert_eq!(m.critical_xs().len(), 2);
        for &c in m.critical_xs() {
            assert!(m.base_deriv(c).abs() < 1e-12);
        }
        assert!(MapFamily::circle(0.2, 0.0, 0.1).is_err());
    }

    #[test]
    fn transversality_at_chebyshev() {
        // p(a) = sqrt((1 - x_L(a)) / a) with x_L the left fixed point; the
        // critical value is identically 1.
        let m = MapFamily::henon(2.0, 0.0).unwrap();
        let t = transversality_estimate(&m, 10).unwrap();
        let p = |a: f64| {
            let xl = (-1.0 - (1.0 + 4.0 * a).sqrt()) / (2.0 * a);
            ((1.0 - xl) / a).sqrt()
        };
        let h = 1e-5;
        let dp = (p(2.0 + h) - p(2.0 - h)) / (2.0 * h);
        assert!((t + dp).abs() < 1e-4, "{t} vs {}", -dp);
        assert!(t.abs() > 0.1);
    }
}
