//! Critical regions, critical points on evolved boundary curves, the distance
//! `d_C` to the critical set, bound periods and the `I_{mu j}` partition.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::contraction::{derivative_product, DirectionField, Vec2};
use crate::curves::{
    boundary_evolution, cross, node_at, BoundaryOptions, RefineOptions, SampledCurve,
};
use crate::error::{Error, Result};
use crate::map::{MapFamily, Point, Rect, Topology};
use crate::splitting::{run_splitting, SplitConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Image of the top edge of the working box.
    Upper,
    /// Image of the bottom edge.
    Lower,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Point,
    pub order: usize,
    pub generation: usize,
    pub level: usize,
    pub side: Side,
    /// Source parameter on the host curve.
    pub s: f64,
    /// Unit tangent of the host curve.
    pub tangent: Vec2,
    /// `|q_m - slope(tau)|`
    pub residual: f64,
    /// `||DT^i|| >= 1` for every `i <= order`.
    pub expanding: bool,
}

/// Result of a root search on one crossing, before it is attached to a level.
#[derive(Clone, Debug)]
pub struct CurveCriticalPoint {
    pub s: f64,
    pub location: Point,
    pub tangent: Vec2,
    pub residual: f64,
    pub expanding: bool,
}

fn tangency(field: &DirectionField, p: Point, d1: Vec2) -> Result<f64> {
    let e = field.direction(p)?;
    Ok(cross(&e, &(d1 / d1.norm())))
}

fn expanding_to(m: &MapFamily, z: Point, order: usize) -> bool {
    let mut p = z;
    let mut prod = crate::contraction::DerivativeProduct::default();
    for _ in 0..order {
        prod.push(&m.jacobian(p));
        if prod.log_norm() < -1e-12 {
            return false;
        }
        p = m.eval(p);
    }
    true
}

/// Root of `g(s) = e_order(gamma(s)) x tau(s)` on a curve that crosses a
/// critical component. Exactly one sign change of `g` over the nodes is
/// required.
pub fn find_critical_point_on_curve(
    m: &MapFamily,
    c: &SampledCurve,
    order: usize,
) -> Result<CurveCriticalPoint> {
    if c.len() < 2 {
        return Err(Error::NoSignChange);
    }
    let field = DirectionField::new(m, order);
    let g: Vec<f64> = (0..c.len())
        .map(|i| tangency(&field, c.points[i], c.d1[i]))
        .collect::<Result<_>>()?;
    let zero_tol = 1e-15;
    let zeros: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() <= zero_tol).collect();
    if zeros.len() > 1 {
        return Err(Error::MultipleRoots {
            brackets: zeros.iter().map(|&i| (c.params[i], c.params[i])).collect(),
        });
    }
    let mut brackets = Vec::new();
    for i in 0..g.len() - 1 {
        if g[i].abs() <= zero_tol {
            continue;
        }
        let mut j = i + 1;
        if g[j].abs() <= zero_tol && j + 1 < g.len() {
            j += 1;
        }
        if g[i] * g[j] < 0.0 && (brackets.last().is_none_or(|&(a, _): &(f64, f64)| a != c.params[i])) {
            brackets.push((c.params[i], c.params[j]));
        }
    }
    brackets.dedup_by(|a, b| a.1 == b.1);
    if let Some(&z) = zeros.first() {
        if brackets.is_empty() {
            brackets.push((c.params[z], c.params[z]));
        }
    }
    match brackets.len() {
        0 => return Err(Error::NoSignChange),
        1 => {}
        _ => return Err(Error::MultipleRoots { brackets }),
    }
    let (mut lo, mut hi) = brackets[0];
    let eval = |s: f64| -> Result<(Point, Vec2, f64)> {
        let (p, d1) = match c.eval_param(m, s) {
            Some(n) => (n.p, n.d1),
            None => {
                // polyline without a base: linear interpolation
                let k = c.params.partition_point(|&q| q < s).clamp(1, c.len() - 1);
                let (s0, s1) = (c.params[k - 1], c.params[k]);
                let t = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
                let chord = c.points[k] - c.points[k - 1];
                (c.points[k - 1] + chord * t, chord)
            }
        };
        Ok((p, d1, tangency(&field, p, d1)?))
    };
    let (_, _, mut glo) = eval(lo)?;
    for _ in 0..200 {
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = eval(mid)?;
        if r.2 == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if glo * r.2 < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            glo = r.2;
        }
    }
    let s = 0.5 * (lo + hi);
    let (p, d1, _) = eval(s)?;
    let e = field.direction(p)?;
    let tau = d1 / d1.norm();
    let residual = (e.y / e.x - tau.y / tau.x).abs();
    Ok(CurveCriticalPoint {
        s,
        location: p,
        tangent: tau,
        residual,
        expanding: expanding_to(m, p, order),
    })
}

/// Maximal runs `a..=b` of node indices where node `a` lies on one side of
/// `[x_lo, x_hi]`, node `b` on the other and every node between lies inside.
pub fn crossing_runs(c: &SampledCurve, x_lo: f64, x_hi: f64) -> Vec<(usize, usize)> {
    let side = |x: f64| {
        if x <= x_lo {
            -1
        } else if x >= x_hi {
            1
        } else {
            0
        }
    };
    let mut out = Vec::new();
    let mut last_out: Option<(usize, i32)> = None;
    for i in 0..c.len() {
        let sd = side(c.points[i].x);
        if sd != 0 {
            if let Some((j, sj)) = last_out {
                if sj == -sd {
                    out.push((j, i));
                }
            }
            last_out = Some((i, sd));
        }
    }
    out
}

/// Critical points on every crossing of the `delta`-windows around the
/// critical abscissae.
pub fn critical_points_on_crossings(
    m: &MapFamily,
    c: &SampledCurve,
    cfg: &SystemConfig,
    order: usize,
) -> Vec<Result<CurveCriticalPoint>> {
    let mut out = Vec::new();
    for &xc in m.critical_xs() {
        for (a, b) in crossing_runs(c, xc - cfg.delta, xc + cfg.delta) {
            out.push(find_critical_point_on_curve(m, &c.slice(a, b), order));
        }
    }
    out
}

/// Height of a crossing curve at abscissa `x`, evaluated on the exact image
/// curve (Newton in the source parameter from a linear guess).
pub fn edge_y_at(m: &MapFamily, edge: &SampledCurve, x: f64) -> Option<f64> {
    let n = edge.len();
    if n < 2 {
        return None;
    }
    let increasing = edge.points[n - 1].x > edge.points[0].x;
    let key = |i: usize| {
        if increasing {
            edge.points[i].x
        } else {
            -edge.points[i].x
        }
    };
    let xk = if increasing { x } else { -x };
    if xk < key(0) || xk > key(n - 1) {
        return None;
    }
    let k = (1..n).find(|&i| key(i) >= xk)?;
    let (i0, i1) = (k - 1, k);
    let (x0, x1) = (edge.points[i0].x, edge.points[i1].x);
    let (s0, s1) = (edge.params[i0], edge.params[i1]);
    let t = if x1 != x0 { (x - x0) / (x1 - x0) } else { 0.5 };
    let Some(base) = edge.base.as_ref() else {
        return Some(edge.points[i0].y + t * (edge.points[i1].y - edge.points[i0].y));
    };
    let mut s = s0 + t * (s1 - s0);
    let (slo, shi) = (s0.min(s1), s0.max(s1));
    let mut y = f64::NAN;
    for _ in 0..8 {
        let node = node_at(m, base, s, edge.generation, None)?;
        y = node.p.y;
        let err = node.p.x - x;
        if err == 0.0 || node.d1.x == 0.0 {
            break;
        }
        let next = (s - err / node.d1.x).clamp(slo, shi);
        if next == s {
            break;
        }
        s = next;
        // correct y to first order in the remaining x error
    }
    let node = node_at(m, base, s, edge.generation, None)?;
    let dy = if node.d1.x != 0.0 {
        (x - node.p.x) * node.d1.y / node.d1.x
    } else {
        0.0
    };
    if y.is_nan() {
        return None;
    }
    Some(node.p.y + dy)
}

#[derive(Clone, Debug)]
pub struct StripEdge {
    pub side: Side,
    pub curve: SampledCurve,
}

#[derive(Clone, Debug)]
pub struct Component {
    pub level: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub midline_x: f64,
    /// `None` at level 0, where the box edges bound the component.
    pub top: Option<StripEdge>,
    pub bottom: Option<StripEdge>,
    pub parent: Option<usize>,
    /// Indices into `gamma`.
    pub critical_top: Option<usize>,
    pub critical_bottom: Option<usize>,
    /// Vertical distance between the boundary curves at the midline.
    pub gap: f64,
    /// Critical abscissa of the base map this component descends from.
    pub root_x: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HierarchyOptions {
    pub order: usize,
    pub boundary: BoundaryOptions,
    /// Levels stop once the vertical gap falls below this many ulps of `|y|`.
    pub gap_ulps: f64,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions {
            order: 4,
            boundary: BoundaryOptions {
                refine: RefineOptions::default(),
                critical_order: 4,
                markers: false,
            },
            gap_ulps: 100.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalHierarchy {
    pub map: MapFamily,
    pub levels: Vec<Vec<Component>>,
    pub gamma: Vec<CriticalPoint>,
    pub delta: f64,
    pub rho: f64,
    pub degenerate: bool,
    pub requested_depth: usize,
    pub log: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingInfo {
    pub phi: Option<Point>,
    /// Index into `gamma` of the binding point.
    pub phi_index: Option<usize>,
    pub d_c: f64,
    /// Deepest level containing the point (`None` outside `C^(0)`).
    pub level: Option<usize>,
    pub component: Option<usize>,
    pub h_related: bool,
    /// `L_Q` of the deepest containing component.
    pub midline_x: Option<f64>,
    /// Critical abscissa of the base map the component descends from.
    pub root_x: Option<f64>,
}

impl BindingInfo {
    pub fn in_c0(&self) -> bool {
        self.level.is_some()
    }
}

fn window_contains(c: &Component, x: f64) -> bool {
    x > c.x_lo && x < c.x_hi
}

impl CriticalHierarchy {
    pub fn achieved_depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    fn strip_contains(&self, c: &Component, z: &Point) -> bool {
        if !window_contains(c, z.x) {
            return false;
        }
        match (&c.top, &c.bottom) {
            (Some(t), Some(b)) => {
                let yt = edge_y_at(&self.map, &t.curve, z.x);
                let yb = edge_y_at(&self.map, &b.curve, z.x);
                match (yt, yb) {
                    (Some(yt), Some(yb)) => z.y <= yt.max(yb) && z.y >= yt.min(yb),
                    _ => false,
                }
            }
            _ => self.map.trapping_box().rect.contains(z),
        }
    }

    /// Level-0 component containing `z`, if any.
    pub fn in_c0(&self, z: &Point) -> Option<usize> {
        self.levels
            .first()?
            .iter()
            .position(|c| self.strip_contains(c, z))
    }

    /// `d_C`, binding point and h-relatedness of `z`.
    pub fn distance_to_critical(&self, z: &Point) -> BindingInfo {
        let b = self.map.b().abs();
        if self.degenerate {
            let d = self.map.distance_to_critical_set(z.x);
            let inside = d < self.delta;
            let xc = self
                .map
                .critical_xs()
                .iter()
                .copied()
                .min_by(|p, q| {
                    self.map
                        .base_distance(z.x, *p)
                        .total_cmp(&self.map.base_distance(z.x, *q))
                });
            return BindingInfo {
                phi: xc.map(|x| Point::new(x, 0.0)),
                phi_index: None,
                d_c: d,
                level: inside.then_some(0),
                component: None,
                h_related: inside && d >= b.powf(0.0) && d > 0.0,
                midline_x: if inside { xc } else { None },
                root_x: if inside { xc } else { None },
            };
        }
        let Some(mut idx) = self.in_c0(z) else {
            return BindingInfo {
                phi: None,
                phi_index: None,
                d_c: self.delta,
                level: None,
                component: None,
                h_related: false,
                midline_x: None,
                root_x: None,
            };
        };
        let mut level = 0;
        'descend: for k in 1..self.levels.len() {
            for (j, c) in self.levels[k].iter().enumerate() {
                if c.parent == Some(idx) && self.strip_contains(c, z) {
                    idx = j;
                    level = k;
                    continue 'descend;
                }
            }
            break;
        }
        let comp = &self.levels[level][idx];
        let d_c = (z.x - comp.midline_x).abs().min(self.delta);
        let pick = match (comp.critical_top, comp.critical_bottom) {
            (Some(t), Some(bt)) => {
                let dt = (self.gamma[t].location.x - z.x).abs();
                let db = (self.gamma[bt].location.x - z.x).abs();
                Some(if dt <= db { t } else { bt })
            }
            (Some(t), None) => Some(t),
            (None, Some(bt)) => Some(bt),
            (None, None) => None,
        };
        BindingInfo {
            phi: pick.map(|i| self.gamma[i].location),
            phi_index: pick,
            d_c,
            level: Some(level),
            component: Some(idx),
            h_related: d_c >= b.powf(level as f64 / 20.0),
            midline_x: Some(comp.midline_x),
            root_x: Some(comp.root_x),
        }
    }
}

/// Free function form of [`CriticalHierarchy::distance_to_critical`].
pub fn distance_to_critical(z: &Point, h: &CriticalHierarchy) -> BindingInfo {
    h.distance_to_critical(z)
}

fn attach_critical(
    m: &MapFamily,
    edge: &StripEdge,
    order: usize,
    level: usize,
    gamma: &mut Vec<CriticalPoint>,
) -> Result<usize> {
    let cp = find_critical_point_on_curve(m, &edge.curve, order)?;
    gamma.push(CriticalPoint {
        location: cp.location,
        order,
        generation: edge.curve.generation,
        level,
        side: edge.side,
        s: cp.s,
        tangent: cp.tangent,
        residual: cp.residual,
        expanding: cp.expanding,
    });
    Ok(gamma.len() - 1)
}

/// Nested critical regions up to depth `kmax` with default options.
pub fn build_hierarchy(m: &MapFamily, cfg: &SystemConfig, kmax: usize) -> Result<CriticalHierarchy> {
    build_hierarchy_with(m, cfg, kmax, &HierarchyOptions::default())
}

pub fn build_hierarchy_with(
    m: &MapFamily,
    cfg: &SystemConfig,
    kmax: usize,
    opts: &HierarchyOptions,
) -> Result<CriticalHierarchy> {
    cfg.validate()?;
    if m.topology() == Topology::Circle {
        return Err(Error::Unsupported(
            "critical hierarchy is implemented for interval families".into(),
        ));
    }
    let degenerate = m.b() == 0.0;
    let depth = if degenerate { 0 } else { kmax };
    let ev = boundary_evolution(m, depth, cfg, &opts.boundary)?;
    let mut log = ev.log.clone();
    if degenerate {
        log.push("b = 0: degenerate mode, d_C is the one-dimensional distance".into());
    }
    let rect: Rect = m.trapping_box().rect;
    let mut gamma = Vec::new();
    let mut levels: Vec<Vec<Component>> = Vec::new();

    // level 0
    let g0 = &ev.generations[0];
    let mut level0 = Vec::new();
    for &xc in m.critical_xs() {
        let (x_lo, x_hi) = (xc - cfg.delta, xc + cfg.delta);
        let slice_of = |pieces: &[SampledCurve], side: Side| -> Option<StripEdge> {
            pieces.iter().find_map(|c| {
                crossing_runs(c, x_lo, x_hi).first().map(|&(a, b)| StripEdge {
                    side,
                    curve: c.slice(a, b),
                })
            })
        };
        let top = slice_of(&g0.upper, Side::Upper);
        let bottom = slice_of(&g0.lower, Side::Lower);
        let mut ct = None;
        let mut cb = None;
        if let Some(t) = &top {
            match attach_critical(m, t, opts.order, 0, &mut gamma) {
                Ok(i) => ct = Some(i),
                Err(e) => log.push(format!("level 0 top at x = {xc}: {e}")),
            }
        }
        if let Some(bt) = &bottom {
            match attach_critical(m, bt, opts.order, 0, &mut gamma) {
                Ok(i) => cb = Some(i),
                Err(e) => log.push(format!("level 0 bottom at x = {xc}: {e}")),
            }
        }
        let mid = match (ct, cb) {
            (Some(t), Some(bt)) => 0.5 * (gamma[t].location.x + gamma[bt].location.x),
            _ => xc,
        };
        level0.push(Component {
            level: 0,
            x_lo,
            x_hi,
            midline_x: mid,
            top: None,
            bottom: None,
            parent: None,
            critical_top: ct,
            critical_bottom: cb,
            gap: rect.height(),
            root_x: xc,
        });
    }
    levels.push(level0);

    for k in 1..=depth {
        let gen = &ev.generations[k];
        let width = (2.0 * cfg.delta).min(cfg.rho.powi(k as i32));
        let mut next: Vec<Component> = Vec::new();
        let mut floor_hit = false;
        for (pi, parent) in levels[k - 1].iter().enumerate() {
            let mut edges: Vec<(f64, StripEdge)> = Vec::new();
            for (pieces, side) in [(&gen.upper, Side::Upper), (&gen.lower, Side::Lower)] {
                for c in pieces.iter() {
                    for (a, b) in crossing_runs(c, parent.x_lo, parent.x_hi) {
                        let edge = StripEdge {
                            side,
                            curve: c.slice(a, b),
                        };
                        let Some(y) = edge_y_at(m, &edge.curve, parent.midline_x) else {
                            continue;
                        };
                        let inside = match (&parent.top, &parent.bottom) {
                            (Some(t), Some(bt)) => {
                                let yt = edge_y_at(m, &t.curve, parent.midline_x);
                                let yb = edge_y_at(m, &bt.curve, parent.midline_x);
                                match (yt, yb) {
                                    (Some(yt), Some(yb)) => {
                                        y <= yt.max(yb) && y >= yt.min(yb)
                                    }
                                    _ => false,
                                }
                            }
                            _ => y >= rect.y_lo && y <= rect.y_hi,
                        };
                        if inside {
                            edges.push((y, edge));
                        }
                    }
                }
            }
            edges.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut i = 0;
            let mut made = 0;
            while i + 1 < edges.len() {
                if edges[i].1.side == edges[i + 1].1.side {
                    log.push(format!(
                        "level {k}, parent {pi}: unpaired {:?} edge at y = {:.6e}",
                        edges[i].1.side, edges[i].0
                    ));
                    i += 1;
                    continue;
                }
                if made >= cfg.component_cap {
                    log.push(format!("level {k}, parent {pi}: component cap reached"));
                    break;
                }
                let (yt, top) = edges[i].clone();
                let (yb, bottom) = edges[i + 1].clone();
                i += 2;
                let gap = yt - yb;
                if gap < opts.gap_ulps * f64::EPSILON * yt.abs().max(yb.abs()) {
                    floor_hit = true;
                    continue;
                }
                let ct = attach_critical(m, &top, opts.order, k, &mut gamma);
                let cb = attach_critical(m, &bottom, opts.order, k, &mut gamma);
                let (ct, cb) = match (ct, cb) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => {
                        log.push(format!("level {k}, parent {pi}: pruned ({e})"));
                        continue;
                    }
                };
                let mid = 0.5 * (gamma[ct].location.x + gamma[cb].location.x);
                next.push(Component {
                    level: k,
                    x_lo: mid - 0.5 * width,
                    x_hi: mid + 0.5 * width,
                    midline_x: mid,
                    top: Some(top),
                    bottom: Some(bottom),
                    parent: Some(pi),
                    critical_top: Some(ct),
                    critical_bottom: Some(cb),
                    gap,
                    root_x: parent.root_x,
                });
                made += 1;
            }
        }
        if floor_hit {
            log.push(format!(
                "level {k}: vertical gaps below floating-point resolution, stopping"
            ));
        }
        if next.is_empty() {
            log.push(format!("level {k} is empty; achieved depth {}", k - 1));
            break;
        }
        levels.push(next);
        if floor_hit {
            break;
        }
    }

    Ok(CriticalHierarchy {
        map: m.clone(),
        levels,
        gamma,
        delta: cfg.delta,
        rho: cfg.rho,
        degenerate,
        requested_depth: kmax,
        log,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub level: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub midline_x: f64,
    pub gap: f64,
    pub parent: Option<usize>,
    pub critical_top: Option<usize>,
    pub critical_bottom: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HierarchySummary {
    pub a: f64,
    pub b: f64,
    pub degenerate: bool,
    pub requested_depth: usize,
    pub achieved_depth: usize,
    pub levels: Vec<Vec<ComponentSummary>>,
    pub critical_points: Vec<CriticalPoint>,
    pub log: Vec<String>,
}

impl CriticalHierarchy {
    pub fn summary(&self) -> HierarchySummary {
        HierarchySummary {
            a: self.map.a(),
            b: self.map.b(),
            degenerate: self.degenerate,
            requested_depth: self.requested_depth,
            achieved_depth: self.achieved_depth(),
            levels: self
                .levels
                .iter()
                .map(|lv| {
                    lv.iter()
                        .map(|c| ComponentSummary {
                            level: c.level,
                            x_lo: c.x_lo,
                            x_hi: c.x_hi,
                            midline_x: c.midline_x,
                            gap: c.gap,
                            parent: c.parent,
                            critical_top: c.critical_top,
                            critical_bottom: c.critical_bottom,
                        })
                        .collect()
                })
                .collect(),
            critical_points: self.gamma.clone(),
            log: self.log.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundPeriod {
    pub p: usize,
    pub saturated: bool,
}

/// Largest `p <= horizon` with `|xi_j - z_j| <= exp(-beta j)` for all `1 <= j <= p`.
pub fn bound_period(
    m: &MapFamily,
    xi0: Point,
    z0: Point,
    cfg: &SystemConfig,
    horizon: usize,
) -> BoundPeriod {
    let mut xi = xi0;
    let mut z = z0;
    for j in 1..=horizon {
        xi = m.eval(xi);
        z = m.eval(z);
        let d = (xi - z).norm();
        if !(d <= (-cfg.beta * j as f64).exp()) {
            return BoundPeriod {
                p: j - 1,
                saturated: false,
            };
        }
    }
    BoundPeriod {
        p: horizon,
        saturated: true,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionInterval {
    pub mu: i32,
    pub j: usize,
    pub lo: f64,
    pub hi: f64,
}

/// `I_{mu j}` for `mu_star <= |mu| <= mu_max`: `I_mu = (e^{-(mu+1)}, e^{-mu})`
/// cut into `mu^2` equal pieces, mirrored for negative `mu`.
pub fn partition_imuj(cfg: &SystemConfig, mu_max: u32) -> Vec<PartitionInterval> {
    let mut out = Vec::new();
    for mu in cfg.mu_star..=mu_max {
        let lo = (-(mu as f64 + 1.0)).exp();
        let hi = (-(mu as f64)).exp();
        let n = (mu * mu) as usize;
        let w = (hi - lo) / n as f64;
        for j in 1..=n {
            let a = lo + (j - 1) as f64 * w;
            let b = if j == n { hi } else { lo + j as f64 * w };
            out.push(PartitionInterval {
                mu: mu as i32,
                j,
                lo: a,
                hi: b,
            });
            out.push(PartitionInterval {
                mu: -(mu as i32),
                j,
                lo: -b,
                hi: -a,
            });
        }
    }
    out.sort_by(|p, q| p.lo.total_cmp(&q.lo));
    out
}

/// `(mu, j)` with `x` in `I_{mu j}`, or `None` when `|x| >= delta` or `x = 0`.
pub fn locate_imuj(x: f64, cfg: &SystemConfig) -> Option<(i32, usize)> {
    let ax = x.abs();
    if ax == 0.0 || ax >= cfg.delta || !ax.is_finite() {
        return None;
    }
    let mu = (-ax.ln()).floor() as i64;
    if mu < cfg.mu_star as i64 {
        return None;
    }
    let lo = (-(mu as f64 + 1.0)).exp();
    let hi = (-(mu as f64)).exp();
    let n = (mu * mu) as usize;
    let w = (hi - lo) / n as f64;
    let j = (((ax - lo) / w).floor() as usize + 1).clamp(1, n);
    let mu = if x < 0.0 { -(mu as i32) } else { mu as i32 };
    Some((mu, j))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IaReport {
    pub n: usize,
    pub d_c: Vec<f64>,
    pub ia2_threshold: Vec<f64>,
    pub ia2_pass: bool,
    pub ia2_first_fail: Option<usize>,
    /// `min_i (d_C(z_i) - min(delta, e^{-alpha i}))` over `1 <= i <= n`.
    pub ia2_margin: f64,
    /// `log ||w*_{i+1}|| - log ||w*_1||` for `i = 0..=n`.
    pub log_growth: Vec<f64>,
    pub ia4_pass: bool,
    pub ia4_first_fail: Option<usize>,
    /// `min_i (log growth_i - log c0 - c i)` over `1 <= i <= n`.
    pub ia4_margin: f64,
    /// Orbit index where the orbit left the working box, if it did.
    pub escaped_at: Option<usize>,
    pub h_related_flags: Vec<bool>,
}

/// Slow-recurrence and derivative-growth checks along the orbit of `z0`.
/// Growth is measured from the first image, `||w*_{i+1}|| / ||w*_1|| > c0 e^{ci}`.
pub fn ia_checks(
    m: &MapFamily,
    z0: Point,
    cfg: &SystemConfig,
    n: usize,
    h: &CriticalHierarchy,
) -> Result<IaReport> {
    let split_cfg = SplitConfig::from_system(cfg, m.b());
    let trace = run_splitting(m, z0, Vec2::new(0.0, 1.0), n + 1, h, &split_cfg)?;
    let rect = m.trapping_box().rect;
    let mut d_c = Vec::with_capacity(n + 1);
    let mut thr = Vec::with_capacity(n + 1);
    let mut h_rel = Vec::with_capacity(n + 1);
    let mut ia2_first_fail = None;
    let mut ia2_margin = f64::INFINITY;
    let mut escaped_at = None;
    for i in 0..=n {
        let Some(step) = trace.steps.get(i) else {
            escaped_at.get_or_insert(i);
            d_c.push(f64::NAN);
            thr.push(cfg.delta.min((-cfg.alpha * i as f64).exp()));
            h_rel.push(false);
            if i >= 1 && ia2_first_fail.is_none() {
                ia2_first_fail = Some(i);
            }
            continue;
        };
        let z = step.z;
        if escaped_at.is_none() && !rect.contains(&z) {
            escaped_at = Some(i);
        }
        let info = h.distance_to_critical(&z);
        let t = cfg.delta.min((-cfg.alpha * i as f64).exp());
        d_c.push(info.d_c);
        thr.push(t);
        h_rel.push(info.h_related);
        if i >= 1 {
            let margin = info.d_c - t;
            ia2_margin = ia2_margin.min(margin);
            if ia2_first_fail.is_none() && (margin < 0.0 || escaped_at.is_some()) {
                ia2_first_fail = Some(i);
            }
        }
    }
    let base = trace.log_norm_ws(1);
    let log_growth: Vec<f64> = (0..=n).map(|i| trace.log_norm_ws(i + 1) - base).collect();
    let mut ia4_first_fail = None;
    let mut ia4_margin = f64::INFINITY;
    for i in 1..=n {
        let margin = log_growth[i] - cfg.c0.ln() - cfg.c * i as f64;
        ia4_margin = ia4_margin.min(margin);
        let escaped = escaped_at.is_some_and(|e| e <= i + 1);
        if ia4_first_fail.is_none() && (!(margin > 0.0) || escaped) {
            ia4_first_fail = Some(i);
        }
    }
    Ok(IaReport {
        n,
        d_c,
        ia2_threshold: thr,
        ia2_pass: ia2_first_fail.is_none(),
        ia2_first_fail,
        ia2_margin,
        log_growth,
        ia4_pass: ia4_first_fail.is_none(),
        ia4_first_fail,
        ia4_margin,
        escaped_at,
        h_related_flags: h_rel,
    })
}

/// Orbit-wise growth check used by tests: `||DT^i(z)|| >= 1` for `i <= order`.
pub fn expansion_profile(m: &MapFamily, z: Point, order: usize) -> Vec<f64> {
    (1..=order)
        .map(|i| derivative_product(m, z, i).log_norm())
        .collect()
}
