//! Adaptive polylines for images `T^n(gamma_0)` of a base curve.
//!
//! Every node remembers its source parameter `s` on the base curve together
//! with the exact first and second derivatives `gamma_n'(s)`, `gamma_n''(s)`
//! propagated through `DT` and the partials of `DT`. Refinement inserts
//! points by pushing parameter midpoints forward from the base curve, so every
//! node lies on the true image curve.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::contraction::Vec2;
use crate::error::{Error, Result};
use crate::map::{MapFamily, Point, Rect};

type BaseFn = dyn Fn(f64) -> (Point, Vec2, Vec2) + Send + Sync;

/// Source curve `gamma_0(s)`, `s` in `[0, 1]`.
#[derive(Clone)]
pub enum BaseCurve {
    Segment { p0: Point, p1: Point },
    Polyline { points: Vec<Point> },
    /// Returns `(gamma(s), gamma'(s), gamma''(s))`.
    Parametric(Arc<BaseFn>),
}

impl std::fmt::Debug for BaseCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseCurve::Segment { p0, p1 } => write!(f, "Segment({p0:?} -> {p1:?})"),
            BaseCurve::Polyline { points } => write!(f, "Polyline({} points)", points.len()),
            BaseCurve::Parametric(_) => write!(f, "Parametric"),
        }
    }
}

impl BaseCurve {
    pub fn eval(&self, s: f64) -> (Point, Vec2, Vec2) {
        match self {
            BaseCurve::Segment { p0, p1 } => (p0 + (p1 - p0) * s, p1 - p0, Vec2::zeros()),
            BaseCurve::Polyline { points } => {
                let n = points.len();
                if n == 1 {
                    return (points[0], Vec2::zeros(), Vec2::zeros());
                }
                let t = s.clamp(0.0, 1.0) * (n - 1) as f64;
                let k = (t.floor() as usize).min(n - 2);
                let u = t - k as f64;
                let d = points[k + 1] - points[k];
                (points[k] + d * u, d * (n - 1) as f64, Vec2::zeros())
            }
            BaseCurve::Parametric(f) => f(s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub s: f64,
    pub p: Point,
    pub d1: Vec2,
    pub d2: Vec2,
}

/// One application of `T` to a node, carrying the exact derivatives.
pub fn push_node(m: &MapFamily, n: &Node) -> Node {
    let j = m.jacobian(n.p);
    let (jx, jy) = m.jacobian_partials(n.p);
    let x = jx * n.d1.x + jy * n.d1.y;
    Node {
        s: n.s,
        p: m.eval(n.p),
        d1: j * n.d1,
        d2: j * n.d2 + x * n.d1,
    }
}

fn node_ok(n: &Node, clip: Option<&Rect>) -> bool {
    let finite = n.p.x.is_finite()
        && n.p.y.is_finite()
        && n.d1.iter().all(|v| v.is_finite())
        && n.d2.iter().all(|v| v.is_finite());
    finite && clip.is_none_or(|r| r.contains(&n.p))
}

/// `T^gen(gamma_0(s))` with derivatives, or `None` when the orbit becomes
/// non-finite or leaves `clip` at some generation.
pub fn node_at(
    m: &MapFamily,
    base: &BaseCurve,
    s: f64,
    gen: usize,
    clip: Option<&Rect>,
) -> Option<Node> {
    let (p, d1, d2) = base.eval(s);
    let mut n = Node { s, p, d1, d2 };
    if !node_ok(&n, clip) {
        return None;
    }
    for _ in 0..gen {
        n = push_node(m, &n);
        if !node_ok(&n, clip) {
            return None;
        }
    }
    Some(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub index: usize,
    pub s: f64,
    pub label: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefineOptions {
    pub h_max: f64,
    /// Radians.
    pub theta_max: f64,
    /// Smallest parameter gap that may still be split.
    pub s_min: f64,
    pub cap: usize,
    pub initial_samples: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            h_max: 1e-3,
            theta_max: 5f64.to_radians(),
            s_min: 1e-15,
            cap: 10_000_000,
            initial_samples: 65,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampledCurve {
    pub points: Vec<Point>,
    pub tangents: Vec<Vec2>,
    pub curvatures: Vec<f64>,
    /// Source parameters (arclength-like index for curves without a base).
    pub params: Vec<f64>,
    pub d1: Vec<Vec2>,
    pub d2: Vec<Vec2>,
    pub markers: Vec<Marker>,
    pub closed: bool,
    pub generation: usize,
    pub base: Option<Arc<BaseCurve>>,
}

fn unit(v: Vec2) -> Vec2 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec2::zeros()
    }
}

pub fn cross(u: &Vec2, v: &Vec2) -> f64 {
    u.x * v.y - u.y * v.x
}

/// Angle in `[0, pi]` between two vectors.
pub fn turn_angle(u: &Vec2, v: &Vec2) -> f64 {
    cross(u, v).abs().atan2(u.dot(v))
}

/// Curvature of the circle through three points.
pub fn circumcircle_curvature(p0: &Point, p1: &Point, p2: &Point) -> f64 {
    let a = p0 - p1;
    let b = p2 - p1;
    let c = p2 - p0;
    let denom = a.norm() * b.norm() * c.norm();
    if denom == 0.0 {
        return f64::NAN;
    }
    2.0 * cross(&a, &b).abs() / denom
}

impl SampledCurve {
    fn from_nodes(nodes: &[Node], generation: usize, base: Option<Arc<BaseCurve>>) -> Self {
        let mut c = SampledCurve {
            points: Vec::with_capacity(nodes.len()),
            tangents: Vec::with_capacity(nodes.len()),
            curvatures: Vec::with_capacity(nodes.len()),
            params: Vec::with_capacity(nodes.len()),
            d1: Vec::with_capacity(nodes.len()),
            d2: Vec::with_capacity(nodes.len()),
            markers: Vec::new(),
            closed: false,
            generation,
            base,
        };
        for n in nodes {
            c.points.push(n.p);
            c.tangents.push(unit(n.d1));
            let nd = n.d1.norm();
            c.curvatures.push(cross(&n.d1, &n.d2).abs() / (nd * nd * nd));
            c.params.push(n.s);
            c.d1.push(n.d1);
            c.d2.push(n.d2);
        }
        c
    }

    /// Sample a base curve and refine it.
    pub fn from_base(base: BaseCurve, opts: &RefineOptions) -> Result<Self> {
        let base = Arc::new(base);
        let k = opts.initial_samples.max(2);
        let nodes: Vec<Node> = (0..k)
            .map(|i| {
                let s = i as f64 / (k - 1) as f64;
                let (p, d1, d2) = base.eval(s);
                Node { s, p, d1, d2 }
            })
            .collect();
        let mut total = 0;
        let pieces = refine_nodes(None, &base, 0, nodes, opts, None, &mut total)?;
        let nodes = pieces.into_iter().next().unwrap_or_default();
        Ok(Self::from_nodes(&nodes, 0, Some(base)))
    }

    pub fn segment(p0: Point, p1: Point, opts: &RefineOptions) -> Result<Self> {
        Self::from_base(BaseCurve::Segment { p0, p1 }, opts)
    }

    /// A polyline without a base: tangents from finite differences and
    /// curvature from circumscribed circles.
    pub fn from_points(points: Vec<Point>, closed: bool, generation: usize) -> Self {
        let n = points.len();
        let mut params = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            if i > 0 {
                acc += (points[i] - points[i - 1]).norm();
            }
            params.push(acc);
        }
        let mut d1 = vec![Vec2::zeros(); n];
        for i in 0..n {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n.saturating_sub(1)));
            if hi > lo && params[hi] > params[lo] {
                d1[i] = (points[hi] - points[lo]) / (params[hi] - params[lo]);
            }
        }
        let mut curvatures = vec![f64::NAN; n];
        for i in 1..n.saturating_sub(1) {
            curvatures[i] = circumcircle_curvature(&points[i - 1], &points[i], &points[i + 1]);
        }
        if n >= 3 {
            curvatures[0] = curvatures[1];
            curvatures[n - 1] = curvatures[n - 2];
        } else {
            curvatures.iter_mut().for_each(|k| *k = 0.0);
        }
        SampledCurve {
            tangents: d1.iter().map(|v| unit(*v)).collect(),
            d2: vec![Vec2::zeros(); n],
            d1,
            curvatures,
            params,
            points,
            markers: Vec::new(),
            closed,
            generation,
            base: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn node(&self, i: usize) -> Node {
        Node {
            s: self.params[i],
            p: self.points[i],
            d1: self.d1[i],
            d2: self.d2[i],
        }
    }

    pub fn nodes(&self) -> Vec<Node> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn arclength(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Exact point on the curve at source parameter `s`.
    pub fn eval_param(&self, m: &MapFamily, s: f64) -> Option<Node> {
        let base = self.base.as_ref()?;
        node_at(m, base, s, self.generation, None)
    }

    /// Insert a node at source parameter `s` carrying `label`.
    pub fn insert_marker(&mut self, m: &MapFamily, s: f64, label: impl Into<String>) -> Result<usize> {
        self.insert_markers(m, vec![(s, label.into())])?;
        Ok(self.params.partition_point(|&q| q < s))
    }

    /// Insert several markers with one merge pass over the nodes.
    pub fn insert_markers(&mut self, m: &MapFamily, mut items: Vec<(f64, String)>) -> Result<()> {
        if items.is_empty() {
            return Ok(());
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut fresh: Vec<Node> = Vec::new();
        for (s, _) in &items {
            let i = self.params.partition_point(|&q| q < *s);
            let present = i < self.len() && self.params[i] == *s;
            if !present && fresh.last().is_none_or(|n| n.s != *s) {
                fresh.push(
                    self.eval_param(m, *s)
                        .ok_or_else(|| Error::Unsupported("markers need a curve with a base".into()))?,
                );
            }
        }
        if !fresh.is_empty() {
            let n = self.len() + fresh.len();
            let mut out = SampledCurve {
                points: Vec::with_capacity(n),
                tangents: Vec::with_capacity(n),
                curvatures: Vec::with_capacity(n),
                params: Vec::with_capacity(n),
                d1: Vec::with_capacity(n),
                d2: Vec::with_capacity(n),
                markers: Vec::new(),
                closed: self.closed,
                generation: self.generation,
                base: self.base.clone(),
            };
            let mut f = fresh.iter().peekable();
            for i in 0..self.len() {
                while let Some(node) = f.next_if(|nd| nd.s < self.params[i]) {
                    out.push_fresh(node);
                }
                out.points.push(self.points[i]);
                out.tangents.push(self.tangents[i]);
                out.curvatures.push(self.curvatures[i]);
                out.params.push(self.params[i]);
                out.d1.push(self.d1[i]);
                out.d2.push(self.d2[i]);
            }
            for node in f {
                out.push_fresh(node);
            }
            out.markers = std::mem::take(&mut self.markers);
            *self = out;
        }
        for (s, label) in items {
            self.markers.push(Marker { index: 0, s, label });
        }
        self.reindex_markers();
        Ok(())
    }

    fn push_fresh(&mut self, n: &Node) {
        let nd = n.d1.norm();
        self.points.push(n.p);
        self.tangents.push(unit(n.d1));
        self.curvatures.push(cross(&n.d1, &n.d2).abs() / (nd * nd * nd));
        self.params.push(n.s);
        self.d1.push(n.d1);
        self.d2.push(n.d2);
    }

    fn reindex_markers(&mut self) {
        let params = &self.params;
        self.markers.retain(|mk| {
            let i = params.partition_point(|&q| q < mk.s);
            i < params.len() && params[i] == mk.s
        });
        for mk in self.markers.iter_mut() {
            mk.index = params.partition_point(|&q| q < mk.s);
        }
        self.markers.sort_by_key(|a| a.index);
        self.markers.dedup_by(|a, b| a.index == b.index);
    }

    /// Curvature of every interior node from circumscribed circles.
    pub fn fd_curvatures(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![f64::NAN; n];
        for i in 1..n.saturating_sub(1) {
            out[i] = circumcircle_curvature(&self.points[i - 1], &self.points[i], &self.points[i + 1]);
        }
        out
    }

    /// Sub-curve between node indices `lo..=hi`, keeping markers inside.
    pub fn slice(&self, lo: usize, hi: usize) -> SampledCurve {
        let mut c = SampledCurve {
            points: self.points[lo..=hi].to_vec(),
            tangents: self.tangents[lo..=hi].to_vec(),
            curvatures: self.curvatures[lo..=hi].to_vec(),
            params: self.params[lo..=hi].to_vec(),
            d1: self.d1[lo..=hi].to_vec(),
            d2: self.d2[lo..=hi].to_vec(),
            markers: self
                .markers
                .iter()
                .filter(|mk| mk.index >= lo && mk.index <= hi)
                .cloned()
                .collect(),
            closed: false,
            generation: self.generation,
            base: self.base.clone(),
        };
        c.reindex_markers();
        c
    }
}

fn needs_split(l: &Node, r: &Node, opts: &RefineOptions) -> bool {
    let chord = r.p - l.p;
    let dist = chord.norm();
    if dist > opts.h_max {
        return true;
    }
    if turn_angle(&l.d1, &r.d1) > opts.theta_max {
        return true;
    }
    dist > 0.0 && (turn_angle(&l.d1, &chord) > opts.theta_max || turn_angle(&chord, &r.d1) > opts.theta_max)
}

#[allow(clippy::too_many_arguments)]
fn refine_gap(
    m: Option<&MapFamily>,
    base: &BaseCurve,
    gen: usize,
    l: Node,
    r: Node,
    opts: &RefineOptions,
    clip: Option<&Rect>,
    current: &mut Vec<Node>,
    pieces: &mut Vec<Vec<Node>>,
    total: &mut usize,
) -> Result<()> {
    if r.s - l.s <= opts.s_min.max(f64::EPSILON * r.s.abs()) || !needs_split(&l, &r, opts) {
        current.push(r);
        *total += 1;
        if *total > opts.cap {
            return Err(Error::RefinementBudgetExceeded { cap: opts.cap });
        }
        return Ok(());
    }
    let s = 0.5 * (l.s + r.s);
    let mid = match m {
        Some(m) => node_at(m, base, s, gen, clip),
        None => {
            let (p, d1, d2) = base.eval(s);
            Some(Node { s, p, d1, d2 })
        }
    };
    match mid {
        Some(mid) => {
            refine_gap(m, base, gen, l, mid, opts, clip, current, pieces, total)?;
            refine_gap(m, base, gen, mid, r, opts, clip, current, pieces, total)
        }
        None => {
            // the curve leaves the region between l and r
            if !current.is_empty() {
                pieces.push(std::mem::take(current));
            }
            current.push(r);
            *total += 1;
            Ok(())
        }
    }
}

/// Refine an ordered run of nodes at generation `gen`. Returns the pieces
/// that remain after clipping.
fn refine_nodes(
    m: Option<&MapFamily>,
    base: &BaseCurve,
    gen: usize,
    nodes: Vec<Node>,
    opts: &RefineOptions,
    clip: Option<&Rect>,
    total: &mut usize,
) -> Result<Vec<Vec<Node>>> {
    let mut pieces = Vec::new();
    if nodes.is_empty() {
        return Ok(pieces);
    }
    let mut current = vec![nodes[0]];
    *total += 1;
    for w in nodes.windows(2) {
        refine_gap(m, base, gen, w[0], w[1], opts, clip, &mut current, &mut pieces, total)?;
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    Ok(pieces)
}

fn step_pieces(
    m: &MapFamily,
    c: &SampledCurve,
    opts: &RefineOptions,
    clip: Option<&Rect>,
    total: &mut usize,
) -> Result<Vec<SampledCurve>> {
    let gen = c.generation + 1;
    let Some(base) = c.base.clone() else {
        let pts: Vec<Point> = c.points.iter().map(|&p| m.eval(p)).collect();
        if let Some(i) = pts.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::NonFinite { index: i });
        }
        let mut out = SampledCurve::from_points(pts, c.closed, gen);
        out.markers = c.markers.clone();
        return Ok(vec![out]);
    };
    // map stored nodes, splitting where nodes are lost
    let mut runs: Vec<Vec<Node>> = vec![Vec::new()];
    for i in 0..c.len() {
        let n = push_node(m, &c.node(i));
        if node_ok(&n, clip) {
            runs.last_mut().unwrap().push(n);
        } else if clip.is_none() {
            return Err(Error::NonFinite { index: i });
        } else if !runs.last().unwrap().is_empty() {
            runs.push(Vec::new());
        }
    }
    let mut out = Vec::new();
    for run in runs.into_iter().filter(|r| !r.is_empty()) {
        for piece in refine_nodes(Some(m), &base, gen, run, opts, clip, total)? {
            let mut sc = SampledCurve::from_nodes(&piece, gen, Some(base.clone()));
            let (lo, hi) = (piece[0].s, piece[piece.len() - 1].s);
            sc.markers = c
                .markers
                .iter()
                .filter(|mk| mk.s >= lo && mk.s <= hi)
                .cloned()
                .collect();
            sc.reindex_markers();
            out.push(sc);
        }
    }
    Ok(out)
}

/// `T^steps` applied to the curve with preimage-parameter refinement.
pub fn evolve_curve(
    m: &MapFamily,
    c: &SampledCurve,
    steps: usize,
    opts: &RefineOptions,
) -> Result<SampledCurve> {
    let mut cur = c.clone();
    for _ in 0..steps {
        let mut total = 0;
        let mut pieces = step_pieces(m, &cur, opts, None, &mut total)?;
        cur = pieces.remove(0);
    }
    Ok(cur)
}

/// Like [`evolve_curve`] but drops every point whose orbit leaves `clip`,
/// splitting the curve into pieces.
pub fn evolve_clipped(
    m: &MapFamily,
    pieces: &[SampledCurve],
    opts: &RefineOptions,
    clip: &Rect,
) -> Result<Vec<SampledCurve>> {
    let mut total = 0;
    let mut out = Vec::new();
    for c in pieces {
        out.extend(step_pieces(m, c, opts, Some(clip), &mut total)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvatureRecursion {
    /// Curvature of the image curve at each node, from the exact push-forward.
    pub k: Vec<f64>,
    /// `(I + II) / ||gamma_i'||^3` (triangle-inequality bound).
    pub bound_split: Vec<f64>,
    /// `(b k_{i-1} + K b) ||gamma_{i-1}'||^3 / ||gamma_i'||^3` with `K = k_generic`.
    pub bound_generic: Vec<f64>,
    pub k_generic: f64,
    /// Nodes where `||DT gamma'||` is too small for the formula.
    pub flagged: Vec<usize>,
}

/// Curvature of `T(c)` at every node of `c` from the push-forward formula.
/// `k_generic = None` takes the smallest constant that makes the generic
/// bound hold at every node.
pub fn curvature_recursion(
    m: &MapFamily,
    c: &SampledCurve,
    k_generic: Option<f64>,
) -> CurvatureRecursion {
    let b = m.b().abs();
    let n = c.len();
    let mut k = vec![f64::NAN; n];
    let mut term2 = vec![f64::NAN; n];
    let mut bound_split = vec![f64::NAN; n];
    let mut flagged = Vec::new();
    for i in 0..n {
        let g1 = c.d1[i];
        let g2 = c.d2[i];
        let j = m.jacobian(c.points[i]);
        let (jx, jy) = m.jacobian_partials(c.points[i]);
        let x = jx * g1.x + jy * g1.y;
        let t1 = j * g1;
        let t2 = j * g2 + x * g1;
        let n1 = t1.norm();
        if !(n1 > 1e-300) || n1 < 1e-12 * g1.norm() {
            flagged.push(i);
            continue;
        }
        let n3 = n1 * n1 * n1;
        k[i] = cross(&t1, &t2).abs() / n3;
        let term1 = j.determinant().abs() * cross(&g1, &g2).abs();
        let ii = cross(&t1, &(x * g1)).abs();
        term2[i] = ii;
        bound_split[i] = (term1 + ii) / n3;
    }
    let kg = k_generic.unwrap_or_else(|| {
        if b == 0.0 {
            return 0.0;
        }
        (0..n)
            .filter(|&i| term2[i].is_finite())
            .map(|i| {
                let g = c.d1[i].norm();
                term2[i] / (b * g * g * g)
            })
            .fold(0.0, f64::max)
    });
    let bound_generic = (0..n)
        .map(|i| {
            if !k[i].is_finite() {
                return f64::NAN;
            }
            let g0 = c.d1[i].norm();
            let g1 = (m.jacobian(c.points[i]) * c.d1[i]).norm();
            (b * c.curvatures[i] + kg * b) * (g0 / g1).powi(3)
        })
        .collect();
    CurvatureRecursion {
        k,
        bound_split,
        bound_generic,
        k_generic: kg,
        flagged,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct C2bReport {
    pub max_slope: f64,
    pub max_curvature: f64,
    pub is_c2b: bool,
    pub threshold: f64,
}

/// Whether a curve is `C2(b)`: slopes and curvatures at most `K(delta) b`.
pub fn c2b_check(c: &SampledCurve, cfg: &SystemConfig, b: f64) -> C2bReport {
    c2b_check_range(c, cfg, b, 0, c.len().saturating_sub(1))
}

pub fn c2b_check_range(c: &SampledCurve, cfg: &SystemConfig, b: f64, lo: usize, hi: usize) -> C2bReport {
    let threshold = cfg.k_delta() * b.abs();
    let mut max_slope: f64 = 0.0;
    let mut max_curvature: f64 = 0.0;
    if !c.is_empty() {
        for i in lo..=hi.min(c.len() - 1) {
            let t = c.tangents[i];
            let slope = if t.x == 0.0 {
                if t.y == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (t.y / t.x).abs()
            };
            max_slope = max_slope.max(slope);
            if c.curvatures[i].is_finite() {
                max_curvature = max_curvature.max(c.curvatures[i]);
            }
        }
    }
    C2bReport {
        is_c2b: max_slope <= threshold && max_curvature <= threshold,
        max_slope,
        max_curvature,
        threshold,
    }
}

/// Symmetric Hausdorff distance between the node sets of two curve families.
pub fn hausdorff_distance(a: &[SampledCurve], b: &[SampledCurve]) -> f64 {
    let pa: Vec<Point> = a.iter().flat_map(|c| c.points.iter().copied()).collect();
    let pb: Vec<Point> = b.iter().flat_map(|c| c.points.iter().copied()).collect();
    let one_sided = |p: &[Point], q: &[Point]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_sided(&pa, &pb).max(one_sided(&pb, &pa))
}

/// Shoelace area computed about the centroid.
pub fn polygon_area(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let centroid = points.iter().fold(Point::zeros(), |acc, p| acc + p) / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i] - centroid;
        let q = points[(i + 1) % n] - centroid;
        acc += p.x * q.y - p.y * q.x;
    }
    0.5 * acc.abs()
}

/// Ray-casting point-in-polygon test.
pub fn point_in_polygon(z: &Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > z.y) != (pj.y > z.y) {
            let x = pj.x + (z.y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
            if z.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Clone, Debug)]
pub struct BoundaryGeneration {
    pub n: usize,
    /// Images of the top edge (traversed right to left).
    pub upper: Vec<SampledCurve>,
    /// Images of the bottom edge (left to right).
    pub lower: Vec<SampledCurve>,
    pub right: Vec<SampledCurve>,
    pub left: Vec<SampledCurve>,
}

impl BoundaryGeneration {
    pub fn clipped(&self) -> bool {
        [&self.upper, &self.lower, &self.right, &self.left]
            .iter()
            .any(|v| v.len() != 1)
    }

    /// Closed polygon `T^n(boundary of R_0)` when no edge was clipped.
    pub fn polygon(&self) -> Option<Vec<Point>> {
        if self.clipped() {
            return None;
        }
        let mut pts = Vec::new();
        for edge in [&self.lower[0], &self.right[0], &self.upper[0], &self.left[0]] {
            let k = edge.points.len();
            pts.extend_from_slice(&edge.points[..k.saturating_sub(1)]);
        }
        Some(pts)
    }

    pub fn area(&self) -> Option<f64> {
        self.polygon().map(|p| polygon_area(&p))
    }

    /// Number of markers on the upper and lower components, over all pieces.
    pub fn marker_counts(&self) -> (usize, usize) {
        let count = |v: &[SampledCurve]| v.iter().map(|c| c.markers.len()).sum();
        (count(&self.upper), count(&self.lower))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryOptions {
    pub refine: RefineOptions,
    /// Order of the direction field used for critical markers.
    pub critical_order: usize,
    /// Detect critical markers at each generation.
    pub markers: bool,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            refine: RefineOptions::default(),
            critical_order: 4,
            markers: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryEvolution {
    pub generations: Vec<BoundaryGeneration>,
    pub log: Vec<String>,
}

fn mark_generation(
    m: &MapFamily,
    pieces: &mut [SampledCurve],
    cfg: &SystemConfig,
    order: usize,
    tag: &str,
    log: &mut Vec<String>,
) {
    let gen = pieces.first().map_or(0, |c| c.generation);
    let mut count = 0;
    for piece in pieces.iter_mut() {
        let found = crate::critical::critical_points_on_crossings(m, piece, cfg, order);
        let mut items = Vec::new();
        for r in found {
            match r {
                Ok(cp) => {
                    count += 1;
                    items.push((cp.s, format!("{tag}{gen}.{count}")));
                }
                Err(e) => log.push(format!("generation {gen}{tag}: {e}")),
            }
        }
        if let Err(e) = piece.insert_markers(m, items) {
            log.push(format!("generation {gen}{tag}: {e}"));
        }
    }
}

/// `T^k(boundary of R_0)` for `k = 0..=n`. Points whose orbits leave the
/// working box are dropped, so each edge image may consist of several pieces.
pub fn boundary_evolution(
    m: &MapFamily,
    n: usize,
    cfg: &SystemConfig,
    opts: &BoundaryOptions,
) -> Result<BoundaryEvolution> {
    let r = m.trapping_box().rect;
    let [ll, lr, ur, ul] = r.corners();
    let edge = |p0: Point, p1: Point| SampledCurve::segment(p0, p1, &opts.refine);
    let mut gen0 = BoundaryGeneration {
        n: 0,
        upper: vec![edge(ur, ul)?],
        lower: vec![edge(ll, lr)?],
        right: vec![edge(lr, ur)?],
        left: vec![edge(ul, ll)?],
    };
    let mut log = Vec::new();
    if opts.markers {
        mark_generation(m, &mut gen0.upper, cfg, opts.critical_order, "+", &mut log);
        mark_generation(m, &mut gen0.lower, cfg, opts.critical_order, "-", &mut log);
    }
    let mut generations = vec![gen0];
    for k in 1..=n {
        let prev = generations.last().unwrap();
        let mut upper = evolve_clipped(m, &prev.upper, &opts.refine, &r)?;
        let mut lower = evolve_clipped(m, &prev.lower, &opts.refine, &r)?;
        let right = evolve_clipped(m, &prev.right, &opts.refine, &r)?;
        let left = evolve_clipped(m, &prev.left, &opts.refine, &r)?;
        let total: usize = [&upper, &lower, &right, &left]
            .iter()
            .flat_map(|v| v.iter().map(|c| c.len()))
            .sum();
        if total > opts.refine.cap {
            return Err(Error::RefinementBudgetExceeded {
                cap: opts.refine.cap,
            });
        }
        if opts.markers {
            mark_generation(m, &mut upper, cfg, opts.critical_order, "+", &mut log);
            mark_generation(m, &mut lower, cfg, opts.critical_order, "-", &mut log);
        }
        generations.push(BoundaryGeneration {
            n: k,
            upper,
            lower,
            right,
            left,
        });
    }
    Ok(BoundaryEvolution { generations, log })
}

/// CSV with columns `n, idx, x, y, tx, ty, curvature, marker_label`.
pub fn write_curves_csv<W: Write>(w: &mut W, curves: &[SampledCurve]) -> Result<()> {
    writeln!(w, "n,idx,x,y,tx,ty,curvature,marker_label")?;
    for c in curves {
        let mut mk = c.markers.iter().peekable();
        for i in 0..c.len() {
            let mut label = "";
            while let Some(m) = mk.peek() {
                if m.index < i {
                    mk.next();
                } else {
                    if m.index == i {
                        label = &m.label;
                    }
                    break;
                }
            }
            let p = c.points[i];
            let t = c.tangents[i];
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                c.generation, i, p.x, p.y, t.x, t.y, c.curvatures[i], label
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Mat2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coarse() -> RefineOptions {
        RefineOptions {
            h_max: 0.01,
            ..RefineOptions::default()
        }
    }

    #[test]
    fn one_step_parabola_has_vertical_tangent_at_fold() {
        let m = MapFamily::henon(1.4, 0.3).unwrap();
        let c = SampledCurve::segment(Point::new(-1.0, 0.0), Point::new(1.0, 0.0), &coarse()).unwrap();
        let mid = c.params.iter().position(|&s| s == 0.5).unwrap();
        let img = evolve_curve(&m, &c, 1, &coarse()).unwrap();
        let k = img.params.iter().position(|&s| s == 0.5).unwrap();
        assert_eq!(img.points[k], Point::new(1.0, 0.0));
        let t = img.tangents[k];
        assert!(t.x.abs() < 1e-15 && (t.y - 1.0).abs() < 1e-15);
        let _ = mid;
        for (p, s) in img.points.iter().zip(&img.params) {
            let x = -1.0 + 2.0 * s;
            assert!((p - Point::new(1.0 - 1.4 * x * x, 0.3 * x)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let m = MapFamily::henon(1.4, 0.3).unwrap();
        let c = SampledCurve::segment(Point::new(-1.0, 0.0), Point::new(1.0, 0.0), &coarse()).unwrap();
        let same = evolve_curve(&m, &c, 0, &coarse()).unwrap();
        assert_eq!(same.points, c.points);
        assert_eq!(same.generation, 0);
    }

    #[test]
    fn refined_nodes_lie_on_true_image() {
        let m = MapFamily::henon(1.4, 0.3).unwrap();
        let p0 = Point::new(-0.8, 0.05);
        let p1 = Point::new(0.9, -0.02);
        let c = SampledCurve::segment(p0, p1, &coarse()).unwrap();
        let img = evolve_curve(&m, &c, 4, &coarse()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let i = rng.gen_range(0..img.len());
            let s = img.params[i];
            let mut z = p0 + (p1 - p0) * s;
            for _ in 0..4 {
                z = m.eval(z);
            }
            assert!((z - img.points[i]).norm() < 1e-12);
            // and back: the source point is on the segment
            let src = p0 + (p1 - p0) * s;
            let along = (src - p0).dot(&(p1 - p0)) / (p1 - p0).norm_squared();
            assert!((along - s).abs() < 1e-12);
        }
        // spacing respected
        for w in img.points.windows(2) {
            assert!((w[1] - w[0]).norm() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let m = MapFamily::henon(1.4, 0.3).unwrap();
        let opts = RefineOptions {
            h_max: 1e-4,
            cap: 1000,
            ..RefineOptions::default()
        };
        let c = SampledCurve::segment(Point::new(-1.0, 0.0), Point::new(1.0, 0.0), &coarse()).unwrap();
        assert!(matches!(
            evolve_curve(&m, &c, 3, &opts),
            Err(Error::RefinementBudgetExceeded { cap: 1000 })
        ));
    }

    #[test]
    fn parabola_curvature_under_diagonal_map() {
        // (t, t^2) pushed by diag(1, b): curvature at t = 0 goes from 2 to 2b
        let b = 1e-3;
        let lin = crate::map::CustomFamily {
            name: "diag".into(),
            eval: Box::new(|p: &crate::map::MapParams, z: Point| Point::new(z.x, p.b * z.y)),
            jacobian: Box::new(|p: &crate::map::MapParams, _z: Point| Mat2::new(1.0, 0.0, 0.0, p.b)),
            critical_xs: vec![],
        };
        let m = MapFamily::custom(lin, 0.0, b).unwrap();
        let base = BaseCurve::Parametric(Arc::new(|s: f64| {
            let t = 2.0 * s - 1.0;
            (Point::new(t, t * t), Vec2::new(2.0, 4.0 * t), Vec2::new(0.0, 8.0))
        }));
        let c = SampledCurve::from_base(base, &coarse()).unwrap();
        let mid = c.params.iter().position(|&s| s == 0.5).unwrap();
        assert!((c.curvatures[mid] - 2.0).abs() < 1e-12);
        let rec = curvature_recursion(&m, &c, None);
        assert!((rec.k[mid] - 2.0 * b).abs() < 1e-12);
    }

    #[test]
    fn affine_images_of_lines_are_straight() {
        let aff = crate::map::CustomFamily {
            name: "affine".into(),
            eval: Box::new(|_: &crate::map::MapParams, z: Point| {
                Point::new(2.0 * z.x + 0.3 * z.y + 1.0, -0.5 * z.x + 0.1 * z.y)
            }),
            jacobian: Box::new(|_: &crate::map::MapParams, _z: Point| Mat2::new(2.0, 0.3, -0.5, 0.1)),
            critical_xs: vec![],
        };
        let m = MapFamily::custom(aff, 0.0, 0.1).unwrap();
        let c = SampledCurve::segment(Point::new(0.0, 0.0), Point::new(1.0, 0.5), &coarse()).unwrap();
        let rec = curvature_recursion(&m, &c, None);
        assert!(rec.k.iter().all(|&k| k.abs() < 1e-12));
    }

    #[test]
    fn recursion_bounds_hold() {
        let m = MapFamily::henon(1.9, 1e-3).unwrap();
        let mut c = SampledCurve::segment(Point::new(0.55, 0.0), Point::new(0.6, 0.0), &coarse()).unwrap();
        for _ in 0..4 {
            let rec = curvature_recursion(&m, &c, None);
            let next = evolve_curve(&m, &c, 1, &coarse()).unwrap();
            for i in 0..c.len() {
                let k = rec.k[i];
                assert!(k <= rec.bound_split[i] * (1.0 + 1e-9) + 1e-300);
                assert!(k <= rec.bound_generic[i] * (1.0 + 1e-9) + 1e-300);
                let j = next.params.iter().position(|&s| s == c.params[i]).unwrap();
                assert!((next.curvatures[j] - k).abs() <= 1e-9 * k.max(1e-300));
            }
            c = next;
        }
    }

    #[test]
    fn c2b_classification() {
        let cfg = SystemConfig::default();
        let flat = SampledCurve::segment(Point::new(0.3, 0.0), Point::new(0.6, 0.0), &coarse()).unwrap();
        let r = c2b_check(&flat, &cfg, 1e-6);
        assert!(r.is_c2b);
        assert_eq!(r.max_slope, 0.0);
        assert_eq!(r.max_curvature, 0.0);

        let m = MapFamily::henon(2.0, 1e-6).unwrap();
        let seg = SampledCurve::segment(Point::new(-0.5, 0.0), Point::new(0.5, 0.0), &coarse()).unwrap();
        let img = evolve_curve(&m, &seg, 1, &coarse()).unwrap();
        assert!(!c2b_check(&img, &cfg, 1e-6).is_c2b);
    }

    #[test]
    fn area_shrinks_by_b() {
        let b = 0.05;
        let m = MapFamily::henon(1.4, b).unwrap();
        let cfg = SystemConfig::default();
        let opts = BoundaryOptions {
            refine: RefineOptions {
                h_max: 2e-3,
                ..RefineOptions::default()
            },
            markers: false,
            ..BoundaryOptions::default()
        };
        let ev = boundary_evolution(&m, 3, &cfg, &opts).unwrap();
        let areas: Vec<f64> = ev.generations.iter().map(|g| g.area().unwrap()).collect();
        for w in areas.windows(2) {
            assert!((w[1] / w[0] - b).abs() < 0.02 * b, "{areas:?}");
        }
    }

    #[test]
    fn generation_zero_is_the_box_boundary() {
        let m = MapFamily::henon(1.9, 1e-4).unwrap();
        let cfg = SystemConfig::default();
        let ev = boundary_evolution(&m, 0, &cfg, &BoundaryOptions::default()).unwrap();
        let g = &ev.generations[0];
        let r = m.trapping_box().rect;
        assert!(g.upper[0].points.iter().all(|p| p.y == r.y_hi));
        assert!(g.lower[0].points.iter().all(|p| p.y == r.y_lo));
        assert_eq!(g.marker_counts(), (1, 1));
    }

    #[test]
    fn nesting_of_images() {
        let m = MapFamily::henon(1.4, 0.05).unwrap();
        let cfg = SystemConfig::default();
        let opts = BoundaryOptions {
            refine: coarse(),
            markers: false,
            ..BoundaryOptions::default()
        };
        let ev = boundary_evolution(&m, 3, &cfg, &opts).unwrap();
        for k in 1..ev.generations.len() {
            let outer = ev.generations[k - 1].polygon().unwrap();
            let inner = ev.generations[k].polygon().unwrap();
            let inside = inner
                .iter()
                .step_by(7)
                .filter(|p| point_in_polygon(p, &outer))
                .count();
            let total = inner.iter().step_by(7).count();
            assert!(inside as f64 >= 0.99 * total as f64, "{inside}/{total} at {k}");
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = SampledCurve::segment(Point::new(0.0, 0.0), Point::new(1.0, 0.0), &coarse()).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, std::slice::from_ref(&c)).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), c.len() + 1);
        assert!(s.starts_with("n,idx,x,y,tx,ty,curvature,marker_label"));
    }
}
