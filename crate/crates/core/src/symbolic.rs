//! Itinerary coding, block and periodic-point counting, monotone segments of
//! evolved boundaries and entropy estimates built from them.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::critical::{build_hierarchy, CriticalHierarchy};
use crate::curves::{BoundaryEvolution, BoundaryOptions, RefineOptions, boundary_evolution};
use crate::error::{Error, Result};
use crate::map::{MapFamily, Mat2, Point, Topology};

/// One or two admissible labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Address {
    pub first: u8,
    pub second: Option<u8>,
}

impl Address {
    fn one(l: u8) -> Self {
        Address {
            first: l,
            second: None,
        }
    }

    fn two(right: u8, left: u8) -> Self {
        if right == left {
            Address::one(right)
        } else {
            Address {
                first: right,
                second: Some(left),
            }
        }
    }

    pub fn is_ambiguous(&self) -> bool {
        self.second.is_some()
    }

    pub fn contains(&self, l: u8) -> bool {
        self.first == l || self.second == Some(l)
    }

    fn union(self, other: Address) -> Address {
        let mut labels = vec![self.first];
        labels.extend(self.second);
        for l in std::iter::once(other.first).chain(other.second) {
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        Address {
            first: labels[0],
            second: labels.get(1).copied(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Itinerary {
    pub symbols: Vec<u8>,
    /// `(index, second admissible label)`
    pub ambiguous: Vec<(usize, u8)>,
}

/// Assigns addresses relative to the critical set. Without a hierarchy the
/// one-dimensional rule on `x` is used.
#[derive(Clone, Copy)]
pub struct Coder<'a> {
    pub map: &'a MapFamily,
    pub hierarchy: Option<&'a CriticalHierarchy>,
    pub tie_eps: f64,
    /// Set for circle maps whose monotone branches wrap all the way around;
    /// symbols then encode `(branch of x, branch of f(x))`.
    pub refined: bool,
}

pub const DEFAULT_TIE_EPS: f64 = 1e-9;

impl<'a> Coder<'a> {
    pub fn new(map: &'a MapFamily, hierarchy: Option<&'a CriticalHierarchy>) -> Self {
        let refined = map.topology() == Topology::Circle && branches_wrap(map);
        Coder {
            map,
            hierarchy,
            tie_eps: DEFAULT_TIE_EPS,
            refined,
        }
    }

    fn r(&self) -> usize {
        self.map.critical_xs().len()
    }

    fn branch_count(&self) -> usize {
        match self.map.topology() {
            Topology::Interval => self.r() + 1,
            Topology::Circle => self.r().max(1),
        }
    }

    pub fn alphabet_size(&self) -> usize {
        let n = self.branch_count();
        if self.refined {
            n * n
        } else {
            n
        }
    }

    fn branch_label(&self, x: f64) -> u8 {
        let cs = self.map.critical_xs();
        match self.map.topology() {
            Topology::Interval => 1 + cs.iter().filter(|&&c| c > x).count() as u8,
            Topology::Circle => {
                let x = x.rem_euclid(1.0);
                let k = cs.iter().filter(|&&c| c <= x).count();
                if k == 0 {
                    cs.len().max(1) as u8
                } else {
                    k as u8
                }
            }
        }
    }

    /// Labels to the right and to the left of the critical abscissa `c`.
    fn side_labels(&self, c: f64) -> (u8, u8) {
        let cs = self.map.critical_xs();
        match self.map.topology() {
            Topology::Interval => (
                1 + cs.iter().filter(|&&q| q > c).count() as u8,
                1 + cs.iter().filter(|&&q| q >= c).count() as u8,
            ),
            Topology::Circle => {
                let c = c.rem_euclid(1.0);
                let j = cs.iter().filter(|&&q| q <= c).count().max(1);
                let left = if j == 1 { cs.len().max(1) } else { j - 1 };
                (j as u8, left as u8)
            }
        }
    }

    fn refine(&self, l: u8, x: f64) -> u8 {
        if !self.refined {
            return l;
        }
        let j = self.branch_label(self.map.base_map(x));
        (l - 1) * self.branch_count() as u8 + j
    }

    fn refine_addr(&self, a: Address, x: f64) -> Address {
        Address {
            first: self.refine(a.first, x),
            second: a.second.map(|l| self.refine(l, x)),
        }
    }

    /// Address of `z`; two labels within `tie_eps` of the midline.
    pub fn address(&self, z: &Point) -> Address {
        let (mid, root) = self.midline(z);
        let a = match (mid, root) {
            (Some(mid), Some(root)) => {
                let (right, left) = self.side_labels(root);
                let d = self.map_offset(z.x, mid);
                if d.abs() <= self.tie_eps {
                    Address::two(right, left)
                } else if d > 0.0 {
                    Address::one(right)
                } else {
                    Address::one(left)
                }
            }
            _ => {
                let cs = self.map.critical_xs();
                match cs
                    .iter()
                    .find(|&&c| self.map_offset(z.x, c).abs() <= self.tie_eps)
                {
                    Some(&c) => {
                        let (right, left) = self.side_labels(c);
                        Address::two(right, left)
                    }
                    None => Address::one(self.branch_label(z.x)),
                }
            }
        };
        self.refine_addr(a, z.x)
    }

    /// Fuzzy address of a point of `R_k`: both labels within `b^{k/4}` of the
    /// midline. Always contains [`Self::address`].
    pub fn fuzzy_address(&self, z: &Point, k: usize) -> Address {
        let exact = self.address(z);
        let (mid, root) = self.midline(z);
        let (Some(mid), Some(root)) = (mid, root) else {
            return exact;
        };
        let band = self.map.b().abs().powf(k as f64 / 4.0);
        if self.map_offset(z.x, mid).abs() < band {
            let (right, left) = self.side_labels(root);
            exact.union(self.refine_addr(Address::two(right, left), z.x))
        } else {
            exact
        }
    }

    fn midline(&self, z: &Point) -> (Option<f64>, Option<f64>) {
        match self.hierarchy {
            Some(h) => {
                let info = h.distance_to_critical(z);
                (info.midline_x, info.root_x)
            }
            None => (None, None),
        }
    }

    fn map_offset(&self, x: f64, c: f64) -> f64 {
        match self.map.topology() {
            Topology::Interval => x - c,
            Topology::Circle => {
                let d = (x - c).rem_euclid(1.0);
                if d > 0.5 {
                    d - 1.0
                } else {
                    d
                }
            }
        }
    }

    /// One-sided itinerary of length `n`.
    pub fn itinerary(&self, z0: Point, n: usize) -> Result<Itinerary> {
        if n == 0 {
            return Err(Error::InvalidArgument("itinerary length must be at least 1".into()));
        }
        let rect = self.map.trapping_box().rect;
        let mut z = z0;
        let mut out = Itinerary {
            symbols: Vec::with_capacity(n),
            ambiguous: Vec::new(),
        };
        for i in 0..n {
            if !rect.contains(&z) || !z.iter().all(|v| v.is_finite()) {
                return Err(Error::Escape {
                    index: i,
                    x: z.x,
                    y: z.y,
                });
            }
            let a = self.address(&z);
            out.symbols.push(a.first);
            if let Some(s) = a.second {
                out.ambiguous.push((i, s));
            }
            z = self.map.eval(z);
        }
        Ok(out)
    }
}

fn branches_wrap(m: &MapFamily) -> bool {
    let cs = m.critical_xs();
    if cs.is_empty() {
        return m.base_map(1.0) - m.base_map(0.0) > 1.0;
    }
    (0..cs.len()).any(|i| {
        let lo = cs[i];
        let hi = if i + 1 < cs.len() { cs[i + 1] } else { cs[0] + 1.0 };
        (m.base_map(hi) - m.base_map(lo)).abs() >= 1.0
    })
}

/// How orbits are seeded for block counting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    /// Independent seeds (each a random point of the working box).
    pub seeds: usize,
    /// Points recorded per seed after burn-in.
    pub orbit_len: usize,
    pub burn_in: usize,
    /// Restarts allowed per seed when an orbit leaves the box.
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            seeds: 64,
            orbit_len: 20_000,
            burn_in: 100,
            max_restarts: 1_000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Segment {
    pub points: Vec<Point>,
    /// Orbit time of the first point (iterates since the seed).
    pub start_time: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub segments: Vec<Segment>,
    pub restarts: usize,
}

impl SampleSet {
    pub fn total_points(&self) -> usize {
        self.segments.iter().map(|s| s.points.len()).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.segments.iter().flat_map(|s| s.points.iter())
    }
}

fn seed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_box_point(m: &MapFamily, rng: &mut ChaCha8Rng) -> Point {
    let r = m.trapping_box().rect;
    Point::new(
        rng.gen_range(r.x_lo..=r.x_hi),
        rng.gen_range(r.y_lo..=r.y_hi),
    )
}

/// Orbit segments on (or near) the attractor: random seeds, burn-in, and a
/// fresh seed whenever an orbit leaves the working box.
pub fn attractor_samples(m: &MapFamily, spec: &SampleSpec) -> SampleSet {
    let rect = m.trapping_box().rect;
    let per_seed: Vec<(Vec<Segment>, usize)> = (0..spec.seeds)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed_rng(spec.seed, k as u64);
            let mut segs = Vec::new();
            let mut restarts = 0;
            let mut remaining = spec.orbit_len;
            while remaining > 0 && restarts <= spec.max_restarts {
                let mut z = random_box_point(m, &mut rng);
                let mut ok = true;
                for _ in 0..spec.burn_in {
                    z = m.eval(z);
                    if !rect.contains(&z) {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    let mut pts = Vec::new();
                    while pts.len() < remaining && rect.contains(&z) {
                        pts.push(z);
                        z = m.eval(z);
                    }
                    remaining -= pts.len();
                    if !pts.is_empty() {
                        segs.push(Segment {
                            points: pts,
                            start_time: spec.burn_in,
                        });
                    }
                }
                if remaining > 0 {
                    restarts += 1;
                }
            }
            (segs, restarts)
        })
        .collect();
    let mut out = SampleSet::default();
    for (segs, r) in per_seed {
        out.segments.extend(segs);
        out.restarts += r;
    }
    out
}

/// Short orbits from random points of the whole working box, without burn-in,
/// each of length at most `len` and cut where the orbit leaves the box.
pub fn box_samples(m: &MapFamily, count: usize, len: usize, seed: u64) -> SampleSet {
    let rect = m.trapping_box().rect;
    let segments: Vec<Segment> = (0..count)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = seed_rng(seed ^ 0x5eed_b0c5, k as u64);
            let mut z = random_box_point(m, &mut rng);
            let mut pts = Vec::with_capacity(len);
            while pts.len() < len && rect.contains(&z) {
                pts.push(z);
                z = m.eval(z);
            }
            (!pts.is_empty()).then_some(Segment {
                points: pts,
                start_time: 0,
            })
        })
        .collect();
    SampleSet {
        segments,
        restarts: 0,
    }
}

/// Distinct words of each length `1..=n_max` seen in the label sequences.
/// Ambiguous positions expand to both labels.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BlockCounts {
    pub n_max: usize,
    /// `counts[n - 1]` is the number of distinct `n`-words.
    pub counts: Vec<usize>,
    /// Number of window starts examined.
    pub windows: usize,
    /// Fraction of `n_max`-words first seen in the final tenth of the windows.
    pub late_discovery_rate: f64,
}

impl BlockCounts {
    pub fn count(&self, n: usize) -> usize {
        self.counts.get(n.wrapping_sub(1)).copied().unwrap_or(0)
    }
}

const SYMBOL_BITS: u32 = 4;

fn insert_words(
    seq: &[Address],
    start: usize,
    n_max: usize,
    sets: &mut [HashSet<u128>],
    new_top: &mut usize,
) {
    fn rec(
        seq: &[Address],
        pos: usize,
        depth: usize,
        code: u128,
        n_max: usize,
        sets: &mut [HashSet<u128>],
        new_top: &mut usize,
        budget: &mut usize,
    ) {
        if depth == n_max || pos >= seq.len() || *budget == 0 {
            return;
        }
        let a = seq[pos];
        for l in std::iter::once(a.first).chain(a.second) {
            if *budget == 0 {
                return;
            }
            *budget -= 1;
            let c = (code << SYMBOL_BITS) | l as u128;
            let fresh = sets[depth].insert(c);
            if fresh && depth + 1 == n_max {
                *new_top += 1;
            }
            rec(seq, pos + 1, depth + 1, c, n_max, sets, new_top, budget);
        }
    }
    // caps the expansion of windows with many ambiguous positions
    let mut budget = 64 * n_max;
    rec(seq, start, 0, 0, n_max, sets, new_top, &mut budget);
}

/// Count distinct words in label sequences.
pub fn count_words(seqs: &[Vec<Address>], n_max: usize) -> Result<BlockCounts> {
    if n_max == 0 || n_max as u32 * SYMBOL_BITS > 128 {
        return Err(Error::InvalidArgument(format!(
            "word length must be in 1..=32, got {n_max}"
        )));
    }
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    let late_start = total - total / 10;
    let mut sets = vec![HashSet::new(); n_max];
    let mut seen = 0;
    let mut late_new = 0;
    for s in seqs {
        for t in 0..s.len() {
            let mut new_top = 0;
            insert_words(s, t, n_max, &mut sets, &mut new_top);
            if seen >= late_start {
                late_new += new_top;
            }
            seen += 1;
        }
    }
    let counts: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let top = counts[n_max - 1];
    Ok(BlockCounts {
        n_max,
        counts,
        windows: total,
        late_discovery_rate: if top > 0 { late_new as f64 / top as f64 } else { 0.0 },
    })
}

fn labelled(coder: &Coder, samples: &SampleSet, fuzzy: bool) -> Vec<Vec<Address>> {
    samples
        .segments
        .par_iter()
        .map(|seg| {
            seg.points
                .iter()
                .enumerate()
                .map(|(j, z)| {
                    if fuzzy {
                        coder.fuzzy_address(z, seg.start_time + j)
                    } else {
                        coder.address(z)
                    }
                })
                .collect()
        })
        .collect()
}

/// `N_n` for `n = 1..=n_max` from attractor samples.
pub fn count_blocks(coder: &Coder, samples: &SampleSet, n_max: usize) -> Result<BlockCounts> {
    count_words(&labelled(coder, samples, false), n_max)
}

/// Fuzzy counts over the attractor samples together with orbits started
/// anywhere in the working box.
pub fn count_fuzzy(
    coder: &Coder,
    attractor: &SampleSet,
    whole_box: &SampleSet,
    n_max: usize,
) -> Result<BlockCounts> {
    let mut seqs = labelled(coder, attractor, true);
    seqs.extend(labelled(coder, whole_box, true));
    count_words(&seqs, n_max)
}

/// Words of length `1..=n_max` in symbol sequences given directly (used for
/// hand-built subshifts).
pub fn count_words_in_symbols(seqs: &[Vec<u8>], n_max: usize) -> Result<BlockCounts> {
    let seqs: Vec<Vec<Address>> = seqs
        .iter()
        .map(|s| s.iter().map(|&l| Address::one(l)).collect())
        .collect();
    count_words(&seqs, n_max)
}

/// A random walk on the graph of a 0/1 transition matrix (symbols `1..=k`).
pub fn subshift_walk(transitions: &[Vec<u8>], len: usize, seed: u64) -> Result<Vec<u8>> {
    let k = transitions.len();
    if k == 0 || k > 15 || transitions.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument("transition matrix must be square with 1..=15 symbols".into()));
    }
    if transitions.iter().any(|r| r.iter().all(|&v| v == 0)) {
        return Err(Error::InvalidArgument("every symbol needs a successor".into()));
    }
    let mut rng = seed_rng(seed, 0);
    let mut s = rng.gen_range(0..k);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(s as u8 + 1);
        let next: Vec<usize> = (0..k).filter(|&j| transitions[s][j] != 0).collect();
        s = next[rng.gen_range(0..next.len())];
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSeeds {
    pub nx: usize,
    pub ny: usize,
    pub max_iter: usize,
}

impl PeriodicSeeds {
    pub fn for_period(n: usize) -> Self {
        PeriodicSeeds {
            nx: (16usize << n.min(14)).max(2_000),
            ny: 3,
            max_iter: 60,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicResult {
    pub n: usize,
    pub points: Vec<Point>,
    pub seeds_tried: usize,
    pub seeds_converged: usize,
}

impl PeriodicResult {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

fn iterate_with_jacobian(m: &MapFamily, z: Point, n: usize) -> (Point, Mat2) {
    let mut p = z;
    let mut j = Mat2::identity();
    for _ in 0..n {
        j = m.jacobian(p) * j;
        p = m.eval(p);
    }
    (p, j)
}

fn newton_periodic(m: &MapFamily, z0: Point, n: usize, max_iter: usize) -> Option<Point> {
    let rect = m.trapping_box().rect;
    let diam = rect.diameter();
    let circle = m.topology() == Topology::Circle;
    let mut z = z0;
    for _ in 0..max_iter {
        let (fz, j) = iterate_with_jacobian(m, z, n);
        let mut g = fz - z;
        if circle {
            g.x -= g.x.round();
        }
        if !g.iter().all(|v| v.is_finite()) {
            return None;
        }
        let a = j - Mat2::identity();
        let step = match a.try_inverse() {
            Some(inv) if inv.iter().all(|v| v.is_finite()) => inv * g,
            _ => g * 0.5,
        };
        let len = step.norm();
        let step = if len > 0.1 * diam { step * (0.1 * diam / len) } else { step };
        z -= step;
        if circle {
            z.x = z.x.rem_euclid(1.0);
        }
        if !z.iter().all(|v| v.is_finite()) {
            return None;
        }
        if step.norm() <= 1e-14 * (1.0 + z.norm()) {
            let (fz, _) = iterate_with_jacobian(m, z, n);
            let mut g = fz - z;
            if circle {
                g.x -= g.x.round();
            }
            return (g.norm() <= 1e-7 * diam).then_some(z);
        }
    }
    None
}

/// Fixed points of `T^n` in the working box, found by Newton's method from a
/// grid of seeds (uniform and Chebyshev-clustered in `x`) and deduplicated at
/// distance `tol` (default `1e-8` times the box diameter).
pub fn count_periodic(
    m: &MapFamily,
    n: usize,
    seeds: &PeriodicSeeds,
    tol: Option<f64>,
) -> Result<PeriodicResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("period must be at least 1".into()));
    }
    let rect = m.trapping_box().rect;
    let tol = tol.unwrap_or(1e-8 * rect.diameter());
    let mut starts = Vec::with_capacity(2 * seeds.nx * seeds.ny);
    for iy in 0..seeds.ny {
        let y = rect.y_lo + rect.height() * (iy as f64 + 0.5) / seeds.ny as f64;
        for ix in 0..seeds.nx {
            let t = (ix as f64 + 0.5) / seeds.nx as f64;
            starts.push(Point::new(rect.x_lo + rect.width() * t, y));
            let c = 0.5 - 0.5 * (std::f64::consts::PI * t).cos();
            starts.push(Point::new(rect.x_lo + rect.width() * c, y));
        }
    }
    let found: Vec<Point> = starts
        .par_iter()
        .filter_map(|&z| newton_periodic(m, z, n, seeds.max_iter))
        .filter(|z| {
            // every point of the orbit must stay in the box
            let mut p = *z;
            (0..n).all(|_| {
                let ok = rect.contains(&p);
                p = m.eval(p);
                ok
            })
        })
        .collect();
    let converged = found.len();
    let mut sorted = found;
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let mut points: Vec<Point> = Vec::new();
    for z in sorted {
        let dup = points
            .iter()
            .rev()
            .take_while(|p| z.x - p.x <= tol)
            .any(|p| (p - z).norm() <= tol);
        if !dup {
            points.push(z);
        }
    }
    Ok(PeriodicResult {
        n,
        points,
        seeds_tried: starts.len(),
        seeds_converged: converged,
    })
}

/// `(M_n+, M_n-)`: monotone segments of the upper and lower boundary at
/// generation `n`. Each piece is cut at the images of critical points found
/// at earlier generations (the folds); markers found at generation `n`
/// itself are not cuts.
pub fn count_monotone_segments(ev: &BoundaryEvolution, n: usize) -> Result<(usize, usize)> {
    let g = ev.generations.get(n).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "generation {n} not available (have {})",
            ev.generations.len()
        ))
    })?;
    let count = |pieces: &[crate::curves::SampledCurve]| -> usize {
        pieces
            .iter()
            .map(|c| {
                1 + c
                    .markers
                    .iter()
                    .filter(|mk| marker_generation(&mk.label).is_some_and(|g| g < n))
                    .count()
            })
            .sum::<usize>()
            .max(1)
    };
    Ok((count(&g.upper), count(&g.lower)))
}

/// Generation encoded in a marker label of the form `+3.1`.
fn marker_generation(label: &str) -> Option<usize> {
    label.get(1..)?.split('.').next()?.parse().ok()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub n: usize,
    pub blocks: usize,
    pub fuzzy: usize,
    pub periodic: Option<usize>,
    pub m_plus: Option<usize>,
    pub m_minus: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// `(1/n) log count` at the largest `n` with a nonzero count.
    pub last: Option<f64>,
    /// Least-squares slope of `log count` against `n`.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    pub log_n: Vec<f64>,
    pub log_ntilde: Vec<f64>,
    pub log_p: Vec<Option<f64>>,
    pub log_m_plus: Vec<Option<f64>>,
    pub log_m_minus: Vec<Option<f64>>,
    pub blocks: EstimatorSummary,
    pub fuzzy: EstimatorSummary,
    pub periodic: EstimatorSummary,
    pub monotone: EstimatorSummary,
    /// Largest minus smallest of the available `last` estimates.
    pub spread: Option<f64>,
    pub sample_windows: usize,
    pub late_discovery_rate: f64,
}

fn norm_log(c: usize, n: usize) -> f64 {
    (c as f64).ln() / n as f64
}

fn summarize(points: &[(usize, usize)]) -> EstimatorSummary {
    let pos: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, c)| c > 0)
        .map(|&(n, c)| (n as f64, (c as f64).ln()))
        .collect();
    let last = points
        .iter()
        .rev()
        .find(|&&(_, c)| c > 0)
        .map(|&(n, c)| norm_log(c, n));
    let slope = if pos.len() >= 2 {
        let k = pos.len() as f64;
        let mx = pos.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pos.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pos.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pos.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    EstimatorSummary { last, slope }
}

/// Assemble the report. `N_n <= Ntilde_n` and `M_n+- <= Ntilde_n` are checked
/// exactly; a violation is an error.
pub fn entropy_report(rows: Vec<EntropyRow>, windows: usize, late_rate: f64) -> Result<EntropyReport> {
    for r in &rows {
        if r.blocks > r.fuzzy {
            return Err(Error::InequalityViolation(format!(
                "n = {}: N_n = {} exceeds fuzzy count {}",
                r.n, r.blocks, r.fuzzy
            )));
        }
        for (name, m) in [("M+", r.m_plus), ("M-", r.m_minus)] {
            if let Some(m) = m {
                if m > r.fuzzy {
                    return Err(Error::InequalityViolation(format!(
                        "n = {}: {name} = {m} exceeds fuzzy count {}",
                        r.n, r.fuzzy
                    )));
                }
            }
        }
    }
    let opt = |v: Option<usize>, n: usize| v.map(|c| norm_log(c, n));
    let blocks = summarize(&rows.iter().map(|r| (r.n, r.blocks)).collect::<Vec<_>>());
    let fuzzy = summarize(&rows.iter().map(|r| (r.n, r.fuzzy)).collect::<Vec<_>>());
    let periodic = summarize(
        &rows
            .iter()
            .filter_map(|r| r.periodic.map(|p| (r.n, p)))
            .collect::<Vec<_>>(),
    );
    let monotone = summarize(
        &rows
            .iter()
            .filter_map(|r| r.m_plus.zip(r.m_minus).map(|(a, b)| (r.n, a.max(b))))
            .collect::<Vec<_>>(),
    );
    let lasts: Vec<f64> = [blocks.last, periodic.last, monotone.last]
        .into_iter()
        .flatten()
        .filter(|v| v.is_finite())
        .collect();
    let spread = (!lasts.is_empty()).then(|| {
        lasts.iter().cloned().fold(f64::MIN, f64::max) - lasts.iter().cloned().fold(f64::MAX, f64::min)
    });
    Ok(EntropyReport {
        log_n: rows.iter().map(|r| norm_log(r.blocks, r.n)).collect(),
        log_ntilde: rows.iter().map(|r| norm_log(r.fuzzy, r.n)).collect(),
        log_p: rows.iter().map(|r| opt(r.periodic, r.n)).collect(),
        log_m_plus: rows.iter().map(|r| opt(r.m_plus, r.n)).collect(),
        log_m_minus: rows.iter().map(|r| opt(r.m_minus, r.n)).collect(),
        rows,
        blocks,
        fuzzy,
        periodic,
        monotone,
        spread,
        sample_windows: windows,
        late_discovery_rate: late_rate,
    })
}

impl EntropyReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "n,N,Ntilde,P,Mplus,Mminus,logN_n,logNtilde_n,logP_n,logMplus_n,logMminus_n"
        )?;
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let u = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.blocks,
                r.fuzzy,
                u(r.periodic),
                u(r.m_plus),
                u(r.m_minus),
                f(Some(self.log_n[i])),
                f(Some(self.log_ntilde[i])),
                f(self.log_p[i]),
                f(self.log_m_plus[i]),
                f(self.log_m_minus[i]),
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyOptions {
    pub samples: SampleSpec,
    /// Transient orbits started uniformly in the box, for the fuzzy count.
    pub box_seeds: usize,
    pub box_len: usize,
    /// Largest period searched; `0` skips periodic counting.
    pub periodic_max: usize,
    /// Largest boundary generation evolved for `M_n`; `0` skips it.
    pub monotone_max: usize,
    /// Node spacing for the boundary evolution behind `M_n`.
    pub boundary_h_max: f64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        EntropyOptions {
            samples: SampleSpec::default(),
            box_seeds: 20_000,
            box_len: 40,
            periodic_max: usize::MAX,
            monotone_max: usize::MAX,
            boundary_h_max: 1e-2,
        }
    }
}

/// All four counters for `n = 1..=n_max` and the assembled report.
pub fn entropy_estimates(
    m: &MapFamily,
    cfg: &SystemConfig,
    n_max: usize,
    opts: &EntropyOptions,
) -> Result<EntropyReport> {
    if n_max == 0 {
        return entropy_report(Vec::new(), 0, 0.0);
    }
    let h = match m.topology() {
        Topology::Interval => Some(build_hierarchy(m, cfg, cfg.kmax)?),
        Topology::Circle => None,
    };
    let coder = Coder::new(m, h.as_ref());
    let attractor = attractor_samples(m, &opts.samples);
    let whole = box_samples(m, opts.box_seeds, opts.box_len, opts.samples.seed ^ 0x5eed);
    let blocks = count_blocks(&coder, &attractor, n_max)?;
    let fuzzy = count_fuzzy(&coder, &attractor, &whole, n_max)?;
    let p_max = opts.periodic_max.min(n_max);
    let periodic: Vec<usize> = (1..=p_max)
        .map(|n| count_periodic(m, n, &PeriodicSeeds::for_period(n), None).map(|r| r.count()))
        .collect::<Result<_>>()?;
    let m_max = opts.monotone_max.min(n_max);
    let mut monotone = Vec::new();
    if m_max > 0 && m.topology() == Topology::Interval {
        let bopts = BoundaryOptions {
            refine: RefineOptions {
                h_max: opts.boundary_h_max,
                ..RefineOptions::default()
            },
            ..BoundaryOptions::default()
        };
        let ev = boundary_evolution(m, m_max, cfg, &bopts)?;
        for n in 1..=m_max {
            monotone.push(count_monotone_segments(&ev, n)?);
        }
    }
    let rows = (1..=n_max)
        .map(|n| EntropyRow {
            n,
            blocks: blocks.count(n),
            fuzzy: fuzzy.count(n),
            periodic: periodic.get(n - 1).copied(),
            m_plus: monotone.get(n - 1).map(|p| p.0),
            m_minus: monotone.get(n - 1).map(|p| p.1),
        })
        .collect();
    entropy_report(rows, blocks.windows, blocks.late_discovery_rate)
}
