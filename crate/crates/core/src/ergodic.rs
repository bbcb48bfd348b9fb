//! Lyapunov exponents, Birkhoff averages, empirical SRB histograms and
//! decay of correlations.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::Vec2;
use crate::curves::SampledCurve;
use crate::error::{Error, Result};
use crate::map::{MapFamily, Point, Rect};

/// Compensated (Neumaier) sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub fn add(&mut self, v: f64) {
        let t = self.s + v;
        if !t.is_finite() {
            self.s = t;
            return;
        }
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    pub fn value(&self) -> f64 {
        if !self.s.is_finite() {
            return self.s;
        }
        self.s + self.c
    }
}

fn escape_err(index: usize, z: Point) -> Error {
    if z.iter().all(|v| v.is_finite()) {
        Error::Escape {
            index,
            x: z.x,
            y: z.y,
        }
    } else {
        Error::NonFinite { index }
    }
}

/// Iterates `T`, pushing the orbit off any point it maps exactly onto
/// itself. Rounding can land a chaotic orbit on a repelling fixed point
/// (the Chebyshev orbit reaches `x = -1` after about `10^7` steps); the
/// nudge is `1e-9` box diameters toward the box centre and deterministic.
struct Stepper<'a> {
    m: &'a MapFamily,
    centre: Point,
    kick: f64,
    nudges: usize,
}

impl<'a> Stepper<'a> {
    fn new(m: &'a MapFamily) -> Self {
        let r = m.trapping_box().rect;
        Stepper {
            m,
            centre: Point::new(0.5 * (r.x_lo + r.x_hi), 0.5 * (r.y_lo + r.y_hi)),
            kick: 1e-9 * r.diameter(),
            nudges: 0,
        }
    }

    fn step(&mut self, z: Point) -> Point {
        let w = self.m.eval(z);
        if w != z {
            return w;
        }
        self.nudges += 1;
        let d = self.centre - w;
        let n = d.norm();
        if n > 0.0 {
            w + d * (self.kick / n)
        } else {
            w + Point::new(self.kick, 0.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lyapunov {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Iterates averaged over (after burn-in).
    pub steps: usize,
    /// Fresh seeds drawn after escapes (restarted estimator only).
    pub restarts: usize,
}

struct LyapAcc {
    top: Sum,
    det: Sum,
    steps: usize,
}

impl LyapAcc {
    fn new() -> Self {
        LyapAcc {
            top: Sum::default(),
            det: Sum::default(),
            steps: 0,
        }
    }

    fn finish(&self, restarts: usize) -> Lyapunov {
        let n = self.steps as f64;
        let l1 = self.top.value() / n;
        let sum_det = self.det.value() / n;
        Lyapunov {
            lambda1: l1,
            lambda2: sum_det - l1,
            steps: self.steps,
            restarts,
        }
    }
}

/// Run `n` steps from `z`, accumulating; returns the index at which the orbit
/// left `rect`, if it did.
fn lyap_run(
    m: &MapFamily,
    st: &mut Stepper,
    z: &mut Point,
    v: &mut Vec2,
    n: usize,
    rect: &Rect,
    acc: &mut LyapAcc,
) -> Option<usize> {
    for i in 0..n {
        let j = m.jacobian(*z);
        let w = j * *v;
        let norm = w.norm();
        acc.top.add(norm.ln());
        acc.det.add(j.determinant().abs().ln());
        acc.steps += 1;
        *v = w / norm;
        *z = st.step(*z);
        if !rect.contains(z) {
            return Some(i + 1);
        }
    }
    None
}

/// `(lambda1, lambda2)` along the orbit of `z0`: the top exponent from the
/// growth of a renormalized tangent vector, the second from
/// `(1/n) sum log|det DT| - lambda1`.
pub fn lyapunov_exponent(m: &MapFamily, z0: Point, n: usize, burn_in: usize) -> Result<Lyapunov> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one iterate".into()));
    }
    let rect = m.trapping_box().rect;
    let mut z = z0;
    for i in 0..burn_in {
        z = m.eval(z);
        if !rect.contains(&z) {
            return Err(escape_err(i + 1, z));
        }
    }
    let mut v = Vec2::new(1.0, 0.0);
    // align the tangent vector with the unstable direction before averaging
    for _ in 0..burn_in.min(64) {
        v = m.jacobian(z) * v;
        v /= v.norm();
        z = m.eval(z);
        if !rect.contains(&z) {
            return Err(escape_err(burn_in, z));
        }
    }
    let mut acc = LyapAcc::new();
    let mut st = Stepper::new(m);
    if let Some(k) = lyap_run(m, &mut st, &mut z, &mut v, n, &rect, &mut acc) {
        return Err(escape_err(burn_in + k, z));
    }
    Ok(acc.finish(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSpec {
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub max_restarts: usize,
}

/// Lyapunov exponents accumulated over transient orbits: whenever the orbit
/// leaves the working box a new random seed is drawn and burned in. Used
/// where the map has no trapping region.
pub fn lyapunov_restarted(m: &MapFamily, spec: &RestartSpec) -> Result<Lyapunov> {
    let rect = m.trapping_box().rect;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut acc = LyapAcc::new();
    let mut restarts = 0;
    while acc.steps < spec.n {
        if restarts > spec.max_restarts {
            return Err(Error::NoTrappingRegion(format!(
                "{restarts} restarts used after {} steps",
                acc.steps
            )));
        }
        let mut z = Point::new(
            rng.gen_range(rect.x_lo..=rect.x_hi),
            rng.gen_range(rect.y_lo..=rect.y_hi),
        );
        let mut v = Vec2::new(1.0, 0.0);
        let mut ok = true;
        for _ in 0..spec.burn_in {
            v = m.jacobian(z) * v;
            v /= v.norm();
            z = m.eval(z);
            if !rect.contains(&z) {
                ok = false;
                break;
            }
        }
        if ok {
            let remaining = spec.n - acc.steps;
            let mut st = Stepper::new(m);
            if lyap_run(m, &mut st, &mut z, &mut v, remaining, &rect, &mut acc).is_none() {
                break;
            }
        }
        restarts += 1;
    }
    Ok(acc.finish(restarts))
}

/// Time average of `phi` over `n` iterates after `burn_in`.
pub fn birkhoff_average<F: Fn(Point) -> f64>(
    m: &MapFamily,
    phi: F,
    z0: Point,
    n: usize,
    burn_in: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one iterate".into()));
    }
    let rect = m.trapping_box().rect;
    let mut z = z0;
    for i in 0..burn_in {
        z = m.eval(z);
        if !rect.contains(&z) {
            return Err(escape_err(i + 1, z));
        }
    }
    let mut s = Sum::default();
    let mut st = Stepper::new(m);
    for i in 0..n {
        s.add(phi(z));
        z = st.step(z);
        if i + 1 < n && !rect.contains(&z) {
            return Err(escape_err(burn_in + i + 1, z));
        }
    }
    Ok(s.value() / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistogramSource {
    Pushforward,
    Birkhoff,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SrbHistogram {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    /// Row-major in `y`, `mass[iy * nx + ix]`; sums to one.
    pub mass: Vec<f64>,
    pub source: HistogramSource,
    pub dropped_fraction: f64,
    pub warnings: Vec<String>,
}

struct Binner {
    rect: Rect,
    nx: usize,
    ny: usize,
}

impl Binner {
    fn index(&self, z: &Point) -> Option<usize> {
        if !self.rect.contains(z) {
            return None;
        }
        let fx = (z.x - self.rect.x_lo) / self.rect.width();
        let fy = if self.rect.height() > 0.0 {
            (z.y - self.rect.y_lo) / self.rect.height()
        } else {
            0.0
        };
        let ix = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let iy = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        Some(iy * self.nx + ix)
    }
}

impl SrbHistogram {
    fn from_counts(
        rect: Rect,
        nx: usize,
        ny: usize,
        counts: Vec<u64>,
        source: HistogramSource,
        dropped_fraction: f64,
    ) -> Self {
        let total: u64 = counts.iter().sum();
        let mass = if total > 0 {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        } else {
            vec![0.0; counts.len()]
        };
        let mut warnings = Vec::new();
        if dropped_fraction > 1e-3 {
            warnings.push(format!(
                "{:.3}% of the mass left the working box",
                100.0 * dropped_fraction
            ));
        }
        SrbHistogram {
            rect,
            nx,
            ny,
            mass,
            source,
            dropped_fraction,
            warnings,
        }
    }

    pub fn total_mass(&self) -> f64 {
        let mut s = Sum::default();
        self.mass.iter().for_each(|&v| s.add(v));
        s.value()
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|ix| (0..self.ny).map(|iy| self.mass[iy * self.nx + ix]).sum())
            .collect()
    }

    /// Left edges of the `x` bins and the bin width.
    pub fn x_edges(&self) -> (Vec<f64>, f64) {
        let w = self.rect.width() / self.nx as f64;
        ((0..=self.nx).map(|i| self.rect.x_lo + w * i as f64).collect(), w)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "bin_x,bin_y,mass")?;
        let dx = self.rect.width() / self.nx as f64;
        let dy = self.rect.height() / self.ny as f64;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e}",
                    self.rect.x_lo + dx * (ix as f64 + 0.5),
                    self.rect.y_lo + dy * (iy as f64 + 0.5),
                    self.mass[iy * self.nx + ix]
                )?;
            }
        }
        Ok(())
    }
}

/// Half the L1 distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Points equally spaced in arclength along a polyline (cell midpoints).
pub fn arclength_particles(c: &SampledCurve, count: usize) -> Vec<Point> {
    if c.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut cum = vec![0.0];
    for w in c.points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return vec![c.points[0]; count];
    }
    let mut k = 1;
    (0..count)
        .map(|i| {
            let s = total * (i as f64 + 0.5) / count as f64;
            while k + 1 < cum.len() && cum[k] < s {
                k += 1;
            }
            let seg = cum[k] - cum[k - 1];
            let t = if seg > 0.0 { (s - cum[k - 1]) / seg } else { 0.0 };
            c.points[k - 1] + (c.points[k] - c.points[k - 1]) * t
        })
        .collect()
}

/// Cesaro average over steps `1..=n_steps` of the push-forwards of arclength
/// on `segment`; `n_steps = 0` bins the segment itself.
pub fn srb_pushforward(
    m: &MapFamily,
    segment: &SampledCurve,
    particles: usize,
    n_steps: usize,
    grid: (usize, usize),
) -> Result<SrbHistogram> {
    let (nx, ny) = grid;
    if nx == 0 || ny == 0 || particles == 0 {
        return Err(Error::InvalidArgument("grid and particle count must be positive".into()));
    }
    let rect = m.trapping_box().rect;
    let binner = Binner { rect, nx, ny };
    let pts = arclength_particles(segment, particles);
    let chunk = 4096;
    let (counts, dropped) = pts
        .par_chunks(chunk)
        .map(|ps| {
            let mut counts = vec![0u64; nx * ny];
            let mut dropped = 0usize;
            for &p0 in ps {
                let mut z = p0;
                if n_steps == 0 {
                    match binner.index(&z) {
                        Some(k) => counts[k] += 1,
                        None => dropped += 1,
                    }
                    continue;
                }
                for _ in 0..n_steps {
                    z = m.eval(z);
                    match binner.index(&z) {
                        Some(k) => counts[k] += 1,
                        None => {
                            dropped += 1;
                            break;
                        }
                    }
                }
            }
            (counts, dropped)
        })
        .reduce(
            || (vec![0u64; nx * ny], 0),
            |(mut a, da), (b, db)| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                (a, da + db)
            },
        );
    Ok(SrbHistogram::from_counts(
        rect,
        nx,
        ny,
        counts,
        HistogramSource::Pushforward,
        dropped as f64 / particles as f64,
    ))
}

/// Histogram of one long orbit after burn-in.
pub fn srb_birkhoff(
    m: &MapFamily,
    z0: Point,
    n: usize,
    burn_in: usize,
    grid: (usize, usize),
) -> Result<SrbHistogram> {
    let (nx, ny) = grid;
    if nx == 0 || ny == 0 || n == 0 {
        return Err(Error::InvalidArgument("grid and orbit length must be positive".into()));
    }
    let rect = m.trapping_box().rect;
    let binner = Binner { rect, nx, ny };
    let mut z = z0;
    for i in 0..burn_in {
        z = m.eval(z);
        if !rect.contains(&z) {
            return Err(escape_err(i + 1, z));
        }
    }
    let mut counts = vec![0u64; nx * ny];
    let mut st = Stepper::new(m);
    for i in 0..n {
        match binner.index(&z) {
            Some(k) => counts[k] += 1,
            None => return Err(escape_err(burn_in + i, z)),
        }
        z = st.step(z);
    }
    let mut h = SrbHistogram::from_counts(rect, nx, ny, counts, HistogramSource::Birkhoff, 0.0);
    if st.nudges > 0 {
        h.warnings
            .push(format!("orbit pushed off an exact fixed point {} times", st.nudges));
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    pub burn_in: usize,
    /// Noise floor is `floor_factor / sqrt(n_samples)`.
    pub floor_factor: f64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        CorrelationOptions {
            burn_in: 10_000,
            floor_factor: 5.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationFit {
    /// `0..=lag_max`
    pub lags: Vec<usize>,
    pub c: Vec<f64>,
    pub floor: f64,
    /// Lags with `|C| > floor` used in the fit (lag 0 excluded).
    pub fitted_lags: Vec<usize>,
    pub lambda_fit: f64,
    pub k_fit: f64,
    pub r2: f64,
}

impl CorrelationFit {
    pub fn fitted(&self, lag: usize) -> f64 {
        self.k_fit * self.lambda_fit.powi(lag as i32)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "lag,C,fitted")?;
        for (&l, &c) in self.lags.iter().zip(&self.c) {
            let f = if self.lambda_fit.is_finite() {
                format!("{:.16e}", self.fitted(l))
            } else {
                String::new()
            };
            writeln!(w, "{l},{c:.16e},{f}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariances {
    /// `c[l]` for `l = 0..=lag_max`.
    pub c: Vec<f64>,
    /// Times the orbit was pushed off an exact fixed point.
    pub nudges: usize,
}

/// Empirical covariances `C(l)` of `phi(z_{i+l})` and `psi(z_i)` along one
/// orbit, centred on the orbit means, for `l = 0..=lag_max`.
pub fn autocovariance<F, G>(
    m: &MapFamily,
    phi: F,
    psi: G,
    z0: Point,
    n_samples: usize,
    lag_max: usize,
    burn_in: usize,
) -> Result<Covariances>
where
    F: Fn(Point) -> f64,
    G: Fn(Point) -> f64,
{
    if n_samples <= lag_max {
        return Err(Error::InvalidArgument("need more samples than lags".into()));
    }
    let rect = m.trapping_box().rect;
    let mut start = z0;
    for i in 0..burn_in {
        start = m.eval(start);
        if !rect.contains(&start) {
            return Err(escape_err(i + 1, start));
        }
    }
    // means as shifts from the first value, so constants centre to zero exactly
    let (phi0, psi0) = (phi(start), psi(start));
    let (mut sp, mut sq) = (Sum::default(), Sum::default());
    let mut z = start;
    let mut st = Stepper::new(m);
    for i in 0..n_samples {
        sp.add(phi(z) - phi0);
        sq.add(psi(z) - psi0);
        z = st.step(z);
        if i + 1 < n_samples && !rect.contains(&z) {
            return Err(escape_err(burn_in + i + 1, z));
        }
    }
    let mp = sp.value() / n_samples as f64;
    let mq = sq.value() / n_samples as f64;
    let mut sums = vec![Sum::default(); lag_max + 1];
    let mut past: VecDeque<f64> = VecDeque::with_capacity(lag_max + 1);
    let nudges = st.nudges;
    let mut st = Stepper::new(m);
    let mut z = start;
    for _ in 0..n_samples {
        let p = (phi(z) - phi0) - mp;
        let q = (psi(z) - psi0) - mq;
        past.push_front(q);
        if past.len() > lag_max + 1 {
            past.pop_back();
        }
        for (l, &qq) in past.iter().enumerate() {
            sums[l].add(p * qq);
        }
        z = st.step(z);
    }
    Ok(Covariances {
        c: sums
            .iter()
            .enumerate()
            .map(|(l, s)| s.value() / (n_samples - l) as f64)
            .collect(),
        nudges,
    })
}

/// Weighted fit of `log |C(l)| = log K + l log lambda` over lags `l >= 1`
/// where `|C(l)|` exceeds the noise floor. Weights are `C(l)^2`.
pub fn fit_decay(c: &[f64], floor: f64) -> Result<CorrelationFit> {
    let used: Vec<usize> = (1..c.len()).filter(|&l| c[l].abs() > floor).collect();
    let lags: Vec<usize> = (0..c.len()).collect();
    if used.is_empty() {
        return Err(Error::AllBelowFloor { floor });
    }
    let pts: Vec<(f64, f64, f64)> = used
        .iter()
        .map(|&l| (l as f64, c[l].abs().ln(), c[l] * c[l]))
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| p.2 * (p.1 - my).powi(2)).sum();
    let (slope, r2) = if pts.len() >= 2 && sxx > 0.0 {
        let slope = sxy / sxx;
        let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
        (slope, r2)
    } else {
        (f64::NAN, f64::NAN)
    };
    let intercept = my - slope * mx;
    Ok(CorrelationFit {
        lags,
        c: c.to_vec(),
        floor,
        fitted_lags: used,
        lambda_fit: slope.exp(),
        k_fit: intercept.exp(),
        r2,
    })
}

/// Autocovariance along one long orbit and an exponential fit to its
/// above-floor part.
#[allow(clippy::too_many_arguments)]
pub fn correlation_fit<F, G>(
    m: &MapFamily,
    phi: F,
    psi: G,
    z0: Point,
    n_samples: usize,
    lag_max: usize,
    opts: &CorrelationOptions,
) -> Result<CorrelationFit>
where
    F: Fn(Point) -> f64,
    G: Fn(Point) -> f64,
{
    let cov = autocovariance(m, phi, psi, z0, n_samples, lag_max, opts.burn_in)?;
    let floor = opts.floor_factor / (n_samples as f64).sqrt();
    fit_decay(&cov.c, floor)
}
