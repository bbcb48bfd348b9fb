//! One-parameter scans in `a` at fixed `b`: a parameter survives while every
//! generation-0 critical orbit clears the start-up, recurrence and growth
//! conditions up to the horizon.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::critical::{build_hierarchy, ia_checks, CriticalHierarchy};
use crate::error::{Error, Result};
use crate::map::{MapFamily, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub a_range: [f64; 2],
    pub step: f64,
    pub b: f64,
    pub horizon: usize,
    pub cfg: SystemConfig,
    /// Number of early iterates that must stay clear of the critical region.
    pub n0: usize,
}

impl ScanSpec {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        let [lo, hi] = self.a_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!("bad a range [{lo}, {hi}]")));
        }
        if !(self.step > 0.0) && lo < hi {
            return Err(Error::InvalidConfig("step must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!("need 0 <= b < 1 (b = {})", self.b)));
        }
        if self.n0 < 1 {
            return Err(Error::InvalidConfig("n0 must be at least 1".into()));
        }
        if self.horizon != 0 && self.horizon < self.n0 {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is shorter than n0 {}",
                self.horizon, self.n0
            )));
        }
        Ok(())
    }

    /// Grid points `lo + k step` up to `hi` (with a small tolerance).
    pub fn grid(&self) -> Vec<f64> {
        let [lo, hi] = self.a_range;
        if lo == hi || self.step <= 0.0 {
            return vec![lo];
        }
        let n = ((hi - lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * self.step).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanStatus {
    Accepted,
    Deleted,
    Indeterminate,
}

impl ScanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanStatus::Accepted => "accepted",
            ScanStatus::Deleted => "deleted",
            ScanStatus::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub a: f64,
    pub status: ScanStatus,
    /// Earliest recurrence failure over the critical orbits.
    pub ia2_first_fail: Option<usize>,
    /// Earliest growth failure over the critical orbits.
    pub ia4_first_fail: Option<usize>,
    pub startup_ok: bool,
    pub critical_points: usize,
    pub reason: Option<String>,
}

impl ScanEntry {
    /// Deleted at horizon `n`, judged from the recorded first failures.
    pub fn deleted_by(&self, n: usize) -> bool {
        if self.status == ScanStatus::Indeterminate {
            return false;
        }
        if !self.startup_ok {
            return true;
        }
        [self.ia2_first_fail, self.ia4_first_fail]
            .iter()
            .flatten()
            .any(|&i| i <= n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeletionPoint {
    pub horizon: usize,
    pub deleted: usize,
    pub survivors: usize,
    pub deleted_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub b: f64,
    pub horizon: usize,
    pub accepted: Vec<f64>,
    pub per_a: Vec<ScanEntry>,
    pub deletion_curve: Vec<DeletionPoint>,
    pub accepted_fraction: f64,
    pub indeterminate: usize,
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    b: f64,
    horizon: usize,
    scanned: usize,
    accepted: usize,
    deleted: usize,
    indeterminate: usize,
    accepted_fraction: f64,
    accepted_values: &'a [f64],
    deletion_curve: &'a [DeletionPoint],
}

impl ScanReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "a,status,ia2_first_fail,ia4_first_fail")?;
        let opt = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
        for e in &self.per_a {
            writeln!(
                w,
                "{:.16e},{},{},{}",
                e.a,
                e.status.as_str(),
                opt(e.ia2_first_fail),
                opt(e.ia4_first_fail)
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let deleted = self
            .per_a
            .iter()
            .filter(|e| e.status == ScanStatus::Deleted)
            .count();
        let s = ScanSummary {
            b: self.b,
            horizon: self.horizon,
            scanned: self.per_a.len(),
            accepted: self.accepted.len(),
            deleted,
            indeterminate: self.indeterminate,
            accepted_fraction: self.accepted_fraction,
            accepted_values: &self.accepted,
            deletion_curve: &self.deletion_curve,
        };
        serde_json::to_string_pretty(&s).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Distance from `z` to the level-0 critical region (zero inside).
pub fn distance_to_c0(h: &CriticalHierarchy, z: &Point) -> f64 {
    h.levels
        .first()
        .into_iter()
        .flatten()
        .map(|c| (c.x_lo - z.x).max(z.x - c.x_hi).max(0.0))
        .fold(f64::INFINITY, f64::min)
}

/// Generation-0 critical points of the hierarchy.
pub fn generation_zero(h: &CriticalHierarchy) -> Vec<Point> {
    h.gamma
        .iter()
        .filter(|p| p.generation == 0)
        .map(|p| p.location)
        .collect()
}

fn indeterminate(a: f64, reason: String) -> ScanEntry {
    ScanEntry {
        a,
        status: ScanStatus::Indeterminate,
        ia2_first_fail: None,
        ia4_first_fail: None,
        startup_ok: false,
        critical_points: 0,
        reason: Some(reason),
    }
}

fn earliest(a: Option<usize>, b: Option<usize>) -> Option<usize> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Checks for a single parameter value.
pub fn scan_one(a: f64, spec: &ScanSpec) -> ScanEntry {
    let m = match MapFamily::henon(a, spec.b) {
        Ok(m) => m,
        Err(e) => return indeterminate(a, e.to_string()),
    };
    let h = match build_hierarchy(&m, &spec.cfg, spec.cfg.kmax) {
        Ok(h) => h,
        Err(e) => return indeterminate(a, e.to_string()),
    };
    let crit = generation_zero(&h);
    if crit.is_empty() {
        return indeterminate(a, "no generation-0 critical points".into());
    }
    let rect = m.trapping_box().rect;
    let mut startup_ok = true;
    for &z0 in &crit {
        let mut z = z0;
        for _ in 0..spec.n0 {
            z = m.eval(z);
            if !rect.contains(&z) || distance_to_c0(&h, &z) <= spec.cfg.delta / 2.0 {
                startup_ok = false;
                break;
            }
        }
    }
    let mut ia2 = None;
    let mut ia4 = None;
    if spec.horizon > 0 {
        for &z0 in &crit {
            match ia_checks(&m, z0, &spec.cfg, spec.horizon, &h) {
                Ok(r) => {
                    ia2 = earliest(ia2, r.ia2_first_fail);
                    ia4 = earliest(ia4, r.ia4_first_fail);
                }
                Err(e) => return indeterminate(a, e.to_string()),
            }
        }
    }
    let passed = startup_ok && ia2.is_none() && ia4.is_none();
    ScanEntry {
        a,
        status: if passed {
            ScanStatus::Accepted
        } else {
            ScanStatus::Deleted
        },
        ia2_first_fail: ia2,
        ia4_first_fail: ia4,
        startup_ok,
        critical_points: crit.len(),
        reason: None,
    }
}

/// Scan the `a` grid in parallel.
pub fn scan(spec: &ScanSpec) -> Result<ScanReport> {
    spec.validate()?;
    let grid = spec.grid();
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty parameter grid".into()));
    }
    let per_a: Vec<ScanEntry> = grid.par_iter().map(|&a| scan_one(a, spec)).collect();
    let accepted: Vec<f64> = per_a
        .iter()
        .filter(|e| e.status == ScanStatus::Accepted)
        .map(|e| e.a)
        .collect();
    let indeterminate = per_a
        .iter()
        .filter(|e| e.status == ScanStatus::Indeterminate)
        .count();
    let determinate = per_a.len() - indeterminate;
    let deletion_curve = (0..=spec.horizon)
        .map(|n| {
            let deleted = per_a.iter().filter(|e| e.deleted_by(n)).count();
            DeletionPoint {
                horizon: n,
                deleted,
                survivors: determinate - deleted,
                deleted_fraction: if determinate > 0 {
                    deleted as f64 / determinate as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    let accepted_fraction = if determinate > 0 {
        accepted.len() as f64 / determinate as f64
    } else {
        0.0
    };
    Ok(ScanReport {
        b: spec.b,
        horizon: spec.horizon,
        accepted,
        per_a,
        deletion_curve,
        accepted_fraction,
        indeterminate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lo: f64, hi: f64, step: f64, horizon: usize) -> ScanSpec {
        ScanSpec {
            a_range: [lo, hi],
            step,
            b: 1e-4,
            horizon,
            cfg: SystemConfig {
                kmax: 1,
                ..SystemConfig::default()
            },
            n0: 1,
        }
    }

    #[test]
    fn grid_includes_both_ends() {
        let g = spec(1.5, 1.6, 0.01, 5).grid();
        assert_eq!(g.len(), 11);
        assert!((g[10] - 1.6).abs() < 1e-12);
        assert_eq!(spec(1.7, 1.7, 0.1, 5).grid(), vec![1.7]);
    }

    #[test]
    fn validation() {
        assert!(spec(1.6, 1.5, 0.01, 5).validate().is_err());
        let mut s = spec(1.5, 1.6, 0.01, 5);
        s.n0 = 0;
        assert!(s.validate().is_err());
        s.n0 = 6;
        assert!(s.validate().is_err());
        s.horizon = 0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn zero_horizon_accepts_startup_survivors() {
        let r = scan(&spec(1.80, 1.95, 0.05, 0)).unwrap();
        for e in &r.per_a {
            if e.status != ScanStatus::Indeterminate {
                assert_eq!(e.status == ScanStatus::Accepted, e.startup_ok);
                assert!(e.ia2_first_fail.is_none() && e.ia4_first_fail.is_none());
            }
        }
    }

    #[test]
    fn deletion_curve_is_monotone_and_deterministic() {
        let s = spec(1.80, 1.95, 0.03, 12);
        let r = scan(&s).unwrap();
        for w in r.deletion_curve.windows(2) {
            assert!(w[1].deleted >= w[0].deleted);
        }
        assert_eq!(r, scan(&s).unwrap());
        let last = r.deletion_curve.last().unwrap();
        assert_eq!(last.survivors, r.accepted.len());
    }

    #[test]
    fn construction_failures_are_not_tallied() {
        // no fold inside the box, so no critical points to follow
        let r = scan(&spec(0.3, 0.3, 0.1, 10)).unwrap();
        assert_eq!(r.per_a[0].status, ScanStatus::Indeterminate);
        assert!(r.per_a[0].reason.is_some());
        assert_eq!(r.indeterminate, 1);
        assert!(r.deletion_curve.iter().all(|d| d.deleted == 0 && d.survivors == 0));
    }

    #[test]
    fn weak_expansion_is_deleted() {
        let r = scan(&spec(1.5, 1.5, 0.1, 10)).unwrap();
        assert_eq!(r.per_a[0].status, ScanStatus::Deleted);
        assert!(r.per_a[0].ia4_first_fail.is_some());
        assert!(r.accepted.is_empty());
    }

    #[test]
    fn csv_and_json() {
        let r = scan(&spec(1.9, 1.9, 0.1, 5)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a,status,ia2_first_fail,ia4_first_fail\n"));
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(&r.summary_json().unwrap()).unwrap();
        assert_eq!(v["scanned"], 1);
    }
}
