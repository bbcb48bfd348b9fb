//! Derivative splitting along orbits: each visit to the critical region splits
//! the tracked vector into a vertical part and a part along the most
//! contracted direction, which is carried separately and added back after the
//! fold period.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::contraction::{derivative_product, Vec2};
use crate::critical::{BindingInfo, CriticalHierarchy};
use crate::curves::cross;
use crate::error::{Error, Result};
use crate::map::{MapFamily, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub eps0: f64,
    /// Slope bound `K(delta) b` for b-horizontal vectors.
    pub b_horizontal_bound: f64,
    /// Cap on fold periods (reached only for points essentially on a midline).
    pub max_fold_period: usize,
}

impl SplitConfig {
    pub fn from_system(cfg: &SystemConfig, b: f64) -> Self {
        SplitConfig {
            eps0: cfg.eps0,
            b_horizontal_bound: cfg.k_delta() * b.abs(),
            max_fold_period: 64,
        }
    }
}

/// `l >= 1` with `b^{l/2}` nearest to `d_c` on a log scale.
pub fn fold_period(d_c: f64, b: f64) -> Result<usize> {
    if !(d_c > 0.0 && d_c <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fold period needs 0 < d_c <= 1, got {d_c}"
        )));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fold period needs 0 < b < 1, got {b}"
        )));
    }
    let l = (2.0 * d_c.ln() / b.ln()).round();
    Ok(if l < 1.0 { 1 } else { l as usize })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEvent {
    pub t: usize,
    pub ell: usize,
    /// Rejoin index, `t + ell` unless widened to keep intervals nested.
    pub end: usize,
    pub e_hat: Vec2,
    /// Angle between `w*_t` and `e_ell(z_t)`.
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepNote {
    Split { ell: usize },
    Rejoin { t: usize },
    AngleTooSmall { ell: usize, angle: f64, required: f64 },
    Fallback(String),
    Widened { t: usize, old_end: usize, new_end: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitStep {
    pub i: usize,
    pub z: Point,
    /// Raw `DT^i w0` and `w*_i`, both divided by `exp(log_scale)`.
    pub w: Vec2,
    pub w_star: Vec2,
    pub log_scale: f64,
    pub in_c0: bool,
    pub d_c: f64,
    pub fold_depth: usize,
    /// `|w* - w| / |w|` from the recursion before `w*` is reset to `w` on
    /// leaving the last open fold interval.
    pub rejoin_residual: Option<f64>,
    pub notes: Vec<StepNote>,
}

impl SplitStep {
    pub fn log_norm_ws(&self) -> f64 {
        self.w_star.norm().ln() + self.log_scale
    }

    pub fn log_norm_w(&self) -> f64 {
        self.w.norm().ln() + self.log_scale
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitTrace {
    pub steps: Vec<SplitStep>,
    pub folds: Vec<FoldEvent>,
    pub warnings: Vec<String>,
    /// Set when the orbit stopped early (non-finite values).
    pub stopped_at: Option<usize>,
}

impl SplitTrace {
    /// `log ||w*_i||`, or `-inf` past the end of the trace.
    pub fn log_norm_ws(&self, i: usize) -> f64 {
        self.steps
            .get(i)
            .map_or(f64::NEG_INFINITY, SplitStep::log_norm_ws)
    }

    pub fn fold_intervals(&self) -> Vec<(usize, usize)> {
        self.folds.iter().map(|f| (f.t, f.end)).collect()
    }

    pub fn in_fold_interval(&self, i: usize) -> bool {
        self.folds.iter().any(|f| f.t <= i && i <= f.end)
    }

    pub fn all_splits_passed(&self) -> bool {
        self.steps.iter().all(|s| {
            !s.notes
                .iter()
                .any(|n| matches!(n, StepNote::AngleTooSmall { .. } | StepNote::Fallback(_)))
        })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "i,x,y,wx,wy,wsx,wsy,log_norm_ws,in_C0,fold_depth")?;
        for s in &self.steps {
            let k = s.log_scale.exp();
            let (wx, wy, sx, sy) = if k.is_finite() {
                (s.w.x * k, s.w.y * k, s.w_star.x * k, s.w_star.y * k)
            } else {
                (s.w.x, s.w.y, s.w_star.x, s.w_star.y)
            };
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                s.i,
                s.z.x,
                s.z.y,
                wx,
                wy,
                sx,
                sy,
                s.log_norm_ws(),
                s.in_c0 as u8,
                s.fold_depth
            )?;
        }
        Ok(())
    }
}

struct Pending {
    t: usize,
    end: usize,
    e: Vec2,
}

const RESCALE_EXP: i32 = 512;

/// Track `w*_i` along the orbit of `z0` for `i = 0..=n`.
pub fn run_splitting(
    m: &MapFamily,
    z0: Point,
    w0: Vec2,
    n: usize,
    h: &CriticalHierarchy,
    cfg: &SplitConfig,
) -> Result<SplitTrace> {
    if !(w0.norm() > 0.0) || !w0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("w0 must be a nonzero finite vector".into()));
    }
    let b = m.b().abs();
    let big = 2f64.powi(RESCALE_EXP);
    let mut z = z0;
    let mut w = w0;
    let mut w_hat = w0;
    let mut log_scale = 0.0;
    let mut stack: Vec<Pending> = Vec::new();
    let mut steps = Vec::with_capacity(n + 1);
    let mut folds = Vec::new();
    let mut warnings = Vec::new();
    let mut stopped_at = None;

    for i in 0..=n {
        let mut notes = Vec::new();
        let mut w_star = w_hat;
        let mut rejoin_residual = None;
        if i > 0 {
            let mut rejoined = false;
            while stack.last().is_some_and(|p| p.end == i) {
                let p = stack.pop().unwrap();
                w_star += p.e;
                notes.push(StepNote::Rejoin { t: p.t });
                rejoined = true;
            }
            if rejoined && stack.is_empty() {
                let wn = w.norm();
                rejoin_residual = Some((w_star - w).norm() / wn);
            }
        }
        if stack.is_empty() {
            w_star = w;
        }
        let info: BindingInfo = h.distance_to_critical(&z);
        let mut w_next_hat = w_star;
        if info.in_c0() {
            let ell = if b == 0.0 {
                Ok(1)
            } else {
                fold_period(info.d_c.max(f64::MIN_POSITIVE), b.min(0.5))
            };
            match ell.map(|l| l.min(cfg.max_fold_period)) {
                Err(e) => notes.push(StepNote::Fallback(e.to_string())),
                Ok(ell) => match derivative_product(m, z, ell).contraction() {
                    Err(e) => {
                        notes.push(StepNote::Fallback(e.to_string()));
                        w_star = w;
                        w_next_hat = w;
                        stack.clear();
                    }
                    Ok(r) => {
                        let e = r.e;
                        let sin = (cross(&w_star, &e) / w_star.norm()).abs().min(1.0);
                        let angle = sin.asin();
                        let required = b.powf(ell as f64 / 2.0);
                        if angle < required || e.x == 0.0 {
                            notes.push(StepNote::AngleTooSmall {
                                ell,
                                angle,
                                required,
                            });
                        } else {
                            let beta = w_star.x / e.x;
                            let e_hat = e * beta;
                            w_next_hat = Vec2::new(0.0, w_star.y - e_hat.y);
                            let end = i + ell;
                            let mut required_end = end;
                            for p in stack.iter_mut().rev() {
                                if p.end < required_end {
                                    notes.push(StepNote::Widened {
                                        t: p.t,
                                        old_end: p.end,
                                        new_end: required_end,
                                    });
                                    warnings.push(format!(
                                        "step {i}: fold interval from {} widened to end at {required_end}",
                                        p.t
                                    ));
                                    if let Some(f) = folds.iter_mut().rev().find(|f: &&mut FoldEvent| f.t == p.t) {
                                        f.end = required_end;
                                    }
                                    p.end = required_end;
                                }
                                required_end = p.end;
                            }
                            stack.push(Pending { t: i, end, e: e_hat });
                            folds.push(FoldEvent {
                                t: i,
                                ell,
                                end,
                                e_hat,
                                angle,
                            });
                            notes.push(StepNote::Split { ell });
                        }
                    }
                },
            }
        }
        steps.push(SplitStep {
            i,
            z,
            w,
            w_star,
            log_scale,
            in_c0: info.in_c0(),
            d_c: info.d_c,
            fold_depth: stack.len(),
            rejoin_residual,
            notes,
        });
        if i == n {
            break;
        }
        let j = m.jacobian(z);
        w = j * w;
        w_hat = j * w_next_hat;
        for p in stack.iter_mut() {
            p.e = j * p.e;
        }
        z = m.eval(z);
        let scale = w.norm().max(w_hat.norm());
        if scale > big || (scale < 1.0 / big && scale > 0.0) {
            let k = if scale > big {
                2f64.powi(-RESCALE_EXP)
            } else {
                big
            };
            w *= k;
            w_hat *= k;
            for p in stack.iter_mut() {
                p.e *= k;
            }
            log_scale -= k.ln();
        }
        if !z.iter().all(|v| v.is_finite()) || !w.iter().all(|v| v.is_finite()) {
            stopped_at = Some(i + 1);
            warnings.push(format!("orbit became non-finite at step {}", i + 1));
            break;
        }
    }
    Ok(SplitTrace {
        steps,
        folds,
        warnings,
        stopped_at,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingCheck {
    pub ok: bool,
    /// `eps0 d_C(z) - |w/|w| - tau(phi(z))|`
    pub margin: f64,
    pub phi: Point,
    pub tau: Vec2,
    pub d_c: f64,
}

/// Correct-splitting test of `w` at `z` against the tangent of the boundary
/// curve at the binding point. With `require_h_related = false` any point in
/// the critical region with a binding point is accepted.
pub fn correct_splitting_check(
    w: Vec2,
    z: Point,
    h: &CriticalHierarchy,
    cfg: &SplitConfig,
    require_h_related: bool,
) -> Result<SplittingCheck> {
    let info = h.distance_to_critical(&z);
    if !info.in_c0() {
        return Err(Error::NotApplicable("point is outside the critical region".into()));
    }
    if require_h_related && !info.h_related {
        return Err(Error::NotApplicable("point is not h-related".into()));
    }
    let Some(idx) = info.phi_index else {
        return Err(Error::NotApplicable("no binding point at this depth".into()));
    };
    let cp = &h.gamma[idx];
    Ok(splitting_margin(w, cp.tangent, info.d_c, cfg.eps0, cp.location))
}

/// Margin of `w` against a given unit tangent `tau`, oriented along `w`.
pub fn splitting_margin(w: Vec2, tau: Vec2, d_c: f64, eps0: f64, phi: Point) -> SplittingCheck {
    let u = w / w.norm();
    let tau = if tau.dot(&u) < 0.0 { -tau } else { tau };
    let margin = eps0 * d_c - (u - tau).norm();
    SplittingCheck {
        ok: margin > 0.0,
        margin,
        phi,
        tau,
        d_c,
    }
}
