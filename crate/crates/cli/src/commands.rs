use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use attractor_forge::critical::build_hierarchy;
use attractor_forge::curves::{boundary_evolution, write_curves_csv, BoundaryOptions, RefineOptions, SampledCurve};
use attractor_forge::ergodic::{
    correlation_fit, lyapunov_exponent, lyapunov_restarted, srb_birkhoff, srb_pushforward,
    CorrelationOptions, Lyapunov, RestartSpec,
};
use attractor_forge::map::Topology;
use attractor_forge::paramscan::{scan, ScanSpec};
use attractor_forge::symbolic::{entropy_estimates, Coder};
use attractor_forge::{iterate_orbit, Error, MapFamily, Point, Result};
use serde::Serialize;
use serde_json::json;

use crate::run_config::{Estimator, RunConfig, SrbMethod};

/// Collects the files a command writes.
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Self {
        Outputs {
            dir,
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let f = File::create(self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

pub fn orbit(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let o = &cfg.orbit;
    let pts = iterate_orbit(m, Point::new(o.x0, o.y0), o.n)?;
    let mut w = out.create("orbit.csv")?;
    writeln!(w, "i,x,y")?;
    for (i, p) in pts.iter().enumerate() {
        writeln!(w, "{i},{:.16e},{:.16e}", p.x, p.y)?;
    }
    finish(w)
}

pub fn boundary(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let opts = BoundaryOptions {
        refine: RefineOptions {
            h_max: cfg.boundary.h_max,
            ..RefineOptions::default()
        },
        markers: cfg.boundary.markers,
        ..BoundaryOptions::default()
    };
    let ev = boundary_evolution(m, cfg.boundary.n, &cfg.system, &opts)?;
    let mut gens = Vec::new();
    for g in &ev.generations {
        let curves: Vec<SampledCurve> = [&g.upper, &g.lower, &g.right, &g.left]
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        let mut w = out.create(&format!("boundary_{}.csv", g.n))?;
        write_curves_csv(&mut w, &curves)?;
        finish(w)?;
        let (upper, lower) = g.marker_counts();
        gens.push(json!({
            "n": g.n,
            "pieces": curves.len(),
            "nodes": curves.iter().map(|c| c.len()).sum::<usize>(),
            "clipped": g.clipped(),
            "area": g.area(),
            "markers_upper": upper,
            "markers_lower": lower,
        }));
    }
    out.warnings.extend(ev.log.iter().cloned());
    out.json("boundary.json", &json!({ "generations": gens, "log": ev.log }))
}

pub fn critical(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let h = build_hierarchy(m, &cfg.system, cfg.system.kmax)?;
    out.json("hierarchy.json", &h.summary())
}

pub fn code(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let o = &cfg.code;
    if o.n == 0 {
        return Err(Error::InvalidArgument("itinerary length must be at least 1".into()));
    }
    let h = match m.topology() {
        Topology::Interval => Some(build_hierarchy(m, &cfg.system, cfg.system.kmax)?),
        Topology::Circle => None,
    };
    let coder = Coder::new(m, h.as_ref());
    let z0 = Point::new(o.x0, o.y0);
    let it = coder.itinerary(z0, o.n)?;
    let pts = iterate_orbit(m, z0, o.n - 1)?;
    let mut alt = it.ambiguous.iter().peekable();
    let mut w = out.create("itinerary.csv")?;
    writeln!(w, "i,x,y,symbol,alternative")?;
    for (i, (p, s)) in pts.iter().zip(&it.symbols).enumerate() {
        let a = match alt.peek() {
            Some(&&(j, l)) if j == i => {
                alt.next();
                l.to_string()
            }
            _ => String::new(),
        };
        writeln!(w, "{i},{:.16e},{:.16e},{s},{a}", p.x, p.y)?;
    }
    finish(w)
}

pub fn entropy(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let mut opts = cfg.entropy.options.clone();
    opts.samples.seed = cfg.seed;
    let report = entropy_estimates(m, &cfg.system, cfg.entropy.n_max, &opts)?;
    let mut w = out.create("entropy_report.csv")?;
    report.write_csv(&mut w)?;
    finish(w)?;
    out.json("entropy_report.json", &report)
}

pub fn lyapunov(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let l = &cfg.lyapunov;
    let restarted = || {
        lyapunov_restarted(
            m,
            &RestartSpec {
                n: l.n,
                burn_in: l.burn_in,
                seed: cfg.seed,
                max_restarts: l.max_restarts,
            },
        )
    };
    let single = || lyapunov_exponent(m, Point::new(l.x0, l.y0), l.n, l.burn_in);
    let (used, res): (&str, Lyapunov) = match l.estimator {
        Estimator::Single => ("single", single()?),
        Estimator::Restarted => ("restarted", restarted()?),
        Estimator::Auto => match single() {
            Ok(r) => ("single", r),
            Err(e @ (Error::Escape { .. } | Error::NonFinite { .. })) => {
                out.warnings.push(format!("single orbit failed ({e}); using restarts"));
                ("restarted", restarted()?)
            }
            Err(e) => return Err(e),
        },
    };
    out.json(
        "lyapunov.json",
        &json!({
            "estimator": used,
            "lambda1": res.lambda1,
            "lambda2": res.lambda2,
            "steps": res.steps,
            "restarts": res.restarts,
            "sum_check": res.lambda1 + res.lambda2 - m.b().abs().ln(),
        }),
    )
}

pub fn srb(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let s = &cfg.srb;
    let grid = (s.nx, s.ny);
    let hist = match s.method {
        SrbMethod::Pushforward => {
            let [x0, y0, x1, y1] = s.segment.unwrap_or_else(|| {
                let r = m.trapping_box().rect;
                let y = 0.5 * (r.y_lo + r.y_hi);
                [r.x_lo, y, r.x_hi, y]
            });
            let seg = SampledCurve::segment(Point::new(x0, y0), Point::new(x1, y1), &RefineOptions::default())?;
            srb_pushforward(m, &seg, s.particles, s.steps, grid)?
        }
        SrbMethod::Birkhoff => srb_birkhoff(m, Point::new(s.x0, s.y0), s.n, s.burn_in, grid)?,
    };
    out.warnings.extend(hist.warnings.iter().cloned());
    let mut w = out.create("srb_histogram.csv")?;
    hist.write_csv(&mut w)?;
    finish(w)?;
    let (edges, _) = hist.x_edges();
    out.json(
        "srb.json",
        &json!({
            "source": hist.source,
            "rect": hist.rect,
            "nx": hist.nx,
            "ny": hist.ny,
            "dropped_fraction": hist.dropped_fraction,
            "x_edges": edges,
            "x_marginal": hist.x_marginal(),
            "warnings": hist.warnings,
        }),
    )
}

pub fn correlation(cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
    let c = &cfg.correlation;
    let opts = CorrelationOptions {
        burn_in: c.burn_in,
        floor_factor: c.floor_factor,
    };
    let (phi, psi) = (c.phi, c.psi);
    let fit = correlation_fit(
        m,
        |z| phi.eval(z),
        |z| psi.eval(z),
        Point::new(c.x0, c.y0),
        c.n_samples,
        c.lag_max,
        &opts,
    )?;
    let mut w = out.create("correlation.csv")?;
    fit.write_csv(&mut w)?;
    finish(w)?;
    out.json("correlation.json", &fit)
}

pub fn scan_cmd(cfg: &RunConfig, _m: &MapFamily, out: &mut Outputs) -> Result<()> {
    if cfg.family.name != "henon" {
        return Err(Error::Unsupported("parameter scans run on the henon family".into()));
    }
    let s = &cfg.scan;
    let spec = ScanSpec {
        a_range: [s.a_min, s.a_max],
        step: s.step,
        b: cfg.family.b,
        horizon: s.horizon,
        cfg: cfg.system.clone(),
        n0: s.n0,
    };
    let report = scan(&spec)?;
    let mut w = out.create("scan_report.csv")?;
    report.write_csv(&mut w)?;
    finish(w)?;
    let mut w = out.create("scan_summary.json")?;
    writeln!(w, "{}", report.summary_json()?)?;
    finish(w)
}
