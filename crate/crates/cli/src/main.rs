//! `attractor-forge`: batch analyses of Hénon-like maps writing CSV and JSON.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use attractor_forge::{MapFamily, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use commands::Outputs;
use run_config::{Estimator, Observable, RunConfig, SrbMethod};

const THREADS_ENV: &str = "ATTRACTOR_FORGE_THREADS";

#[derive(Parser)]
#[command(name = "attractor-forge", version, about = "Analyses of Hénon-like maps")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Map family: henon, perturbed or circle.
    #[arg(long, global = true)]
    family: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    b: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    amplitude: Option<f64>,
    #[arg(long, global = true)]
    mu_star: Option<u32>,
    #[arg(long, global = true)]
    kmax: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to ATTRACTOR_FORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct Start {
    #[arg(long, allow_negative_numbers = true)]
    x0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    y0: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate one orbit.
    Orbit {
        #[command(flatten)]
        start: Start,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evolve the boundary of the trapping box.
    Boundary {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        h_max: Option<f64>,
    },
    /// Build the critical hierarchy and dump it as JSON.
    Critical,
    /// Symbolic itinerary of one orbit.
    Code {
        #[command(flatten)]
        start: Start,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Entropy estimates for block lengths 1..=nmax.
    Entropy {
        #[arg(long)]
        nmax: Option<usize>,
        #[arg(long)]
        periodic_max: Option<usize>,
        #[arg(long)]
        monotone_max: Option<usize>,
    },
    /// Lyapunov exponents.
    Lyapunov {
        #[command(flatten)]
        start: Start,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, value_enum)]
        estimator: Option<Estimator>,
    },
    /// Histogram of the physical measure.
    Srb {
        #[arg(long, value_enum)]
        method: Option<SrbMethod>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        start: Start,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Autocorrelation and its exponential fit.
    Correlation {
        #[command(flatten)]
        start: Start,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        lag_max: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, value_enum)]
        phi: Option<Observable>,
        #[arg(long, value_enum)]
        psi: Option<Observable>,
    },
    /// Parameter exclusion scan over a.
    Scan {
        #[arg(long, allow_negative_numbers = true)]
        a_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        a_max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        n0: Option<usize>,
    },
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Orbit { .. } => "orbit",
            Command::Boundary { .. } => "boundary",
            Command::Critical => "critical",
            Command::Code { .. } => "code",
            Command::Entropy { .. } => "entropy",
            Command::Lyapunov { .. } => "lyapunov",
            Command::Srb { .. } => "srb",
            Command::Correlation { .. } => "correlation",
            Command::Scan { .. } => "scan",
        }
    }

    fn apply(&self, c: &mut RunConfig) {
        match self {
            Command::Orbit { start, n } => {
                set(&mut c.orbit.x0, start.x0);
                set(&mut c.orbit.y0, start.y0);
                set(&mut c.orbit.n, *n);
            }
            Command::Boundary { n, h_max } => {
                set(&mut c.boundary.n, *n);
                set(&mut c.boundary.h_max, *h_max);
            }
            Command::Critical => {}
            Command::Code { start, n } => {
                set(&mut c.code.x0, start.x0);
                set(&mut c.code.y0, start.y0);
                set(&mut c.code.n, *n);
            }
            Command::Entropy { nmax, periodic_max, monotone_max } => {
                set(&mut c.entropy.n_max, *nmax);
                set(&mut c.entropy.options.periodic_max, *periodic_max);
                set(&mut c.entropy.options.monotone_max, *monotone_max);
            }
            Command::Lyapunov { start, n, burn_in, estimator } => {
                let l = &mut c.lyapunov;
                set(&mut l.x0, start.x0);
                set(&mut l.y0, start.y0);
                set(&mut l.n, *n);
                set(&mut l.burn_in, *burn_in);
                set(&mut l.estimator, *estimator);
            }
            Command::Srb { method, nx, ny, particles, steps, start, n, burn_in } => {
                let s = &mut c.srb;
                set(&mut s.method, *method);
                set(&mut s.nx, *nx);
                set(&mut s.ny, *ny);
                set(&mut s.particles, *particles);
                set(&mut s.steps, *steps);
                set(&mut s.x0, start.x0);
                set(&mut s.y0, start.y0);
                set(&mut s.n, *n);
                set(&mut s.burn_in, *burn_in);
            }
            Command::Correlation { start, n, lag_max, burn_in, phi, psi } => {
                let r = &mut c.correlation;
                set(&mut r.x0, start.x0);
                set(&mut r.y0, start.y0);
                set(&mut r.n_samples, *n);
                set(&mut r.lag_max, *lag_max);
                set(&mut r.burn_in, *burn_in);
                set(&mut r.phi, *phi);
                set(&mut r.psi, *psi);
            }
            Command::Scan { a_min, a_max, step, horizon, n0 } => {
                let s = &mut c.scan;
                set(&mut s.a_min, *a_min);
                set(&mut s.a_max, *a_max);
                set(&mut s.step, *step);
                set(&mut s.horizon, *horizon);
                set(&mut s.n0, *n0);
            }
        }
    }

    fn run(&self, cfg: &RunConfig, m: &MapFamily, out: &mut Outputs) -> Result<()> {
        match self {
            Command::Orbit { .. } => commands::orbit(cfg, m, out),
            Command::Boundary { .. } => commands::boundary(cfg, m, out),
            Command::Critical => commands::critical(cfg, m, out),
            Command::Code { .. } => commands::code(cfg, m, out),
            Command::Entropy { .. } => commands::entropy(cfg, m, out),
            Command::Lyapunov { .. } => commands::lyapunov(cfg, m, out),
            Command::Srb { .. } => commands::srb(cfg, m, out),
            Command::Correlation { .. } => commands::correlation(cfg, m, out),
            Command::Scan { .. } => commands::scan_cmd(cfg, m, out),
        }
    }
}

fn resolve(common: &Common, cmd: &Command) -> std::result::Result<(RunConfig, MapFamily), String> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            run_config::parse(&text)?
        }
        None => RunConfig::default(),
    };
    set(&mut cfg.output_dir, common.out.clone());
    set(&mut cfg.family.name, common.family.clone());
    set(&mut cfg.family.a, common.a);
    set(&mut cfg.family.b, common.b);
    set(&mut cfg.family.kappa, common.kappa);
    set(&mut cfg.family.amplitude, common.amplitude);
    if let Some(mu) = common.mu_star {
        cfg.system = cfg.system.clone().with_mu_star(mu);
    }
    set(&mut cfg.system.kmax, common.kmax);
    set(&mut cfg.seed, common.seed);
    if common.threads.is_some() {
        cfg.threads = common.threads;
    } else if cfg.threads.is_none() {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            let n = v
                .trim()
                .parse()
                .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
            cfg.threads = Some(n);
        }
    }
    cmd.apply(&mut cfg);
    let m = cfg.validate()?;
    Ok((cfg, m))
}

fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(&cfg.canonical()).expect("config serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn error_kind(e: &attractor_forge::Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.common;
    let cmd = cli.command;
    let name = cmd.name();

    let (cfg, m) = match resolve(&common, &cmd) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("{}", json!({ "command": name, "kind": "config", "message": msg }));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "command": name, "kind": "config", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cfg.output_dir) {
        let msg = format!("cannot create {}: {e}", cfg.output_dir.display());
        eprintln!("{}", json!({ "command": name, "kind": "config", "message": msg }));
        return ExitCode::from(2);
    }

    let hash = config_hash(&cfg);
    let t0 = Instant::now();
    let mut out = Outputs::new(cfg.output_dir.clone());
    let result = cmd.run(&cfg, &m, &mut out);
    let wall = t0.elapsed().as_secs_f64();
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let status = match &result {
        Ok(()) => "ok",
        Err(_) => "error",
    };
    if let Err(e) = &result {
        let err = json!({
            "command": name,
            "kind": error_kind(e),
            "message": e.to_string(),
            "config_hash": hash,
        });
        eprintln!("{err}");
        // best effort: the error itself may be an unwritable directory
        let _ = out.json("error.json", &err);
    }
    let manifest = json!({
        "command": name,
        "status": status,
        "config_hash": hash,
        "config": cfg,
        "outputs": out.files,
        "warnings": out.warnings,
        "versions": {
            "attractor-forge": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "wall_time_s": wall,
    });
    let manifest_name = format!("{name}_manifest.json");
    if let Err(e) = out.json(&manifest_name, &manifest) {
        eprintln!("{}", json!({ "command": name, "kind": error_kind(&e), "message": e.to_string() }));
        return ExitCode::from(1);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(_) => ExitCode::from(1),
    }
}
