use std::path::PathBuf;

use attractor_forge::curves::RefineOptions;
use attractor_forge::symbolic::EntropyOptions;
use attractor_forge::{MapFamily, SystemConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything a run needs. Every section has defaults, so `{}` is a valid
/// config; unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilySpec,
    pub system: SystemConfig,
    pub output_dir: PathBuf,
    /// Seed for random sampling (orbit seeds, restarts).
    pub seed: u64,
    pub threads: Option<usize>,
    pub orbit: OrbitOptions,
    pub boundary: BoundaryCmd,
    pub code: CodeCmd,
    pub entropy: EntropyCmd,
    pub lyapunov: LyapunovCmd,
    pub srb: SrbCmd,
    pub correlation: CorrelationCmd,
    pub scan: ScanCmd,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: FamilySpec::default(),
            system: SystemConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 1,
            threads: None,
            orbit: OrbitOptions::default(),
            boundary: BoundaryCmd::default(),
            code: CodeCmd::default(),
            entropy: EntropyCmd::default(),
            lyapunov: LyapunovCmd::default(),
            srb: SrbCmd::default(),
            correlation: CorrelationCmd::default(),
            scan: ScanCmd::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    /// `henon`, `perturbed` or `circle`.
    pub name: String,
    pub a: f64,
    pub b: f64,
    /// Size of the smooth perturbation for `perturbed`.
    pub kappa: f64,
    /// Nonlinearity of the circle family.
    pub amplitude: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            name: "henon".into(),
            a: 1.4,
            b: 0.3,
            kappa: 0.0,
            amplitude: 0.3,
        }
    }
}

impl FamilySpec {
    pub fn build(&self) -> attractor_forge::Result<MapFamily> {
        match self.name.as_str() {
            "henon" => MapFamily::henon(self.a, self.b),
            "perturbed" => MapFamily::perturbed(self.a, self.b, self.kappa),
            "circle" => MapFamily::circle(self.a, self.b, self.amplitude),
            other => Err(attractor_forge::Error::InvalidConfig(format!(
                "unknown family {other:?} (expected henon, perturbed or circle)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitOptions {
    pub x0: f64,
    pub y0: f64,
    pub n: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions { x0: 0.1, y0: 0.0, n: 1000 }
    }
}

/// Itinerary start and length.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeCmd {
    pub x0: f64,
    pub y0: f64,
    pub n: usize,
}

impl Default for CodeCmd {
    fn default() -> Self {
        CodeCmd { x0: 0.1, y0: 0.0, n: 64 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryCmd {
    pub n: usize,
    pub h_max: f64,
    pub markers: bool,
}

impl Default for BoundaryCmd {
    fn default() -> Self {
        BoundaryCmd {
            n: 3,
            h_max: RefineOptions::default().h_max,
            markers: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyCmd {
    pub n_max: usize,
    pub options: EntropyOptions,
}

impl Default for EntropyCmd {
    fn default() -> Self {
        EntropyCmd {
            n_max: 12,
            options: EntropyOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Single orbit, falling back to restarts if it leaves the box.
    Auto,
    Single,
    Restarted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovCmd {
    pub n: usize,
    pub burn_in: usize,
    pub x0: f64,
    pub y0: f64,
    pub estimator: Estimator,
    pub max_restarts: usize,
}

impl Default for LyapunovCmd {
    fn default() -> Self {
        LyapunovCmd {
            n: 1_000_000,
            burn_in: 1000,
            x0: 0.1,
            y0: 0.0,
            estimator: Estimator::Auto,
            max_restarts: 1_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SrbMethod {
    Pushforward,
    Birkhoff,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrbCmd {
    pub method: SrbMethod,
    pub nx: usize,
    pub ny: usize,
    /// Pushforward: `[x0, y0, x1, y1]`; defaults to the horizontal midline of the box.
    pub segment: Option<[f64; 4]>,
    pub particles: usize,
    pub steps: usize,
    /// Birkhoff: orbit start, length and burn-in.
    pub x0: f64,
    pub y0: f64,
    pub n: usize,
    pub burn_in: usize,
}

impl Default for SrbCmd {
    fn default() -> Self {
        SrbCmd {
            method: SrbMethod::Pushforward,
            nx: 100,
            ny: 100,
            segment: None,
            particles: 100_000,
            steps: 200,
            x0: 0.1,
            y0: 0.0,
            n: 10_000_000,
            burn_in: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    X,
    Y,
    X2,
}

impl Observable {
    pub fn eval(self, z: attractor_forge::Point) -> f64 {
        match self {
            Observable::X => z.x,
            Observable::Y => z.y,
            Observable::X2 => z.x * z.x,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationCmd {
    pub phi: Observable,
    pub psi: Observable,
    pub x0: f64,
    pub y0: f64,
    pub n_samples: usize,
    pub lag_max: usize,
    pub burn_in: usize,
    pub floor_factor: f64,
}

impl Default for CorrelationCmd {
    fn default() -> Self {
        CorrelationCmd {
            phi: Observable::X,
            psi: Observable::X,
            x0: 0.1,
            y0: 0.0,
            n_samples: 1_000_000,
            lag_max: 20,
            burn_in: 10_000,
            floor_factor: 5.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanCmd {
    pub a_min: f64,
    pub a_max: f64,
    pub step: f64,
    pub horizon: usize,
    pub n0: usize,
}

impl Default for ScanCmd {
    fn default() -> Self {
        ScanCmd {
            a_min: 1.5,
            a_max: 2.0,
            step: 0.005,
            horizon: 30,
            n0: 1,
        }
    }
}

const SYSTEM_KEYS: &[&str] = &[
    "delta", "rho", "alpha", "beta", "c", "theta", "eps0", "c0", "mu_star", "kmax", "horizon",
    "k_delta", "kappa_factor", "component_cap",
];

/// Parse a config file. A `system` section that sets `mu_star` without
/// `delta` gets the matching `delta`.
pub fn parse(text: &str) -> Result<RunConfig, String> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    if !v.is_object() {
        return Err("config must be a JSON object".into());
    }
    if let Some(sys) = v.get_mut("system").and_then(Value::as_object_mut) {
        if let Some(k) = sys.keys().find(|k| !SYSTEM_KEYS.contains(&k.as_str())) {
            return Err(format!("system: unknown field {k:?}"));
        }
        if let (Some(mu), false) = (sys.get("mu_star").and_then(Value::as_u64), sys.contains_key("delta")) {
            sys.insert("delta".into(), Value::from((-(mu as f64)).exp()));
        }
    }
    serde_json::from_value(v).map_err(|e| format!("invalid config: {e}"))
}

impl RunConfig {
    /// Checks that do not depend on the command.
    pub fn validate(&self) -> Result<MapFamily, String> {
        self.system.validate().map_err(|e| e.to_string())?;
        if self.threads == Some(0) {
            return Err("threads must be positive".into());
        }
        self.family.build().map_err(|e| e.to_string())
    }

    /// Copy with the fields that do not affect results cleared, for hashing.
    pub fn canonical(&self) -> RunConfig {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.threads = None;
        c
    }
}
