//! Run configuration: a single TOML file with a strict schema, plus
//! command-line overrides. Unknown keys are rejected. The resolved
//! configuration is canonically serialized and hashed so every artifact
//! can state exactly which inputs produced it; the hash covers the
//! semantic payload (problem data, schedule, noise, run, sinks) and
//! deliberately excludes the output directory and thread count, which
//! must not change any number.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use orthant_core::measure::MeasureConfig;
use orthant_core::model::{DiffusionField, DriftField, ProblemSpec};
use orthant_core::noise::{NoiseLaw, NoiseModel};
use orthant_core::numerics::Matrix;
use orthant_core::reference::{self, ReferenceLaw};
use orthant_core::scheme::ScheduleKind;
use orthant_core::skorokhod::SkorokhodConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration file, flags, or schema violations. Exit code 4.
    #[error("config error: {0}")]
    Config(String),
    /// Problem data fails the stability validators. Exit code 2.
    #[error("validation failure: {0}")]
    Validation(String),
    /// Numerical or IO failure while running. Exit code 3.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 4,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn default_c() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    0.5
}
fn default_kind() -> String {
    "power".into()
}
fn default_law() -> String {
    "normal".into()
}
fn default_n_steps() -> u64 {
    100_000
}
fn default_replications() -> u32 {
    1
}
fn default_threads() -> usize {
    1
}
fn default_active_tol() -> f64 {
    1e-12
}
fn default_bins() -> usize {
    2000
}
fn default_x_max() -> f64 {
    20.0
}
fn default_reservoir() -> usize {
    1 << 20
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Top-level schema of the TOML run file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub label: Option<String>,
    pub spec: SpecConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub skorokhod: SkorokhodSection,
    #[serde(default)]
    pub sinks: SinksSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub clt: CltSection,
}

/// Problem data: either a named benchmark (`tandem2`, `skew3`, `sym8` with
/// optional `d`/`r`/`rho`) or inline matrices. Mixing both is rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub name: Option<String>,
    pub d: Option<usize>,
    pub r: Option<f64>,
    pub rho: Option<f64>,
    pub reflection: Option<Vec<Vec<f64>>>,
    pub drift: Option<Vec<f64>>,
    pub diffusion: Option<Vec<Vec<f64>>>,
    pub label: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// "power" (lambda_k = c k^-theta) or "explicit" (lambdas list).
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub lambdas: Option<Vec<f64>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: default_kind(),
            c: default_c(),
            theta: default_theta(),
            lambdas: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// "normal" | "rademacher" | "uniform" | "two_point".
    #[serde(default = "default_law")]
    pub law: String,
    /// Success probability for "two_point".
    pub p: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { law: default_law(), p: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_n_steps")]
    pub n_steps: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub seed: u64,
    /// Start state; defaults to the origin.
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            n_steps: default_n_steps(),
            replications: default_replications(),
            seed: 0,
            x0: None,
            threads: default_threads(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkorokhodSection {
    #[serde(default = "default_active_tol")]
    pub active_tol: f64,
    /// Reflection event cap; defaults to 16 * dim.
    pub max_events: Option<usize>,
}

impl Default for SkorokhodSection {
    fn default() -> Self {
        SkorokhodSection { active_tol: default_active_tol(), max_events: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinksSection {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_reservoir")]
    pub reservoir_capacity: usize,
    /// Collect per-face boundary measures and the locality audit.
    #[serde(default)]
    pub boundary: bool,
    /// Named streaming integrands: "coordinate:<i>", "half_square",
    /// "cubic_sum".
    #[serde(default)]
    pub test_functions: Vec<String>,
}

impl Default for SinksSection {
    fn default() -> Self {
        SinksSection {
            bins: default_bins(),
            x_max: default_x_max(),
            reservoir_capacity: default_reservoir(),
            boundary: false,
            test_functions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Write a checkpoint every this many steps (0 disables).
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir(), checkpoint_every: 0 }
    }
}

/// Test function for the `clt` subcommand: "bump" (with center/radii),
/// "cubic_sum", "half_square", or "coordinate:<i>".
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltSection {
    pub function: Option<String>,
    pub center: Option<Vec<f64>>,
    pub radii: Option<Vec<f64>>,
}

/// Flag overrides; `None` keeps the file's value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_steps: Option<u64>,
    pub replications: Option<u32>,
    pub threads: Option<usize>,
    pub checkpoint_every: Option<u64>,
}

/// Canonical image of the per-trajectory process identity: everything
/// that shapes the chain and its accumulators, but not how long it runs
/// or how many replications are pooled. Checkpoints carry its hash, so a
/// resume may extend the run without changing what it is a run *of*.
#[derive(Serialize)]
struct CanonicalProcess<'a> {
    format_version: u32,
    spec_label: &'a str,
    reflection: Vec<Vec<f64>>,
    drift: Option<Vec<f64>>,
    diffusion: Option<Vec<Vec<f64>>>,
    schedule_kind: &'a str,
    c: f64,
    theta: f64,
    lambdas: &'a Option<Vec<f64>>,
    noise_law: &'a str,
    noise_p: Option<f64>,
    seed: u64,
    x0: &'a [f64],
    active_tol: f64,
    max_events: usize,
    bins: usize,
    x_max: f64,
    reservoir_capacity: usize,
    boundary: bool,
    test_functions: &'a [String],
}

/// Canonical image of everything that influences the output numbers;
/// hashing this (FNV-1a over its JSON) gives the config hash stamped on
/// every artifact.
#[derive(Serialize)]
struct CanonicalConfig<'a> {
    process: CanonicalProcess<'a>,
    n_steps: u64,
    replications: u32,
}

/// Output format version; bump when any column set or layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// Fully resolved run: problem data, reference law if known, schedule and
/// noise objects, and the config hash.
pub struct Resolved {
    pub file: FileConfig,
    pub spec: ProblemSpec,
    pub law: Option<ReferenceLaw>,
    pub noise: NoiseModel,
    pub skorokhod: SkorokhodConfig,
    pub x0: Vec<f64>,
    pub out_dir: PathBuf,
    /// Hash of the full semantic payload, stamped on every output file.
    pub config_hash: u64,
    /// Hash of the trajectory identity (excludes n_steps and
    /// replications), stored in checkpoints and verified on resume.
    pub process_hash: u64,
}

impl Resolved {
    pub fn schedule_kind(&self) -> Result<ScheduleKind, CliError> {
        let s = &self.file.schedule;
        match s.kind.as_str() {
            "power" => Ok(ScheduleKind::Power { c: s.c, theta: s.theta }),
            "explicit" => {
                let l = s
                    .lambdas
                    .clone()
                    .ok_or_else(|| CliError::Config("explicit schedule needs `lambdas`".into()))?;
                Ok(ScheduleKind::Explicit(l))
            }
            other => Err(CliError::Config(format!("unknown schedule kind `{other}`"))),
        }
    }

    pub fn measure_config(&self, rep: u32) -> MeasureConfig {
        let s = &self.file.sinks;
        MeasureConfig {
            bins: s.bins,
            x_max: s.x_max,
            reservoir_capacity: s.reservoir_capacity,
            // Reservoir keys draw from their own stream family, disjoint
            // from the chain noise (which uses the seed directly).
            reservoir_seed: self.file.run.seed ^ 0x9e37_79b9_7f4a_7c15,
            reservoir_stream: rep as u64,
        }
    }

    /// Coefficient bound feeding the boundary-measure locality audit.
    pub fn a1(&self) -> f64 {
        self.spec.drift().bound().max(self.spec.diffusion().bound())
    }
}

pub fn load(path: &Path, over: &Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let mut file: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;

    if let Some(v) = over.seed {
        file.run.seed = v;
    }
    if let Some(v) = over.n_steps {
        file.run.n_steps = v;
    }
    if let Some(v) = over.replications {
        file.run.replications = v;
    }
    if let Some(v) = over.threads {
        file.run.threads = v;
    }
    if let Some(v) = over.checkpoint_every {
        file.output.checkpoint_every = v;
    }
    if let Some(v) = &over.out {
        file.output.dir = v.clone();
    }

    if file.run.replications == 0 {
        return Err(CliError::Config("replications must be at least 1".into()));
    }
    if file.run.n_steps == 0 {
        return Err(CliError::Config("n_steps must be at least 1".into()));
    }
    if file.run.threads == 0 {
        return Err(CliError::Config("threads must be at least 1".into()));
    }

    let (spec, law) = build_spec(&file.spec)?;
    let noise = build_noise(&file.noise)?;

    let x0 = match &file.run.x0 {
        Some(v) => {
            if v.len() != spec.dim() {
                return Err(CliError::Config(format!(
                    "x0 has {} entries for a {}-dimensional problem",
                    v.len(),
                    spec.dim()
                )));
            }
            v.clone()
        }
        None => vec![0.0; spec.dim()],
    };

    let mut skorokhod = SkorokhodConfig::for_dim(spec.dim());
    skorokhod.active_tol = file.skorokhod.active_tol;
    if let Some(me) = file.skorokhod.max_events {
        skorokhod.max_events = me;
    }

    for name in &file.sinks.test_functions {
        parse_test_function(name, spec.dim())?;
    }

    let process = CanonicalProcess {
        format_version: FORMAT_VERSION,
        spec_label: spec.label(),
        reflection: matrix_rows(spec.reflection()),
        drift: spec.drift().constant_value().map(|v| v.to_vec()),
        diffusion: spec.diffusion().constant_value().map(matrix_rows),
        schedule_kind: &file.schedule.kind,
        c: file.schedule.c,
        theta: file.schedule.theta,
        lambdas: &file.schedule.lambdas,
        noise_law: &file.noise.law,
        noise_p: file.noise.p,
        seed: file.run.seed,
        x0: &x0,
        active_tol: skorokhod.active_tol,
        max_events: skorokhod.max_events,
        bins: file.sinks.bins,
        x_max: file.sinks.x_max,
        reservoir_capacity: file.sinks.reservoir_capacity,
        boundary: file.sinks.boundary,
        test_functions: &file.sinks.test_functions,
    };
    let process_json = serde_json::to_vec(&process)
        .map_err(|e| CliError::Config(format!("canonicalizing config: {e}")))?;
    let process_hash = fnv1a64(&process_json);
    let canonical = CanonicalConfig {
        process,
        n_steps: file.run.n_steps,
        replications: file.run.replications,
    };
    let json = serde_json::to_vec(&canonical)
        .map_err(|e| CliError::Config(format!("canonicalizing config: {e}")))?;
    let config_hash = fnv1a64(&json);

    let out_dir = file.output.dir.clone();
    Ok(Resolved { file, spec, law, noise, skorokhod, x0, out_dir, config_hash, process_hash })
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn build_spec(sc: &SpecConfig) -> Result<(ProblemSpec, Option<ReferenceLaw>), CliError> {
    let inline = sc.reflection.is_some() || sc.drift.is_some() || sc.diffusion.is_some();
    match (&sc.name, inline) {
        (Some(_), true) => Err(CliError::Config(
            "spec: give either a benchmark `name` or inline matrices, not both".into(),
        )),
        (Some(name), false) => match name.as_str() {
            "tandem2" => {
                let (spec, law) = reference::tandem2();
                Ok((spec, Some(law)))
            }
            "skew3" => {
                let (spec, law) = reference::skew3();
                Ok((spec, Some(law)))
            }
            "sym8" | "sym" => {
                let d = sc.d.unwrap_or(8);
                let r = sc.r.unwrap_or(0.1);
                let rho = sc.rho.unwrap_or(0.0);
                let spec = reference::symmetric_spec(d, r, rho)
                    .map_err(|e| CliError::Config(format!("spec sym{d}: {e}")))?;
                // The moment formula only covers part of the parameter
                // range; outside it the run proceeds without a law.
                let law = reference::symmetric(d, r, rho).ok().map(|(_, l)| l);
                Ok((spec, law))
            }
            other => Err(CliError::Config(format!(
                "unknown benchmark `{other}` (expected tandem2, skew3, or sym8)"
            ))),
        },
        (None, true) => {
            let rows = sc
                .reflection
                .as_ref()
                .ok_or_else(|| CliError::Config("inline spec needs `reflection`".into()))?;
            let drift = sc
                .drift
                .as_ref()
                .ok_or_else(|| CliError::Config("inline spec needs `drift`".into()))?;
            let diff = sc
                .diffusion
                .as_ref()
                .ok_or_else(|| CliError::Config("inline spec needs `diffusion`".into()))?;
            let refl = rows_to_matrix(rows).map_err(CliError::Config)?;
            let sigma = rows_to_matrix(diff).map_err(CliError::Config)?;
            let label = sc.label.clone().unwrap_or_else(|| "inline".into());
            let spec = ProblemSpec::new(
                refl,
                DriftField::constant(drift.clone())
                    .map_err(|e| CliError::Config(format!("drift: {e}")))?,
                DiffusionField::constant(sigma)
                    .map_err(|e| CliError::Config(format!("diffusion: {e}")))?,
                label,
            )
            .map_err(|e| CliError::Config(format!("spec: {e}")))?;
            Ok((spec, None))
        }
        (None, false) => Err(CliError::Config(
            "spec: set a benchmark `name` or inline matrices".into(),
        )),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix, String> {
    let slices: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&slices).map_err(|e| format!("matrix: {e}"))
}

fn build_noise(nc: &NoiseConfig) -> Result<NoiseModel, CliError> {
    let law = match nc.law.as_str() {
        "normal" => NoiseLaw::StandardNormal,
        "rademacher" => NoiseLaw::Rademacher,
        "uniform" => NoiseLaw::UniformScaled,
        "two_point" => NoiseLaw::TwoPointAsymmetric {
            p: nc
                .p
                .ok_or_else(|| CliError::Config("two_point noise needs `p`".into()))?,
        },
        other => Err(CliError::Config(format!("unknown noise law `{other}`")))?,
    };
    NoiseModel::new(law).map_err(|e| CliError::Config(format!("noise: {e}")))
}

/// Named occupation-measure integrands available from the config.
pub fn parse_test_function(
    name: &str,
    dim: usize,
) -> Result<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, CliError> {
    if name == "half_square" {
        return Ok(Arc::new(|x: &[f64]| {
            0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }));
    }
    if name == "cubic_sum" {
        return Ok(Arc::new(|x: &[f64]| {
            x.iter().map(|v| v * v * v).sum::<f64>() / 6.0
        }));
    }
    if let Some(rest) = name.strip_prefix("coordinate:") {
        let i: usize = rest
            .parse()
            .map_err(|_| CliError::Config(format!("bad coordinate index in `{name}`")))?;
        if i >= dim {
            return Err(CliError::Config(format!(
                "coordinate {i} out of range for dimension {dim}"
            )));
        }
        return Ok(Arc::new(move |x: &[f64]| x[i]));
    }
    Err(CliError::Config(format!(
        "unknown test function `{name}` (expected coordinate:<i>, half_square, cubic_sum)"
    )))
}

/// CLT test function from the `[clt]` section.
pub fn build_clt_function(
    clt: &CltSection,
    dim: usize,
) -> Result<orthant_core::cltlab::TestFunction, CliError> {
    let name = clt.function.as_deref().unwrap_or("bump");
    match name {
        "bump" => {
            let center = clt
                .center
                .clone()
                .ok_or_else(|| CliError::Config("clt bump needs `center`".into()))?;
            let radii = clt
                .radii
                .clone()
                .ok_or_else(|| CliError::Config("clt bump needs `radii`".into()))?;
            if center.len() != dim || radii.len() != dim {
                return Err(CliError::Config(format!(
                    "clt bump center/radii must have {dim} entries"
                )));
            }
            if radii.iter().any(|&r| !(r > 0.0)) {
                return Err(CliError::Config("clt bump radii must be positive".into()));
            }
            Ok(orthant_core::cltlab::bump(center, radii))
        }
        "cubic_sum" => Ok(orthant_core::cltlab::cubic_sum(dim)),
        "half_square" => Ok(orthant_core::cltlab::half_square(dim)),
        other => {
            if let Some(rest) = other.strip_prefix("coordinate:") {
                let i: usize = rest
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad coordinate in `{other}`")))?;
                if i >= dim {
                    return Err(CliError::Config(format!(
                        "coordinate {i} out of range for dimension {dim}"
                    )));
                }
                Ok(orthant_core::cltlab::coordinate(dim, i))
            } else {
                Err(CliError::Config(format!("unknown clt function `{other}`")))
            }
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
