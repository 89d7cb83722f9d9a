//! Command-line driver: every subcommand reads files, writes files
//! atomically, and leaves a `<output>.manifest.json` next to each output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::constraint::{assembled_home, ik_continuation, solve_ik};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::model::{ParameterMask, RobotModel, StandardParams, DEFAULT_EPS_PD};
use crate::regroup::{
    analyze_with, sample_states, AnalyzeOptions, RegroupingMaps, DEFAULT_TOL_RANK,
};
use crate::signal::{differentiate, lift, process_pipeline, PipelineConfig, TrajectoryDataset};
use crate::simulate::{
    design_excitation, parse_reference_spec, run_with, validate_forward, validate_torque,
    ComputedTorque, ExcitationConfig, GainSet, Integrator, NoiseLevels, ReferenceTrajectory,
    SimConfig, TrackingMetrics, DEFAULT_SEGMENT_LEN,
};
use crate::sysid::{irwls_identify, IdentificationConfig, ResultFile, DEFAULT_MIN_JOINT_SPEED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Acceleration scale of the random states used for regrouping.
const REGROUP_ACC: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(
    name = "chainid",
    version,
    about = "Physically-consistent identification of closed-chain robots"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the plant under computed-torque tracking and log a trajectory CSV.
    Simulate(SimulateArgs),
    /// Search a Fourier excitation trajectory that conditions the observation well.
    Excite(ExciteArgs),
    /// Identify physically-consistent parameters from a trajectory CSV.
    Identify(IdentifyArgs),
    /// Compare identified and reference parameters on held-out data.
    Validate(ValidateArgs),
    /// Run the computed-torque controller with identified feedforward.
    Track(TrackArgs),
    /// Audit the uniqueness of the loop-closure solution over sampled postures.
    ModelCheck(ModelCheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// RNG seed (falls back to CHAINID_SEED, then 0).
    #[arg(long, env = "CHAINID_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Simulated duration (s).
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Logging period (s).
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, value_enum, default_value_t = IntegratorArg::Rk45)]
    pub integrator: IntegratorArg,
    /// RK4 steps per logging period.
    #[arg(long, default_value_t = 4)]
    pub substeps: usize,
    /// Proportional gain, one value or `/`-separated per joint.
    #[arg(long, default_value = "100")]
    pub kp: String,
    /// Derivative gain, one value or `/`-separated per joint.
    #[arg(long, default_value = "20")]
    pub kd: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorArg {
    Rk4,
    Rk45,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Model JSON file, or `builtin:fourbar` / `builtin:spatial5`.
    #[arg(long)]
    pub model: String,
    /// Plant parameters: a JSON array of 14n numbers or a result file.
    #[arg(
        long,
        conflicts_with = "ground_truth",
        required_unless_present = "ground_truth"
    )]
    pub theta: Option<PathBuf>,
    /// Use the model's ground-truth parameters as the plant.
    #[arg(long)]
    pub ground_truth: bool,
    /// `sine:amp=..,freq=..,phase=..,offset=..,maxvel=..` or a reference JSON file.
    #[arg(long = "ref")]
    pub reference: String,
    /// Measurement noise σ per channel, e.g. `qa=1e-4,qda=1e-3,u=0.05`, or `0`.
    #[arg(long, default_value = "0")]
    pub noise: String,
    /// Hold the controller output over each logging period (digital controller).
    #[arg(long)]
    pub zoh: bool,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskArg {
    All,
    Friction,
    ActuatedFriction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedFrom {
    Reference,
    GroundTruth,
}

#[derive(Debug, Clone, Args)]
pub struct RegroupArgs {
    /// Which standard parameters are estimated; the rest are held fixed.
    #[arg(long, value_enum, default_value_t = MaskArg::All)]
    pub mask: MaskArg,
    /// Source of the values of fixed parameters.
    #[arg(long, value_enum, default_value_t = FixedFrom::Reference)]
    pub fixed_from: FixedFrom,
    /// Random feasible states used to find the base parameters.
    #[arg(long, default_value_t = 200)]
    pub regroup_samples: usize,
    #[arg(long, default_value_t = DEFAULT_TOL_RANK)]
    pub tol_rank: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ExciteArgs {
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub regroup: RegroupArgs,
    /// Total candidate evaluations.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value_t = 100)]
    pub candidates: usize,
    #[arg(long, default_value_t = 5)]
    pub harmonics: usize,
    /// Base period of the Fourier series (s).
    #[arg(long, default_value_t = 10.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dt_sample: f64,
    /// Largest first-harmonic coefficient as a fraction of the joint range.
    #[arg(long, default_value_t = 0.15)]
    pub amplitude: f64,
    /// Speed bound (rad/s) on every joint along the candidate.
    #[arg(long, default_value_t = 2.0)]
    pub max_speed: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Low-pass cutoff in Hz, or `none`.
    #[arg(long, default_value = "5")]
    pub cutoff: String,
    #[arg(long, default_value_t = 10)]
    pub downsample: usize,
    /// Velocity deadband (rad/s): slower samples are left out.
    #[arg(long, default_value_t = DEFAULT_MIN_JOINT_SPEED)]
    pub min_speed: f64,
}

#[derive(Debug, Clone, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub model: String,
    /// Raw trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub regroup: RegroupArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = 100)]
    pub multistart: usize,
    #[arg(long, default_value_t = 20)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub irwls_tol: f64,
    #[arg(long, default_value_t = DEFAULT_EPS_PD)]
    pub eps_pd: f64,
    /// Weight of the pull toward the model's reference parameters.
    #[arg(long, default_value_t = 0.0)]
    pub regularization: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidateMode {
    Torque,
    Forward,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub result: PathBuf,
    /// Held-out raw trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ValidateMode::Torque)]
    pub mode: ValidateMode,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = DEFAULT_SEGMENT_LEN)]
    pub segment_len: f64,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Against {
    Reference,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long = "ref")]
    pub reference: String,
    /// Plant parameters (the model's ground truth by default).
    #[arg(long)]
    pub plant: Option<PathBuf>,
    /// Also run with the model's reference parameters as feedforward.
    #[arg(long, value_enum, default_value_t = Against::Reference)]
    pub against: Against,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Tracking log CSV of the identified-feedforward run.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelCheckArgs {
    #[arg(long)]
    pub model: String,
    /// Actuated postures sampled inside the joint limits.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Random IK starts per posture.
    #[arg(long, default_value_t = 20)]
    pub starts: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a subcommand, with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_VALIDATION
            },
            message: e.to_string(),
        }
    }
}

impl CliError {
    fn validation(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: msg.into(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs one parsed command; the report goes to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> CliResult<()> {
    let mut report = String::new();
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, &mut report)?,
        Command::Excite(a) => cmd_excite(&a, &mut report)?,
        Command::Identify(a) => cmd_identify(&a, &mut report)?,
        Command::Validate(a) => cmd_validate(&a, &mut report)?,
        Command::Track(a) => cmd_track(&a, &mut report)?,
        Command::ModelCheck(a) => cmd_model_check(&a, &mut report)?,
    }
    stdout
        .write_all(report.as_bytes())
        .map_err(|e| CliError::validation(format!("writing report: {e}")))
}

// ---------------------------------------------------------------------------
// files

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// Provenance record written next to an output.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    summary: Value,
    /// Wall-clock seconds per phase.
    timings: BTreeMap<String, f64>,
}

struct Run {
    command: &'static str,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Run {
    fn new(command: &'static str, seed: Option<u64>) -> Self {
        Self {
            command,
            seed,
            inputs: Vec::new(),
            timings: BTreeMap::new(),
            clock: Instant::now(),
        }
    }

    fn read(&mut self, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(text)
    }

    fn lap(&mut self, phase: &str) {
        self.timings
            .insert(phase.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    fn model(&mut self, spec: &str) -> Result<RobotModel> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            return match name {
                "fourbar" => Ok(fixtures::fourbar()),
                "spatial5" => Ok(fixtures::spatial5()),
                other => Err(Error::InvalidArgument(format!(
                    "unknown built-in model '{other}'"
                ))),
            };
        }
        let path = Path::new(spec);
        let text = self.read(path)?;
        RobotModel::from_json_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Writes `bytes` to `out`, then the manifest.
    fn finish(self, out: &Path, bytes: &[u8], config: Value, summary: Value) -> Result<()> {
        write_atomic(out, bytes)?;
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config,
            inputs: self.inputs,
            outputs: vec![FileDigest {
                path: out.display().to_string(),
                sha256: sha256_hex(bytes),
            }],
            summary,
            timings: self.timings,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&manifest_path(out), text.as_bytes())
    }
}

/// Manifest file name as referenced from inside an output.
fn manifest_name(out: &Path) -> String {
    manifest_path(out)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_theta(run: &mut Run, path: &Path, n: usize) -> Result<StandardParams> {
    let text = run.read(path)?;
    let theta = match ResultFile::from_json_str(&text) {
        Ok(r) => r.result.theta0,
        Err(_) => serde_json::from_str::<StandardParams>(&text).map_err(|e| {
            Error::Parse(format!(
                "{}: neither a result file nor a parameter array ({e})",
                path.display()
            ))
        })?,
    };
    if theta.n_links() != n || theta.len() != 14 * n {
        return Err(Error::DimensionMismatch(format!(
            "{} holds {} parameters, the model needs {}",
            path.display(),
            theta.len(),
            14 * n
        )));
    }
    Ok(theta)
}

fn ground_truth(model: &RobotModel) -> Result<StandardParams> {
    model.ground_truth_theta().cloned().ok_or_else(|| {
        Error::Validation(format!(
            "model '{}' has no ground-truth parameters",
            model.name()
        ))
    })
}

// ---------------------------------------------------------------------------
// flag parsing

/// One number or `/`-separated values, broadcast to `n`.
fn per_joint(name: &str, text: &str, n: usize) -> Result<Vec<f64>> {
    let vals = text
        .split('/')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("--{name}: bad number '{v}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    match vals.len() {
        1 => Ok(vec![vals[0]; n]),
        k if k == n => Ok(vals),
        k => Err(Error::InvalidArgument(format!(
            "--{name}: {k} values for {n} joints"
        ))),
    }
}

/// `0`/`none`, or `qa=..,qda=..,u=..` (missing channels are noise-free).
pub fn parse_noise(text: &str) -> Result<NoiseLevels> {
    let t = text.trim();
    let mut n = NoiseLevels::default();
    if t == "0" || t.eq_ignore_ascii_case("none") || t.is_empty() {
        return Ok(n);
    }
    for item in t.split(',') {
        let (k, v) = item.split_once('=').ok_or_else(|| {
            Error::Parse(format!("--noise: expected channel=sigma, got '{item}'"))
        })?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("--noise: bad number '{v}'")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "--noise: σ must be nonnegative, got {v}"
            )));
        }
        match k.trim() {
            "qa" => n.qa = v,
            "qda" => n.qda = v,
            "u" => n.u = v,
            other => return Err(Error::Parse(format!("--noise: unknown channel '{other}'"))),
        }
    }
    Ok(n)
}

pub fn parse_cutoff(text: &str) -> Result<Option<f64>> {
    if text.trim().eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("--cutoff: expected Hz or 'none', got '{text}'")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidArgument("--cutoff must be positive".into()));
    }
    Ok(Some(v))
}

fn sim_config(a: &SimArgs) -> Result<SimConfig> {
    let integrator = match a.integrator {
        IntegratorArg::Rk45 => Integrator::default(),
        IntegratorArg::Rk4 => Integrator::Rk4 {
            substeps: a.substeps,
        },
    };
    let cfg = SimConfig {
        integrator,
        dt_output: a.dt,
        horizon: a.horizon,
        ..SimConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn gains(a: &SimArgs, n: usize) -> Result<GainSet> {
    let g = GainSet {
        kp: per_joint("kp", &a.kp, n)?,
        kd_gain: per_joint("kd", &a.kd, n)?,
    };
    g.validate(n)?;
    Ok(g)
}

fn sim_echo(a: &SimArgs) -> Value {
    json!({
        "horizon": a.horizon,
        "dt": a.dt,
        "integrator": a.integrator,
        "substeps": a.substeps,
        "kp": a.kp,
        "kd": a.kd,
    })
}

fn maps_for(model: &RobotModel, a: &RegroupArgs, seed: u64) -> Result<RegroupingMaps> {
    let fixed = match a.fixed_from {
        FixedFrom::Reference => model.reference_theta().cloned(),
        FixedFrom::GroundTruth => model.ground_truth_theta().cloned(),
    };
    let mask = match a.mask {
        MaskArg::All => None,
        m => {
            let values = fixed.ok_or_else(|| {
                Error::Validation(format!(
                    "--mask {m:?} needs fixed values, but the model has none for --fixed-from"
                ))
            })?;
            Some(match m {
                MaskArg::Friction => ParameterMask::friction_only(&values),
                _ => ParameterMask::actuated_friction_only(model, &values),
            })
        }
    };
    let states = sample_states(model, a.regroup_samples, REGROUP_ACC, seed)?;
    let opts = AnalyzeOptions {
        tol_rank: a.tol_rank,
        ..AnalyzeOptions::default()
    };
    analyze_with(model, &states, mask.as_ref(), &opts)
}

fn regroup_echo(a: &RegroupArgs) -> Value {
    json!({
        "mask": a.mask,
        "fixed_from": a.fixed_from,
        "regroup_samples": a.regroup_samples,
        "regroup_acc": REGROUP_ACC,
        "tol_rank": a.tol_rank,
    })
}

fn home_qa(model: &RobotModel) -> Result<(DVector<f64>, DVector<f64>)> {
    let home = assembled_home(model)?;
    let qa = model.actuated_part(&home);
    Ok((home, qa))
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(a: &SimulateArgs, report: &mut String) -> CliResult<()> {
    let seed = a.seed.seed;
    let mut run = Run::new("simulate", Some(seed));
    let model = run.model(&a.model)?;
    model.require_fully_actuated()?;
    let theta = match &a.theta {
        Some(p) => read_theta(&mut run, p, model.n())?,
        None => ground_truth(&model)?,
    };
    let noise = parse_noise(&a.noise)?;
    let cfg = sim_config(&a.sim)?;
    let g = gains(&a.sim, model.n_a())?;
    let (home, qa0) = home_qa(&model)?;
    let reference = load_reference(&mut run, &a.reference, &qa0)?;
    run.lap("setup");

    let mut ctrl = ComputedTorque::new(&model, &theta, &reference, &g, &home)?;
    if a.zoh {
        ctrl = ctrl.with_hold(cfg.dt_output);
    }
    let tracked = run_with(&model, &theta, &mut ctrl, &cfg)?;
    run.lap("integrate");

    let mut log = noise.apply(&tracked.log, seed)?;
    log.ea = tracked.log.ea.clone();
    let text = log.to_csv_string(&[
        format!("chainid simulate, model {}", model.name()),
        format!("manifest: {}", manifest_name(&a.out)),
    ]);
    let _ = writeln!(
        report,
        "simulated {} samples over {} s ({} actuated joints)",
        log.len(),
        cfg.horizon,
        model.n_a()
    );
    write_metrics(
        report,
        "tracking error (deg)",
        &[("plant", &tracked.metrics)],
    );
    let config = json!({
        "model": a.model,
        "theta": a.theta.as_ref().map(|p| p.display().to_string()),
        "ground_truth": a.ground_truth,
        "reference": reference,
        "noise": {"qa": noise.qa, "qda": noise.qda, "u": noise.u},
        "zoh": a.zoh,
        "sim": sim_echo(&a.sim),
    });
    let summary = json!({"rows": log.len(), "tracking_max_deg": tracked.metrics.max_deg});
    run.finish(&a.out, text.as_bytes(), config, summary)?;
    Ok(())
}

fn load_reference(run: &mut Run, spec: &str, qa0: &DVector<f64>) -> Result<ReferenceTrajectory> {
    if !spec.starts_with("sine:") {
        // recorded as an input
        run.read(Path::new(spec))?;
    }
    parse_reference_spec(spec, qa0)
}

// ---------------------------------------------------------------------------
// excite

fn cmd_excite(a: &ExciteArgs, report: &mut String) -> CliResult<()> {
    let seed = a.seed.seed;
    let mut run = Run::new("excite", Some(seed));
    let model = run.model(&a.model)?;
    model.require_fully_actuated()?;
    let cfg = ExcitationConfig {
        base_period: a.period,
        n_harmonics: a.harmonics,
        budget: a.budget,
        random_candidates: a.candidates,
        dt_sample: a.dt_sample,
        amplitude_fraction: a.amplitude,
        max_speed: a.max_speed,
        seed,
    };
    if cfg.budget == 0 {
        return Err(CliError::validation("--budget must be positive"));
    }
    let maps = maps_for(&model, &a.regroup, seed)?;
    run.lap("regroup");
    let res = design_excitation(&model, &maps, &cfg)?;
    run.lap("search");
    let _ = writeln!(
        report,
        "condition number {:.6e} (best random candidate {:.6e}), {} evaluations, {} feasible random candidates",
        res.cond, res.random_best_cond, res.evaluations, res.feasible_candidates
    );
    let config = json!({
        "model": a.model,
        "regroup": regroup_echo(&a.regroup),
        "budget": a.budget,
        "candidates": a.candidates,
        "harmonics": a.harmonics,
        "period": a.period,
        "dt_sample": a.dt_sample,
        "amplitude": a.amplitude,
        "max_speed": a.max_speed,
    });
    let summary = json!({
        "cond": res.cond,
        "random_best_cond": res.random_best_cond,
        "evaluations": res.evaluations,
        "feasible_candidates": res.feasible_candidates,
        "n_id": maps.n_id(),
    });
    run.finish(
        &a.out,
        res.reference.to_json_string().as_bytes(),
        config,
        summary,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// identify

fn cmd_identify(a: &IdentifyArgs, report: &mut String) -> CliResult<()> {
    let seed = a.seed.seed;
    let mut run = Run::new("identify", Some(seed));
    let model = run.model(&a.model)?;
    model.require_fully_actuated()?;
    let raw = TrajectoryDataset::from_csv_str(&run.read(&a.data)?)?.raw_channels();
    if raw.n_a() != model.n_a() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} actuated channels, model has {}",
            raw.n_a(),
            model.n_a()
        ))
        .into());
    }
    let pipe = PipelineConfig {
        cutoff_hz: parse_cutoff(&a.pipeline.cutoff)?,
        downsample: a.pipeline.downsample,
        start: None,
    };
    let cfg = IdentificationConfig {
        eps_pd: a.eps_pd,
        multistart_count: a.multistart,
        irwls_max_iter: a.max_iter,
        irwls_tol: a.irwls_tol,
        seed,
        regularization: a.regularization,
        min_joint_speed: a.pipeline.min_speed,
        ..IdentificationConfig::default()
    };
    cfg.validate()?;
    let processed = process_pipeline(&model, &raw, &pipe)?;
    run.lap("pipeline");
    let maps = maps_for(&model, &a.regroup, seed)?;
    run.lap("regroup");
    let result = irwls_identify(&model, &maps, &processed, &cfg)?;
    run.lap("identify");

    let _ = writeln!(
        report,
        "{} raw samples, {} after downsampling, {} in the observation; {} base parameters, cond {:.4e}, {} IRWLS iterations",
        raw.len(),
        processed.len(),
        result.n_samples,
        maps.n_id(),
        result.cond,
        result.irwls_iterations
    );
    let _ = writeln!(report, "{:>6}  {:>14}", "joint", "residual RMS");
    for (j, r) in result.residual_rms.iter().enumerate() {
        let _ = writeln!(report, "{:>6}  {:>14.6e}", j + 1, r);
    }
    let summary = json!({
        "raw_samples": raw.len(),
        "downsampled_samples": processed.len(),
        "observation_samples": result.n_samples,
        "n_id": maps.n_id(),
        "cond": result.cond,
        "irwls_iterations": result.irwls_iterations,
        "objective": result.objective,
        "residual_rms": result.residual_rms,
    });
    let config = json!({
        "model": a.model,
        "data": a.data.display().to_string(),
        "regroup": regroup_echo(&a.regroup),
        "cutoff_hz": pipe.cutoff_hz,
        "downsample": pipe.downsample,
        "identification": cfg,
    });
    let file = ResultFile {
        model: model.name().to_string(),
        result,
        maps,
        config: cfg,
    };
    run.finish(&a.out, file.to_json_string().as_bytes(), config, summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// validate

fn column_table(report: &mut String, title: &str, cols: &[(&str, Vec<f64>)]) {
    let _ = writeln!(report, "{title}");
    let mut head = format!("{:>6}", "joint");
    for (name, _) in cols {
        let _ = write!(head, "  {name:>14}");
    }
    let _ = writeln!(report, "{head}");
    let rows = cols.first().map_or(0, |c| c.1.len());
    for j in 0..rows {
        let mut line = format!("{:>6}", j + 1);
        for (_, v) in cols {
            let _ = write!(line, "  {:>14.6e}", v[j]);
        }
        let _ = writeln!(report, "{line}");
    }
}

fn cmd_validate(a: &ValidateArgs, report: &mut String) -> CliResult<()> {
    let mut run = Run::new("validate", None);
    let model = run.model(&a.model)?;
    model.require_fully_actuated()?;
    let file = ResultFile::from_json_str(&run.read(&a.result)?)?;
    let raw = TrajectoryDataset::from_csv_str(&run.read(&a.data)?)?.raw_channels();
    let mut candidates: Vec<(&str, StandardParams)> =
        vec![("identified", file.result.theta0.clone())];
    if let Some(r) = model.reference_theta() {
        candidates.push(("reference", r.clone()));
    }
    if file.result.theta0.n_links() != model.n() {
        return Err(CliError::validation("result file does not match the model"));
    }
    let home = assembled_home(&model)?;
    let mut summary = serde_json::Map::new();
    match a.mode {
        ValidateMode::Torque => {
            let pipe = PipelineConfig {
                cutoff_hz: parse_cutoff(&a.pipeline.cutoff)?,
                downsample: a.pipeline.downsample,
                start: Some(home),
            };
            let ds = process_pipeline(&model, &raw, &pipe)?;
            run.lap("pipeline");
            let mut cols = Vec::new();
            for (name, theta) in &candidates {
                let v = validate_torque(&model, theta, &ds, a.pipeline.min_speed)?;
                summary.insert(
                    name.to_string(),
                    json!({"rms": v.rms, "samples": v.samples.len()}),
                );
                cols.push((*name, v.rms));
            }
            run.lap("validate");
            column_table(report, "torque residual RMS (N·m)", &cols);
        }
        ValidateMode::Forward => {
            let ds = lift(&model, &differentiate(&raw)?, &home)?;
            run.lap("lift");
            let sim = SimConfig::default();
            let mut cols = Vec::new();
            let mut segments = None;
            for (name, theta) in &candidates {
                let v = validate_forward(&model, theta, &ds, a.segment_len, &sim)?;
                let ends: Vec<Value> = v
                    .segments
                    .iter()
                    .map(|s| json!({"t0": s.t0, "l2": s.l2, "endpoint_error": s.endpoint_error, "failure": s.failure}))
                    .collect();
                summary.insert(
                    name.to_string(),
                    json!({"l2": v.l2, "failed_segments": v.failed(), "segments": ends}),
                );
                segments.get_or_insert((v.segments.len(), v.samples_per_segment));
                cols.push((*name, v.l2));
            }
            run.lap("validate");
            let (count, per) = segments.unwrap_or_default();
            let _ = writeln!(
                report,
                "{count} segments of {} s ({per} samples each)",
                a.segment_len
            );
            column_table(report, "forward-integration L2 error (rad)", &cols);
            summary.insert("segments".into(), json!(count));
        }
    }
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&Value::Object(summary.clone()))
            .expect("report serializes");
        text.push('\n');
        let config = json!({
            "model": a.model,
            "mode": a.mode,
            "cutoff": a.pipeline.cutoff,
            "downsample": a.pipeline.downsample,
            "min_speed": a.pipeline.min_speed,
            "segment_len": a.segment_len,
        });
        run.finish(out, text.as_bytes(), config, Value::Null)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// track

fn write_metrics(report: &mut String, title: &str, runs: &[(&str, &TrackingMetrics)]) {
    let _ = writeln!(report, "{title}");
    let mut head = format!("{:>6}", "joint");
    for (name, _) in runs {
        let _ = write!(head, "  {:>24}", format!("{name} (mean, max)"));
    }
    let _ = writeln!(report, "{head}");
    let n = runs.first().map_or(0, |r| r.1.mean_deg.len());
    for j in 0..n {
        let mut line = format!("{:>6}", j + 1);
        for (_, m) in runs {
            let _ = write!(
                line,
                "  {:>24}",
                format!("({:.4e}, {:.4e})", m.mean_deg[j], m.max_deg[j])
            );
        }
        let _ = writeln!(report, "{line}");
    }
}

fn cmd_track(a: &TrackArgs, report: &mut String) -> CliResult<()> {
    let mut run = Run::new("track", None);
    let model = run.model(&a.model)?;
    model.require_fully_actuated()?;
    let file = ResultFile::from_json_str(&run.read(&a.result)?)?;
    if file.result.theta0.n_links() != model.n() {
        return Err(CliError::validation("result file does not match the model"));
    }
    let plant = match &a.plant {
        Some(p) => read_theta(&mut run, p, model.n())?,
        None => ground_truth(&model)?,
    };
    let cfg = sim_config(&a.sim)?;
    let g = gains(&a.sim, model.n_a())?;
    let (home, qa0) = home_qa(&model)?;
    let reference = load_reference(&mut run, &a.reference, &qa0)?;
    reference.check_limits(&model, &home)?;
    run.lap("setup");

    let theta0 = file.result.theta0.clone();
    let mut ctrl = ComputedTorque::new(&model, &theta0, &reference, &g, &home)?;
    let ours = run_with(&model, &plant, &mut ctrl, &cfg)?;
    run.lap("identified");
    let theirs = match (a.against, model.reference_theta()) {
        (Against::Reference, Some(r)) => {
            let mut ctrl = ComputedTorque::new(&model, r, &reference, &g, &home)?;
            let t = run_with(&model, &plant, &mut ctrl, &cfg)?;
            run.lap("reference");
            Some(t)
        }
        (Against::Reference, None) => {
            return Err(CliError::validation(
                "--against reference needs reference parameters in the model",
            ))
        }
        (Against::None, _) => None,
    };
    let mut rows = vec![("identified", &ours.metrics)];
    if let Some(t) = &theirs {
        rows.push(("reference", &t.metrics));
    }
    write_metrics(report, "tracking error (deg)", &rows);
    let text = ours.log.to_csv_string(&[
        format!(
            "chainid track, model {}, identified feedforward",
            model.name()
        ),
        format!("manifest: {}", manifest_name(&a.out)),
    ]);
    let metrics = |m: &TrackingMetrics| json!({"mean_deg": m.mean_deg, "max_deg": m.max_deg});
    let summary = json!({
        "identified": metrics(&ours.metrics),
        "reference": theirs.as_ref().map(|t| metrics(&t.metrics)),
    });
    let config = json!({
        "model": a.model,
        "result": a.result.display().to_string(),
        "plant": a.plant.as_ref().map(|p| p.display().to_string()),
        "reference": reference,
        "against": a.against,
        "sim": sim_echo(&a.sim),
    });
    run.finish(&a.out, text.as_bytes(), config, summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// model-check

/// Outcome of the closure-uniqueness audit.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessAudit {
    pub samples: usize,
    /// Postures with exactly one in-limit solution.
    pub unique: usize,
    /// Postures where no start converged inside the limits.
    pub unsolved: usize,
    /// Largest number of distinct in-limit solutions found at one posture.
    pub max_solutions: usize,
    /// Unique postures where continuation from home lands on that solution.
    pub continuation_agrees: usize,
}

fn wrapped_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        })
        .fold(0.0, f64::max)
}

fn in_limits(model: &RobotModel, idx: &[usize], v: &DVector<f64>) -> bool {
    idx.iter().zip(v.iter()).all(|(&k, x)| {
        let (lo, hi) = model.links()[k].pos_limits;
        *x >= lo - 1e-9 && *x <= hi + 1e-9
    })
}

/// Multi-start IK at `samples` random actuated postures inside the limits,
/// counting distinct closure solutions (angles compared modulo 2π) that
/// respect the passive-joint limits.
pub fn uniqueness_audit(
    model: &RobotModel,
    samples: usize,
    starts: usize,
    seed: u64,
) -> Result<UniquenessAudit> {
    model.require_fully_actuated()?;
    if samples == 0 || starts == 0 {
        return Err(Error::InvalidArgument(
            "samples and starts must be positive".into(),
        ));
    }
    let home = assembled_home(model)?;
    let (act, unact) = (model.actuated_indices(), model.unactuated_indices());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = UniquenessAudit {
        samples,
        unique: 0,
        unsolved: 0,
        max_solutions: 0,
        continuation_agrees: 0,
    };
    for _ in 0..samples {
        let qa = DVector::from_iterator(
            act.len(),
            act.iter().map(|&k| {
                let (lo, hi) = model.links()[k].pos_limits;
                rng.random_range(lo..=hi)
            }),
        );
        let mut found: Vec<DVector<f64>> = Vec::new();
        let mut add = |qu: DVector<f64>| {
            if in_limits(model, unact, &qu) && found.iter().all(|f| wrapped_distance(f, &qu) > 1e-6)
            {
                found.push(qu);
            }
        };
        // the home-branch continuation counts as one more start
        let continued = ik_continuation(model, &home, &qa, 20)
            .ok()
            .map(|q| model.unactuated_part(&q));
        if let Some(qu) = &continued {
            add(qu.clone());
        }
        for _ in 0..starts {
            let guess = DVector::from_iterator(
                unact.len(),
                unact.iter().map(|&k| {
                    let (lo, hi) = model.links()[k].pos_limits;
                    rng.random_range(lo..=hi)
                }),
            );
            if let Ok(sol) = solve_ik(model, &qa, &guess) {
                add(sol.qu);
            }
        }
        audit.max_solutions = audit.max_solutions.max(found.len());
        match found.len() {
            0 => audit.unsolved += 1,
            1 => audit.unique += 1,
            _ => {}
        }
        if let (Some(qu), 1) = (&continued, found.len()) {
            if wrapped_distance(&found[0], qu) <= 1e-6 {
                audit.continuation_agrees += 1;
            }
        }
    }
    Ok(audit)
}

fn cmd_model_check(a: &ModelCheckArgs, report: &mut String) -> CliResult<()> {
    let seed = a.seed.seed;
    let mut run = Run::new("model-check", Some(seed));
    let model = run.model(&a.model)?;
    for w in model.warnings() {
        let _ = writeln!(report, "warning: {w}");
    }
    let _ = writeln!(
        report,
        "model {}: n = {}, n_a = {}, n_u = {}, n_c = {}, fully actuated: {}",
        model.name(),
        model.n(),
        model.n_a(),
        model.n_u(),
        model.n_c(),
        model.is_fully_actuated()
    );
    let audit = uniqueness_audit(&model, a.samples, a.starts, seed)?;
    run.lap("audit");
    let _ = writeln!(
        report,
        "closure uniqueness: {}/{} postures unique, {} unsolved, at most {} solutions, continuation agrees at {}",
        audit.unique, audit.samples, audit.unsolved, audit.max_solutions, audit.continuation_agrees
    );
    let passed = audit.unique == audit.samples;
    let _ = writeln!(report, "{}", if passed { "PASS" } else { "FAIL" });
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(
            &json!({"model": model.name(), "audit": audit, "passed": passed}),
        )
        .expect("report serializes");
        text.push('\n');
        let config = json!({"model": a.model, "samples": a.samples, "starts": a.starts});
        run.finish(out, text.as_bytes(), config, Value::Null)?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "closure solution is not unique at {} of {} postures",
            audit.samples - audit.unique,
            audit.samples
        )))
    }
}
