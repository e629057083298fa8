//! The `monofbf` command line.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and I/O errors, 2
//! for numerical failures. Errors are reported on stderr as a single JSON
//! object `{"error": <kind>, "message": <text>}`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::autodiff::{AdjointComposite, DifferentiableMap};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Model};
use crate::config::{RunConfig, SNAPSHOT_FILE};
use crate::dataset::{load_dataset, read_image_dir, simulate_dataset, write_synthetic_set};
use crate::error::{Error, Result};
use crate::fbf::invert_operator;
use crate::forward::{
    generate_motion_kernel, load_kernel, save_kernel, NoiseModel, SaturatedBlurModel,
    SaturationParams,
};
use crate::io;
use crate::restore::{rho_sweep, Formulation, MetricsReport, RestorationSpec, DEFAULT_RHO_GRID};
use crate::spectral::monotonicity_certificate;
use crate::tensor::{Image, Kernel, Tensor};
use crate::trainer::{train, train_linear_kernel, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "monofbf",
    version,
    about = "Monotone operator learning and FBF restoration"
)]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate saturated-blur measurements for a directory of clean images
    Simulate(SimulateArgs),
    /// Train a network (mon, nom, lsq_mon) or a linear kernel (linear)
    Train(TrainArgs),
    /// Estimate min eigenvalues of the symmetric Jacobian over probe images
    Audit(AuditArgs),
    /// Restore a measurement by solving a monotone inclusion with FBF
    Restore(RestoreArgs),
    /// Recover x from F(x) for a monotone operator F
    Invert(InvertArgs),
    /// Print PSNR, SSIM and MAE of an image against a reference
    Metrics(MetricsArgs),
    /// Write procedurally generated test images
    Synth(SynthArgs),
}

/// Where kernels come from: `motion:K` draws K random motion kernels,
/// `delta` is the identity, anything else is a comma-separated list of
/// kernel files.
#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    /// `motion:K`, `delta`, or kernel files separated by commas
    #[arg(long)]
    pub kernels: Option<String>,
    /// Side length of generated kernels (odd)
    #[arg(long, default_value_t = 9)]
    pub kernel_size: usize,
    /// Random-walk length of generated motion kernels
    #[arg(long, default_value_t = 12)]
    pub steps: usize,
    /// Seed of kernel k is kernel_seed + k
    #[arg(long, default_value_t = 0)]
    pub kernel_seed: u64,
}

impl KernelArgs {
    fn resolve(&self) -> Result<Vec<Kernel>> {
        let spec = self
            .kernels
            .as_deref()
            .ok_or_else(|| Error::Config("--kernels is required here".into()))?;
        parse_kernels(spec, self.kernel_size, self.steps, self.kernel_seed)
    }
}

pub fn parse_kernels(spec: &str, size: usize, steps: usize, seed: u64) -> Result<Vec<Kernel>> {
    let spec = spec.trim();
    if let Some(count) = spec.strip_prefix("motion:") {
        let count: usize = count
            .parse()
            .map_err(|_| Error::Config(format!("bad kernel count in {spec:?}")))?;
        if count == 0 {
            return Err(Error::Config("need at least one kernel".into()));
        }
        return (0..count)
            .map(|k| generate_motion_kernel(size, steps, seed.wrapping_add(k as u64)))
            .collect();
    }
    if spec == "delta" {
        return Ok(vec![Kernel::delta(size)?]);
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|p| load_kernel(p.trim()))
        .collect::<Result<Vec<_>>>()
        .and_then(|ks| {
            if ks.is_empty() {
                Err(Error::Config("empty kernel list".into()))
            } else {
                Ok(ks)
            }
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Analytic {
    /// `(1/K) Σ ψ(L_k x)`
    #[value(name = "sat_blur")]
    SatBlur,
    /// First-order expansion of the saturation around 1/2
    Affine,
    /// The affine model without its constant term
    Linear,
}

/// The operator to work with: a checkpoint or one of the analytic models.
#[derive(Debug, Clone, Args, Serialize)]
pub struct OperatorArgs {
    /// Checkpoint written by `train`
    #[arg(
        long,
        conflicts_with = "analytic",
        required_unless_present = "analytic"
    )]
    pub model: Option<PathBuf>,
    /// Analytic forward model built from --kernels and --delta
    #[arg(long, value_enum)]
    pub analytic: Option<Analytic>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Saturation steepness of the analytic models
    #[arg(long, default_value_t = 0.6)]
    pub delta: f64,
}

struct Operator {
    map: Arc<dyn DifferentiableMap>,
    /// A natural `L_lin` for this operator, when there is one.
    lin: Option<Kernel>,
}

impl OperatorArgs {
    fn load(&self) -> Result<Operator> {
        if let Some(path) = &self.model {
            let (model, _) = load_checkpoint(path)?;
            let lin = match &model {
                Model::Linear(k) => Some(k.clone()),
                Model::Net(_) => None,
            };
            return Ok(Operator {
                map: model.into_map(),
                lin,
            });
        }
        let kind = self
            .analytic
            .ok_or_else(|| Error::Config("either --model or --analytic is required".into()))?;
        let kernels = self.kernel.resolve()?;
        let lin = (kernels.len() == 1).then(|| kernels[0].clone());
        let model = SaturatedBlurModel::new(kernels, SaturationParams::new(self.delta)?)?;
        let map: Arc<dyn DifferentiableMap> = match kind {
            Analytic::SatBlur => Arc::new(model),
            Analytic::Affine => Arc::new(model.affine()),
            Analytic::Linear => Arc::new(model.linear()),
        };
        Ok(Operator { map, lin })
    }
}

/// A `.json` path is read as a linear-kernel checkpoint, anything else as
/// a kernel file.
pub fn load_lin_kernel(path: &Path) -> Result<Kernel> {
    if path.extension().is_some_and(|e| e == "json") {
        match load_checkpoint(path)?.0 {
            Model::Linear(k) => Ok(k),
            Model::Net(_) => Err(Error::Config(format!(
                "{} holds a network, not a linear kernel",
                path.display()
            ))),
        }
    } else {
        load_kernel(path)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Directory of clean PGM/F32T images
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 0.6)]
    pub delta: f64,
    /// Standard deviation of the additive Gaussian noise
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    /// Noise seed; image i uses seed + i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `simulate`
    #[arg(long)]
    pub data: PathBuf,
    /// Output prefix: <out>.json, <out>.f32t, <out>_history.csv, ...
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.variant
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides train.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides train.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Linear kernel for lsq_mon (kernel file or linear checkpoint)
    #[arg(long)]
    pub lin_kernel: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AuditArgs {
    #[command(flatten)]
    pub operator: OperatorArgs,
    /// Directory of probe images
    #[arg(long)]
    pub probe_dir: PathBuf,
    /// Center-crop probe images to this side length
    #[arg(long)]
    pub crop: Option<usize>,
    /// Monotonicity level to certify
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Audit x ↦ L^T F(x) instead of F
    #[arg(long)]
    pub lin_kernel: Option<PathBuf>,
    /// JSON run configuration (probe section)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides probe.n_iter
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// Output prefix: <out>.csv and <out>_summary.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// JSON run configuration (armijo, stop, tv, constraint sections)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides stop.max_iter
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Overrides stop.residual_tol
    #[arg(long)]
    pub tol: Option<f64>,
}

impl SolverArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.max_iter {
            cfg.stop.max_iter = m;
        }
        if let Some(t) = self.tol {
            cfg.stop.residual_tol = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RestoreArgs {
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[arg(long, default_value = "direct")]
    pub formulation: Formulation,
    /// TV weight
    #[arg(long, default_value_t = 0.0, conflicts_with = "rho_sweep")]
    pub rho: f64,
    /// Sweep TV weights (comma list, or the default grid when empty); needs --ref
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    pub rho_sweep: Option<String>,
    /// Measurement
    #[arg(long)]
    pub y: PathBuf,
    /// Ground truth for metrics
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// L_lin for least squares (kernel file or linear checkpoint)
    #[arg(long)]
    pub lin_kernel: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output prefix: <out>.pgm, <out>.f32t, <out>_trace.csv, <out>_metrics.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InvertArgs {
    #[command(flatten)]
    pub operator: OperatorArgs,
    /// Image x̄; the operator is inverted at F(x̄)
    #[arg(long)]
    pub x: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output prefix: <out>.pgm, <out>.f32t, <out>_trace.csv, <out>_metrics.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Image i uses seed + i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failure as reported to the user.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: i32,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage".into(),
            message: message.into(),
            code: 1,
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.kind, "message": self.message}).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
            code: if e.is_numerical() { 2 } else { 1 },
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::usage(e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return err.code;
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

pub fn dispatch(command: Command) -> std::result::Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Audit(a) => cmd_audit(&a),
        Command::Restore(a) => cmd_restore(&a),
        Command::Invert(a) => cmd_invert(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// `prefix` with `suffix` appended to its file name.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn snapshot(
    path: &Path,
    command: &str,
    args: &impl Serialize,
    cfg: Option<&RunConfig>,
) -> Result<()> {
    write_json(
        path,
        &json!({"command": command, "args": args, "config": cfg}),
    )
}

fn write_image(prefix: &Path, image: &Image) -> Result<()> {
    io::write_pgm(with_suffix(prefix, ".pgm"), image)?;
    io::write_f32t(with_suffix(prefix, ".f32t"), image.as_tensor())
}

fn cmd_simulate(a: &SimulateArgs) -> std::result::Result<(), CliError> {
    let kernels = a.kernel.resolve()?;
    let model = SaturatedBlurModel::new(kernels, SaturationParams::new(a.delta)?)?;
    let noise = NoiseModel::new(a.sigma, a.seed)?;
    let n = simulate_dataset(&a.clean_dir, &model, &noise, &a.out_dir)?;
    snapshot(&a.out_dir.join(SNAPSHOT_FILE), "simulate", a, None)?;
    log::info!("simulated {n} pairs into {}", a.out_dir.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> std::result::Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.train.variant = v;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let dataset = load_dataset(&a.data)?;
    ensure_parent(&a.out)?;

    let (model, history) = if cfg.train.variant == Variant::Linear {
        let (k, h) = train_linear_kernel(&dataset, cfg.linear_kernel_size(), &cfg.train)?;
        save_kernel(with_suffix(&a.out, "_kernel.f32t"), &k)?;
        (Model::Linear(k), h)
    } else {
        let lin = a.lin_kernel.as_deref().map(load_lin_kernel).transpose()?;
        let mut net = cfg.model.build(cfg.seed)?;
        log::info!("training {} parameters", net.num_params());
        let h = train(&mut net, &dataset, &cfg.train, lin.as_ref())?;
        (Model::Net(net), h)
    };

    let last = history.epochs.last();
    let metadata = json!({
        "variant": cfg.train.variant,
        "train": cfg.train,
        "epochs_run": history.epochs.len(),
        "final_data_loss": last.map(|r| r.data_loss),
        "lin_kernel": a.lin_kernel,
    });
    save_checkpoint(with_suffix(&a.out, ".json"), &model, metadata)?;
    write_text(&with_suffix(&a.out, "_history.csv"), &history.to_csv())?;
    snapshot(
        &with_suffix(&a.out, "_resolved_config.json"),
        "train",
        a,
        Some(&cfg),
    )?;
    Ok(())
}

fn center_crop(image: &Image, side: usize) -> Result<Image> {
    if side > image.height() || side > image.width() {
        return Err(Error::Config(format!(
            "crop {side} exceeds image size {}x{}",
            image.height(),
            image.width()
        )));
    }
    image.crop(
        (image.height() - side) / 2,
        (image.width() - side) / 2,
        side,
        side,
    )
}

fn cmd_audit(a: &AuditArgs) -> std::result::Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = a.n_iter {
        cfg.probe.n_iter = n;
    }
    cfg.validate()?;
    let op = a.operator.load()?;
    let map: Arc<dyn DifferentiableMap> = match &a.lin_kernel {
        Some(p) => Arc::new(AdjointComposite::new(load_lin_kernel(p)?, 1.0, op.map)),
        None => op.map,
    };
    let images = read_image_dir(&a.probe_dir)?;
    if images.is_empty() {
        return Err(Error::Config(format!("no probe images in {}", a.probe_dir.display())).into());
    }
    let probes = images
        .iter()
        .map(|(_, im)| match a.crop {
            Some(s) => center_crop(im, s).map(Image::into_tensor),
            None => Ok(im.as_tensor().clone()),
        })
        .collect::<Result<Vec<Tensor>>>()?;
    let report = monotonicity_certificate(&map, &probes, a.beta, &cfg.probe)?;

    ensure_parent(&a.out)?;
    write_text(&with_suffix(&a.out, ".csv"), &report.to_csv())?;
    let names: Vec<&str> = images.iter().map(|(n, _)| n.as_str()).collect();
    let summary = json!({
        "min_lambda_min": report.min_lambda_t,
        "beta": report.beta,
        "passed": report.passed,
        "samples": report.samples.len(),
        "n_iter": cfg.probe.n_iter,
        "probe_files": names,
    });
    write_json(&with_suffix(&a.out, "_summary.json"), &summary)?;
    snapshot(
        &with_suffix(&a.out, "_resolved_config.json"),
        "audit",
        a,
        Some(&cfg),
    )?;
    println!("{summary}");
    Ok(())
}

fn parse_rho_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(DEFAULT_RHO_GRID.to_vec());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad rho value {v:?}")))
        })
        .collect()
}

fn cmd_restore(a: &RestoreArgs) -> std::result::Result<(), CliError> {
    let cfg = a.solver.resolve()?;
    let op = a.operator.load()?;
    let y = io::read_image(&a.y)?;
    let truth = a.reference.as_deref().map(io::read_image).transpose()?;
    let lin = match (&a.lin_kernel, a.formulation) {
        (Some(p), _) => Some(load_lin_kernel(p)?),
        (None, Formulation::LeastSquares) => Some(op.lin.ok_or_else(|| {
            Error::Config("least squares needs --lin-kernel for this operator".into())
        })?),
        (None, Formulation::Direct) => None,
    };
    let mut template = RestorationSpec::new(a.formulation, op.map, lin, y.clone());
    template.tv = cfg.tv;
    template.constraint = cfg.constraint;
    template.armijo = cfg.armijo;
    template.stop = cfg.stop;

    ensure_parent(&a.out)?;
    let (rho, restoration) = match &a.rho_sweep {
        Some(list) => {
            let truth = truth
                .as_ref()
                .ok_or_else(|| CliError::usage("--rho-sweep needs --ref"))?;
            let rhos = parse_rho_list(list)?;
            let (table, mut results) = rho_sweep(&template, &rhos, truth)?;
            write_text(&with_suffix(&a.out, "_sweep.csv"), &table.to_csv())?;
            let best = table.best.ok_or_else(|| CliError {
                kind: "sweep_failed".into(),
                message: table
                    .rows
                    .iter()
                    .filter_map(|r| r.error.clone())
                    .next()
                    .unwrap_or_else(|| "every sweep entry failed".into()),
                code: 2,
            })?;
            let r = results[best].take().expect("best row has a restoration");
            (rhos[best], r)
        }
        None => (a.rho, template.with_rho(a.rho).solve()?),
    };

    write_image(&a.out, &restoration.x_hat)?;
    write_text(
        &with_suffix(&a.out, "_trace.csv"),
        &restoration.trace.to_csv(),
    )?;
    let metrics = truth
        .as_ref()
        .map(|t| MetricsReport::compute(&restoration.x_hat, t))
        .transpose()?;
    let measurement = truth
        .as_ref()
        .map(|t| MetricsReport::compute(&y, t))
        .transpose()?;
    let report = json!({
        "formulation": a.formulation,
        "rho": rho,
        "iterations": restoration.trace.iterations(),
        "converged": restoration.trace.converged,
        "final_residual": restoration.trace.final_residual(),
        "metrics": metrics,
        "measurement_metrics": measurement,
    });
    write_json(&with_suffix(&a.out, "_metrics.json"), &report)?;
    snapshot(
        &with_suffix(&a.out, "_resolved_config.json"),
        "restore",
        a,
        Some(&cfg),
    )?;
    Ok(())
}

fn cmd_invert(a: &InvertArgs) -> std::result::Result<(), CliError> {
    let cfg = a.solver.resolve()?;
    let op = a.operator.load()?;
    let x_bar = io::read_image(&a.x)?;
    let (x, trace) = invert_operator(
        op.map,
        x_bar.as_tensor(),
        &cfg.constraint,
        &cfg.armijo,
        &cfg.stop,
    )?;
    let x = Image::from_tensor(x)?;
    ensure_parent(&a.out)?;
    write_image(&a.out, &x)?;
    write_text(&with_suffix(&a.out, "_trace.csv"), &trace.to_csv())?;
    let report = json!({
        "iterations": trace.iterations(),
        "converged": trace.converged,
        "final_residual": trace.final_residual(),
        "metrics": MetricsReport::compute(&x, &x_bar)?,
    });
    write_json(&with_suffix(&a.out, "_metrics.json"), &report)?;
    snapshot(
        &with_suffix(&a.out, "_resolved_config.json"),
        "invert",
        a,
        Some(&cfg),
    )?;
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs) -> std::result::Result<(), CliError> {
    let x = io::read_image(&a.x)?;
    let r = io::read_image(&a.reference)?;
    println!(
        "{}",
        serde_json::to_string(&MetricsReport::compute(&x, &r)?).map_err(Error::from)?
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> std::result::Result<(), CliError> {
    if a.count == 0 || a.height == 0 || a.width == 0 {
        return Err(CliError::usage("count, height and width must be positive"));
    }
    write_synthetic_set(&a.out_dir, a.count, a.height, a.width, a.seed)?;
    snapshot(&a.out_dir.join(SNAPSHOT_FILE), "synth", a, None)?;
    Ok(())
}
