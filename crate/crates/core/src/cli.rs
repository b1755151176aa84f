//! Command-line front end. Exit codes: 0 success, 2 bad arguments or invalid
//! inputs, 3 I/O and file-format errors, 4 divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::deform;
use crate::error::{Error, Result};
use crate::grid::{CropWindow, DenseField, LowResField};
use crate::io::{self, FieldData, RawDtype};
use crate::metrics::{self, MetricReport};
use crate::objective::{LossConfig, Similarity};
use crate::optimize::{self, OptimConfig, RegistrationReport};
use crate::spectral;
use crate::synth::{self, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Fields are stored in double precision so file round trips are lossless.
const FIELD_DTYPE: RawDtype = RawDtype::Float64;

#[derive(Debug, Parser)]
#[command(name = "bandreg", version, about = "Band-limited deformable image registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a moving image onto a fixed image.
    Register(RegisterArgs),
    /// Warp an image or label map with a displacement field.
    Warp(WarpArgs),
    /// Exponentiate a stationary velocity field by scaling and squaring.
    Exp(ExpArgs),
    /// Decode a low-resolution field to a full-resolution displacement.
    Decode(DecodeArgs),
    /// Project a dense field onto its band and store the low-resolution field.
    Encode(EncodeArgs),
    /// Dice, HD95 and folding between two label maps.
    Metrics(MetricsArgs),
    /// Generate a synthetic image pair with known deformation.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    /// Band extents, e.g. 16,24.
    #[arg(long, value_delimiter = ',')]
    pub band: Option<Vec<usize>>,
    #[arg(long)]
    pub diffeo: bool,
    #[arg(long)]
    pub sim: Option<Similarity>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// TOML file with a `[register]` section; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label map of the moving image, for Dice/HD95 in the report.
    #[arg(long)]
    pub moving_labels: Option<PathBuf>,
    #[arg(long)]
    pub fixed_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Field manifest, or a directory holding `phi.toml`.
    #[arg(long)]
    pub field: PathBuf,
    /// Nearest-neighbor warping of a label map.
    #[arg(long)]
    pub labels: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = deform::DEFAULT_SQUARING_STEPS)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Expected full-grid dims; checked against the manifest.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub band: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Displacement field whose folding percentage is reported.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub band: Option<Vec<usize>>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub blobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `[synth]` section; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Optional settings read from a config file, `[register]` section.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSection {
    pub band: Option<Vec<usize>>,
    pub diffeo: Option<bool>,
    pub similarity: Option<Similarity>,
    pub lambda: Option<f64>,
    pub ncc_window: Option<usize>,
    pub epsilon: Option<f64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub seed: Option<u64>,
}

impl From<&OptimConfig> for RegisterSection {
    fn from(c: &OptimConfig) -> Self {
        Self {
            band: Some(c.band_dims.clone()),
            diffeo: Some(c.diffeo),
            similarity: Some(c.loss.similarity),
            lambda: Some(c.loss.lambda),
            ncc_window: Some(c.loss.ncc_window),
            epsilon: Some(c.loss.epsilon),
            iterations: Some(c.iterations),
            learning_rate: Some(c.learning_rate),
            adam_beta1: Some(c.adam_beta1),
            adam_beta2: Some(c.adam_beta2),
            adam_eps: Some(c.adam_eps),
            convergence_tol: Some(c.convergence_tol),
            seed: Some(c.seed),
        }
    }
}

/// Config file layout; also the layout of the echoed `config.toml`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub register: Option<RegisterSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

/// Merges flags over the config-file section over built-in defaults.
pub fn effective_register_config(args: &RegisterArgs, file: &RegisterSection) -> Result<OptimConfig> {
    let similarity = args.sim.or(file.similarity).unwrap_or(Similarity::Mse);
    let mut loss = LossConfig::for_similarity(similarity);
    if let Some(l) = args.lambda.or(file.lambda) {
        loss.lambda = l;
    }
    if let Some(w) = file.ncc_window {
        loss.ncc_window = w;
    }
    if let Some(e) = file.epsilon {
        loss.epsilon = e;
    }
    let d = OptimConfig::default();
    let band_dims = args
        .band
        .clone()
        .or_else(|| file.band.clone())
        .ok_or_else(|| Error::InvalidParameter("--band is required (flag or config file)".into()))?;
    let config = OptimConfig {
        iterations: args.iters.or(file.iterations).unwrap_or(d.iterations),
        learning_rate: args.lr.or(file.learning_rate).unwrap_or(d.learning_rate),
        adam_beta1: file.adam_beta1.unwrap_or(d.adam_beta1),
        adam_beta2: file.adam_beta2.unwrap_or(d.adam_beta2),
        adam_eps: file.adam_eps.unwrap_or(d.adam_eps),
        loss,
        diffeo: args.diffeo || file.diffeo.unwrap_or(false),
        band_dims,
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        convergence_tol: file.convergence_tol.unwrap_or(d.convergence_tol),
        log_every: d.log_every,
    };
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::InvalidParameter(format!("cannot serialize report: {e}")))
}

/// Accepts a manifest path or a directory containing `phi.toml`.
fn field_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("phi.toml")
    } else {
        p.to_path_buf()
    }
}

/// Reads a displacement; low-resolution fields are decoded.
fn read_displacement(p: &Path) -> Result<DenseField> {
    match io::read_field(field_path(p))? {
        FieldData::Dense(f) => Ok(f),
        FieldData::LowRes(s) => spectral::decode(&s),
    }
}

fn middle_slice(dims: &[usize]) -> (usize, usize) {
    (0, dims[0] / 2)
}

/// Report keys must be strings in TOML.
#[derive(Debug, Serialize)]
struct MetricSection {
    dice_per_label: std::collections::BTreeMap<String, f64>,
    dice_mean: f64,
    dice_skipped: Vec<u32>,
    hd95_per_label: std::collections::BTreeMap<String, f64>,
    hd95_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    folding_percent: Option<f64>,
}

impl From<MetricReport> for MetricSection {
    fn from(r: MetricReport) -> Self {
        let keyed = |m: std::collections::BTreeMap<u32, f64>| m.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        Self {
            dice_per_label: keyed(r.dice_per_label),
            dice_mean: r.dice_mean,
            dice_skipped: r.dice_skipped,
            hd95_per_label: keyed(r.hd95_per_label),
            hd95_mean: r.hd95_mean,
            folding_percent: r.folding_percent,
        }
    }
}

#[derive(Debug, Serialize)]
struct RegisterOutput {
    registration: RegistrationReport,
    initial_similarity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    folding_percent: Option<f64>,
}

fn cmd_register(args: &RegisterArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let config = effective_register_config(args, &file.register.unwrap_or_default())?;
    let (moving, meta) = io::read_image(&args.moving)?;
    let (fixed, _) = io::read_image(&args.fixed)?;
    let labels = match (&args.moving_labels, &args.fixed_labels) {
        (Some(a), Some(b)) => Some((io::read_labels(a)?.0, io::read_labels(b)?.0)),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidParameter(
                "--moving-labels and --fixed-labels must be given together".into(),
            ))
        }
    };
    CropWindow::new(moving.grid(), &config.band_dims)?;

    create_dir(&args.out)?;
    let echo = ConfigFile {
        register: Some(RegisterSection::from(&config)),
        synth: None,
    };
    write_text(&args.out.join("config.toml"), &to_toml(&echo)?)?;

    let initial = match config.loss.similarity {
        Similarity::Mse => crate::objective::mse(&moving, &fixed)?.value,
        Similarity::Ncc => crate::objective::ncc_local(&moving, &fixed, &config.loss)?.value,
    };
    let reg = optimize::register(&moving, &fixed, &config)?;
    let warped = deform::warp(&moving, &reg.phi)?;

    let out = &args.out;
    io::write_field(out.join("phi.toml"), &reg.phi.clone().into(), FIELD_DTYPE)?;
    io::write_field(out.join("s.toml"), &reg.s.clone().into(), FIELD_DTYPE)?;
    for (c, lane) in reg.phi.channels().iter().enumerate() {
        io::write_nifti(out.join(format!("phi_c{c}.nii")), reg.phi.grid().dims(), lane, Some(&meta), Default::default())?;
    }
    io::write_image(out.join("warped.nii"), &warped, Some(&meta))?;

    let (axis, index) = middle_slice(moving.grid().dims());
    io::render_slice(&warped, axis, index, out.join("warped.pgm"))?;
    io::render_slice(&fixed, axis, index, out.join("fixed.pgm"))?;
    io::render_slice(&moving, axis, index, out.join("moving.pgm"))?;
    io::render_grid(&reg.phi, 4, axis, index, out.join("grid.ppm"))?;
    for c in 0..reg.phi.channels().len() {
        io::render_spectrum(&reg.phi, c, axis, index, out.join(format!("spectrum_c{c}.pgm")))?;
    }

    let metric = match labels {
        Some((lm, lf)) => {
            let warped_labels = metrics::warp_labels(&lm, &reg.phi)?;
            io::write_labels(out.join("warped_labels.nii"), &warped_labels, Some(&meta))?;
            Some(metrics::evaluate(&warped_labels, &lf, None, Some(&reg.phi))?.into())
        }
        None => None,
    };
    let folding = metric.is_none().then_some(reg.report.folding_percent);
    let report = RegisterOutput {
        registration: reg.report,
        initial_similarity: initial,
        metrics: metric,
        folding_percent: folding,
    };
    write_text(&out.join("report.toml"), &to_toml(&report)?)?;
    log::info!(
        "loss {:.6e} after {} iterations; report in {}",
        report.registration.final_loss,
        report.registration.iterations_run,
        out.display()
    );
    Ok(())
}

fn cmd_warp(args: &WarpArgs) -> Result<()> {
    let phi = read_displacement(&args.field)?;
    if args.labels {
        let (labels, meta) = io::read_labels(&args.image)?;
        let warped = metrics::warp_labels(&labels, &phi)?;
        io::write_labels(&args.out, &warped, Some(&meta))
    } else {
        let (image, meta) = io::read_image(&args.image)?;
        let warped = deform::warp(&image, &phi)?;
        io::write_image(&args.out, &warped, Some(&meta))
    }
}

fn cmd_exp(args: &ExpArgs) -> Result<()> {
    let v = read_displacement(&args.field)?;
    let phi = deform::exp_velocity(&v, args.steps)?;
    io::write_field(&args.out, &phi.into(), FIELD_DTYPE)
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let s: LowResField = io::read_field(&args.input)?.into_low_res()?;
    if let Some(dims) = &args.dims {
        if dims.as_slice() != s.window().parent().dims() {
            return Err(Error::ShapeMismatch(format!(
                "--dims {dims:?} but the field was stored for {:?}",
                s.window().parent().dims()
            )));
        }
    }
    let phi = spectral::decode(&s)?;
    io::write_field(&args.out, &phi.into(), FIELD_DTYPE)
}

#[derive(Debug, Serialize)]
struct EncodeSummary {
    band_dims: Vec<usize>,
    imag_residual: f64,
    discarded_energy_fraction: f64,
}

fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let phi = io::read_field(&args.input)?.into_dense()?;
    let window = CropWindow::new(phi.grid(), &args.band)?;
    let enc = spectral::encode(&phi, &window)?;
    io::write_field(&args.out, &enc.low_res.into(), FIELD_DTYPE)?;
    print!(
        "{}",
        to_toml(&EncodeSummary {
            band_dims: args.band.clone(),
            imag_residual: enc.imag_residual,
            discarded_energy_fraction: enc.discarded_energy_fraction,
        })?
    );
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let (a, _) = io::read_labels(&args.a)?;
    let (b, _) = io::read_labels(&args.b)?;
    let phi = args.field.as_deref().map(read_displacement).transpose()?;
    let report = metrics::evaluate(&a, &b, args.labels.as_deref(), phi.as_ref())?;
    print!("{}", to_toml(&MetricSection::from(report))?);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let mut config = file.synth.unwrap_or_default();
    if let Some(d) = &args.dims {
        config.dims = d.clone();
    }
    if let Some(b) = &args.band {
        config.band_dims = b.clone();
    }
    if let Some(a) = args.amplitude {
        config.amplitude = a;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.blobs {
        config.blob_count = n;
    }
    let pair = synth::make_pair(&config)?;
    let out = &args.out;
    create_dir(out)?;
    let echo = ConfigFile {
        register: None,
        synth: Some(config.clone()),
    };
    write_text(&out.join("config.toml"), &to_toml(&echo)?)?;
    io::write_image(out.join("moving.nii"), &pair.moving, None)?;
    io::write_image(out.join("fixed.nii"), &pair.fixed, None)?;
    io::write_labels(out.join("labels_moving.nii"), &pair.labels_moving, None)?;
    io::write_labels(out.join("labels_fixed.nii"), &pair.labels_fixed, None)?;
    io::write_field(out.join("phi_gt.toml"), &pair.phi_gt.into(), FIELD_DTYPE)?;
    io::write_field(out.join("s_gt.toml"), &pair.s_gt.into(), FIELD_DTYPE)
}

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGED,
        e if e.is_io() => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Warp(a) => cmd_warp(a),
        Command::Exp(a) => cmd_exp(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args` (including the program name), runs the command, and returns
/// the process exit code. Errors go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
