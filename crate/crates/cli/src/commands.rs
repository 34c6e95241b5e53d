//! Subcommand dispatch: denoise / inpaint / sr / metrics / corrupt.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hsprior_core::adam::AdamParams;
use hsprior_core::corruption;
use hsprior_core::engine;
use hsprior_core::metrics;
use hsprior_core::{ArchSpec, HyperCube, Mask, Task, TaskConfig, Variant};
use thiserror::Error;

use crate::config::{self, ConfigError, RunConfig};
use crate::io::{self, IoError};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] hsprior_core::Error),
    #[error("{0}")]
    Msg(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "hsprior",
    about = "Restore a single corrupted hyperspectral cube with an untrained convolutional prior",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove noise from a corrupted cube
    Denoise(RestoreArgs),
    /// Fill pixels hidden by a binary mask
    Inpaint(RestoreArgs),
    /// Upscale the spatial resolution of a low-res cube
    Sr(RestoreArgs),
    /// Print MPSNR / MSSIM / SAM between a cube and a reference
    Metrics(MetricsArgs),
    /// Fabricate a degraded observation from a clean cube
    Corrupt(CorruptArgs),
}

#[derive(Args, Default)]
struct RestoreArgs {
    /// Corrupted observation cube
    #[arg(long)]
    input: Option<PathBuf>,
    /// Restored cube destination
    #[arg(long)]
    output: Option<PathBuf>,
    /// Binary observation mask (inpaint only)
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Clean cube; when given, the metric report is printed and tracked
    #[arg(long)]
    reference: Option<PathBuf>,
    /// key = value run configuration file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the per-iteration energy trajectory as CSV
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Network variant: 2d or 3d
    #[arg(long)]
    arch: Option<String>,
    /// Encoder/decoder depth
    #[arg(long)]
    levels: Option<usize>,
    /// Per-level channel widths, comma separated
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    kernel_size: Option<usize>,
    /// true/false, or a per-level comma list
    #[arg(long)]
    skip: Option<String>,
    #[arg(long)]
    skip_channels: Option<usize>,
    /// nearest or linear
    #[arg(long)]
    upsample: Option<String>,
    /// Per-channel normalization after interior convolutions (true/false)
    #[arg(long)]
    normalize: Option<bool>,
    /// Upper end of the uniform input noise
    #[arg(long)]
    input_noise: Option<f64>,
    /// Per-iteration Gaussian input perturbation sigma (0 = off)
    #[arg(long)]
    perturb_sigma: Option<f64>,
    /// Spatial upscale factor (sr only)
    #[arg(long)]
    sr_factor: Option<usize>,
    /// fixed, or patience:<window>:<min_delta>
    #[arg(long)]
    stop: Option<String>,
    /// Also export a false-color preview of the restored cube
    #[arg(long)]
    falsecolor: Option<PathBuf>,
    /// Bands for the preview, e.g. 57,27,17
    #[arg(long, value_delimiter = ',')]
    falsecolor_bands: Option<Vec<usize>>,
    /// Replace existing output files
    #[arg(long)]
    overwrite: bool,
    /// Include wall-clock milliseconds in the history CSV (makes the file
    /// non-reproducible across runs)
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Print one CSV line instead of the aligned report
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// noise, stripes, or downsample
    #[arg(long)]
    kind: String,
    /// Noise std-dev on the [0,1] scale
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 6)]
    stripe_count: usize,
    #[arg(long, default_value_t = 1)]
    stripe_width: usize,
    /// Bands hit by stripes, as start:end (end exclusive); all bands if absent
    #[arg(long)]
    band_range: Option<String>,
    /// Fixed stripe start columns, comma separated (overrides random placement)
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<usize>>,
    /// Where to write the stripe mask
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Spatial downsampling factor
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    overwrite: bool,
}

/// Parses argv (including the program name) and runs the pipeline.
/// Returns the process exit code; failures print one-line diagnostics.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here with success status
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Denoise(args) => run_restore(Task::Denoise, args),
        Command::Inpaint(args) => run_restore(Task::Inpaint, args),
        Command::Sr(args) => run_restore(Task::Superres, args),
        Command::Metrics(args) => run_metrics(args),
        Command::Corrupt(args) => run_corrupt(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hsprior: {e}");
            1
        }
    }
}

fn flags_to_config(args: &RestoreArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        input: args.input.clone(),
        output: args.output.clone(),
        mask: args.mask.clone(),
        reference: args.reference.clone(),
        history: args.history.clone(),
        iters: args.iters,
        lr: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        eps: args.eps,
        seed: args.seed,
        levels: args.levels,
        kernel_size: args.kernel_size,
        skip_channels: args.skip_channels,
        normalize: args.normalize,
        input_noise: args.input_noise,
        perturb_sigma: args.perturb_sigma,
        sr_factor: args.sr_factor,
        ..RunConfig::default()
    };
    if let Some(a) = &args.arch {
        cfg.arch = Some(
            config::parse_variant(a)
                .ok_or_else(|| CliError::Msg(format!("--arch expects 2d or 3d, got `{a}`")))?,
        );
    }
    if let Some(c) = &args.channels {
        let parsed: std::result::Result<Vec<usize>, _> =
            c.split(',').map(|v| v.trim().parse()).collect();
        cfg.channels =
            Some(parsed.map_err(|_| {
                CliError::Msg(format!("--channels expects integers, got `{c}`"))
            })?);
    }
    if let Some(s) = &args.skip {
        let parsed: std::result::Result<Vec<bool>, _> =
            s.split(',').map(|v| v.trim().parse()).collect();
        cfg.skip = Some(parsed.map_err(|_| {
            CliError::Msg(format!("--skip expects true/false values, got `{s}`"))
        })?);
    }
    if let Some(u) = &args.upsample {
        cfg.upsample = Some(config::parse_upsample(u).ok_or_else(|| {
            CliError::Msg(format!("--upsample expects nearest or linear, got `{u}`"))
        })?);
    }
    if let Some(s) = &args.stop {
        cfg.stop = Some(config::parse_stop(s).ok_or_else(|| {
            CliError::Msg(format!(
                "--stop expects fixed or patience:<window>:<min_delta>, got `{s}`"
            ))
        })?);
    }
    Ok(cfg)
}

fn load_merged_config(args: &RestoreArgs) -> Result<RunConfig> {
    let flags = flags_to_config(args)?;
    Ok(match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| IoError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let file = RunConfig::parse(&text, &path.display().to_string())?;
            flags.or_else_from(file)
        }
        None => flags,
    })
}

fn default_widths(variant: Variant, levels: usize) -> Vec<usize> {
    match variant {
        Variant::TwoD => (0..levels).map(|i| (16usize << i).min(128)).collect(),
        Variant::ThreeD => {
            const PATTERN: [usize; 5] = [4, 8, 32, 128, 256];
            (0..levels).map(|i| PATTERN[i.min(4)]).collect()
        }
    }
}

fn build_arch(cfg: &RunConfig, input_shape: [usize; 3]) -> Result<ArchSpec> {
    let variant = cfg.arch.unwrap_or(Variant::TwoD);
    let mut arch = match variant {
        Variant::TwoD => ArchSpec::default_2d(input_shape),
        Variant::ThreeD => ArchSpec::default_3d(input_shape),
    };
    match (&cfg.channels, cfg.levels) {
        (Some(channels), levels) => {
            if let Some(l) = levels {
                if l != channels.len() {
                    return Err(CliError::Msg(format!(
                        "levels = {l} disagrees with {} channel entries",
                        channels.len()
                    )));
                }
            }
            arch.levels = channels.len();
            arch.channels_per_level = channels.clone();
        }
        (None, Some(levels)) => {
            arch.levels = levels;
            arch.channels_per_level = default_widths(variant, levels);
        }
        (None, None) => {}
    }
    if let Some(k) = cfg.kernel_size {
        arch.kernel_size = k;
    }
    arch.skip = match &cfg.skip {
        Some(s) if s.len() == 1 => vec![s[0]; arch.levels],
        Some(s) if s.len() == arch.levels => s.clone(),
        Some(s) => {
            return Err(CliError::Msg(format!(
                "skip has {} entries for {} levels",
                s.len(),
                arch.levels
            )))
        }
        None => vec![true; arch.levels],
    };
    if let Some(sc) = cfg.skip_channels {
        arch.skip_channels = sc;
    }
    if let Some(u) = cfg.upsample {
        arch.upsample_mode = u;
    }
    if let Some(n) = cfg.normalize {
        arch.normalize = n;
    }
    Ok(arch)
}

fn require<T: Clone>(v: &Option<T>, key: &'static str) -> Result<T> {
    v.clone()
        .ok_or(CliError::Config(ConfigError::MissingKey { key }))
}

fn run_restore(task: Task, args: RestoreArgs) -> Result<()> {
    let overwrite = args.overwrite;
    let timings = args.timings;
    let falsecolor = args.falsecolor.clone();
    let falsecolor_bands = args.falsecolor_bands.clone();
    let cfg = load_merged_config(&args)?;
    if let Some(t) = cfg.task {
        if t != task {
            return Err(CliError::Msg(format!(
                "config task {t:?} disagrees with the subcommand"
            )));
        }
    }

    let input_path = require(&cfg.input, "input")?;
    let output_path = require(&cfg.output, "output")?;
    let loaded = io::read_cube(&input_path)?;

    let mask = match (task, &cfg.mask) {
        (Task::Inpaint, Some(path)) => Some(io::read_mask(path)?),
        (Task::Inpaint, None) => {
            return Err(CliError::Config(ConfigError::MissingKey { key: "mask" }))
        }
        (_, Some(_)) => {
            return Err(CliError::Msg(
                "--mask is only meaningful for the inpaint task".into(),
            ))
        }
        _ => None,
    };
    let reference = match &cfg.reference {
        Some(path) => Some(io::read_cube(path)?.cube),
        None => None,
    };

    let sr_factor = match task {
        Task::Superres => cfg.sr_factor.unwrap_or(2),
        _ => 1,
    };
    let x0 = &loaded.cube;
    let net_shape = match task {
        Task::Superres => [
            x0.bands(),
            x0.height() * sr_factor,
            x0.width() * sr_factor,
        ],
        _ => [x0.bands(), x0.height(), x0.width()],
    };
    let arch = build_arch(&cfg, net_shape)?;

    let seed = cfg.seed.unwrap_or(0);
    let mut tc = match task {
        Task::Denoise => TaskConfig::denoise(arch, seed),
        Task::Inpaint => TaskConfig::inpaint(arch, seed),
        Task::Superres => TaskConfig::superres(arch, seed, sr_factor),
    };
    if let Some(it) = cfg.iters {
        tc.iters = it;
    }
    let defaults = AdamParams::default();
    tc.adam = AdamParams {
        lr: cfg.lr.unwrap_or(defaults.lr),
        beta1: cfg.beta1.unwrap_or(defaults.beta1),
        beta2: cfg.beta2.unwrap_or(defaults.beta2),
        eps: cfg.eps.unwrap_or(defaults.eps),
    };
    if let Some(b) = cfg.input_noise {
        tc.input_noise_range = b;
    }
    if let Some(s) = cfg.perturb_sigma {
        tc.perturb_sigma = s;
    }
    if let Some(stop) = cfg.stop {
        tc.stop = stop;
    }

    let (restored, history) =
        engine::restore(&tc, x0, mask.as_ref(), reference.as_ref())?;

    io::write_cube(&output_path, &restored, loaded.range, overwrite)?;
    if let Some(hist_path) = &cfg.history {
        let mut buf = Vec::new();
        history
            .write_csv(&mut buf, timings)
            .map_err(|e| IoError::Io {
                path: hist_path.display().to_string(),
                source: e,
            })?;
        write_atomic(hist_path, &buf, overwrite)?;
    }
    if let Some(fc_path) = &falsecolor {
        let bands = preview_bands(&restored, falsecolor_bands)?;
        io::export_falsecolor(&restored, bands, fc_path, overwrite)?;
    }

    println!(
        "{:?} finished: {} iterations, best energy {:e} at iteration {}",
        task,
        history.len(),
        history.best_energy(),
        history.best_index()
    );
    if let Some(r) = &reference {
        println!("{}", metrics::report(&restored, r)?);
    }
    Ok(())
}

fn preview_bands(cube: &HyperCube, requested: Option<Vec<usize>>) -> Result<[usize; 3]> {
    match requested {
        Some(v) => {
            if v.len() != 3 {
                return Err(CliError::Msg(format!(
                    "--falsecolor-bands expects exactly 3 indices, got {}",
                    v.len()
                )));
            }
            Ok([v[0], v[1], v[2]])
        }
        None => {
            let b = cube.bands();
            Ok([(b * 3) / 4, b / 2, b / 4])
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8], overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(CliError::Io(IoError::WouldOverwrite {
            path: path.display().to_string(),
        }));
    }
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, bytes).map_err(|e| IoError::Io {
        path: tmp.display().to_string(),
        source: e,
    })?;
    fs::rename(&tmp, path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<()> {
    let x = io::read_cube(&args.input)?.cube;
    let r = io::read_cube(&args.reference)?.cube;
    let report = metrics::report(&x, &r)?;
    if args.csv {
        println!("{}", hsprior_core::MetricReport::csv_header());
        println!("{}", report.csv_line());
    } else {
        println!("{report}");
    }
    Ok(())
}

fn parse_band_range(s: &str, bands: usize) -> Result<std::ops::Range<usize>> {
    let err = || {
        CliError::Msg(format!(
            "--band-range expects start:end with end <= {bands}, got `{s}`"
        ))
    };
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let start: usize = a.trim().parse().map_err(|_| err())?;
    let end: usize = b.trim().parse().map_err(|_| err())?;
    if start >= end || end > bands {
        return Err(err());
    }
    Ok(start..end)
}

fn run_corrupt(args: CorruptArgs) -> Result<()> {
    let loaded = io::read_cube(&args.input)?;
    let x = &loaded.cube;
    let (corrupted, mask): (HyperCube, Option<Mask>) = match args.kind.as_str() {
        "noise" => {
            let sigma = args.sigma.ok_or(CliError::Config(ConfigError::MissingKey {
                key: "sigma",
            }))?;
            (corruption::add_gaussian_noise(x, sigma, args.seed)?, None)
        }
        "stripes" => {
            let range = match &args.band_range {
                Some(s) => parse_band_range(s, x.bands())?,
                None => 0..x.bands(),
            };
            let shape = [x.bands(), x.height(), x.width()];
            let mask = match &args.columns {
                Some(cols) => corruption::stripe_mask_at_columns(
                    shape,
                    cols,
                    args.stripe_width,
                    range,
                )?,
                None => corruption::make_stripe_mask(
                    shape,
                    args.stripe_count,
                    args.stripe_width,
                    range,
                    args.seed,
                )?,
            };
            (corruption::apply_mask(x, &mask), Some(mask))
        }
        "downsample" => {
            let alpha = args.alpha.ok_or(CliError::Config(ConfigError::MissingKey {
                key: "alpha",
            }))?;
            (corruption::downsample_observation(x, alpha)?, None)
        }
        other => {
            return Err(CliError::Msg(format!(
                "--kind expects noise, stripes, or downsample, got `{other}`"
            )))
        }
    };

    io::write_cube(&args.output, &corrupted, loaded.range, args.overwrite)?;
    match (mask, &args.mask_out) {
        (Some(m), Some(path)) => io::write_mask(path, &m, args.overwrite)?,
        (Some(_), None) => {
            return Err(CliError::Msg(
                "stripe corruption requires --mask-out for the mask file".into(),
            ))
        }
        _ => {}
    }
    println!("wrote {}", args.output.display());
    Ok(())
}
