//! `qdm` command-line front end.
//!
//! Run parameters come from (in increasing precedence) built-in defaults,
//! an optional `--config` file and command-line flags. Config files use
//! `key = value` lines with explicit unit suffixes, the same quantity
//! grammar as scene files:
//!
//! ```text
//! scene    = example2.scene
//! grid     = 50x50
//! height   = 20nm
//! dwell    = 200us
//! pipeline = stochastic
//! steps    = 8000000
//! rabi     = 10MHz     # probe transition frequency
//! gamma_q  = 0.1MHz    # intrinsic dephasing (as a frequency)
//! kappa    = 0.1
//! dt       = 10ns
//! ```
//!
//! In normalized scenes `rabi`, `detuning`, `gamma_q` and `dt` are bare
//! numbers in the scene's units (`rabi` is the transition energy).
//!
//! Exit codes: 0 success, 1 usage, 2 configuration or scene error,
//! 3 runtime failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{QdmError, Result};
use crate::measurement::{ProbeConfig, WeakMeasurementChannel};
use crate::output::{self, Manifest, OUT_ROOT_ENV};
use crate::presets;
use crate::qubit::ProbeHamiltonian;
use crate::rng::derive_seed;
use crate::sample::UnitsMode;
use crate::scanner::{
    acquisition_time, apply_noise_model, assemble_maps, pixel_spectrum, record_seed, scan_with_threads, ColorSource,
    NoiseModel, Pipeline, PixelResult, ScanGrid, StochasticSettings,
};
use crate::scene::{parse_scene, write_scene, Scene};
use crate::units::{parse_list, parse_quantity, Dimension};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "qdm", version, about = "Scanning quantum decoherence microscopy simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raster-scan a scene and write field, decoherence and combined maps.
    Scan(RunArgs),
    /// Write a preset or random scene file.
    GenerateScene(GenerateArgs),
    /// Render one noisy map per dwell time plus a variance table.
    NoiseSweep(RunArgs),
    /// Dump the record autocorrelation, spectrum and fit at one position.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    ClosedForm,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorArg {
    Gamma,
    PExcited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Example1,
    Example2,
    CustomRandom,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Scene file.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Run config file (`key = value` with unit suffixes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output root; each run gets a fresh `run-NNNN` directory inside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
    /// Dwell time per pixel, e.g. `200us`; a comma list for noise-sweep.
    /// Without it a scan is noiseless.
    #[arg(long)]
    pub dwell: Option<String>,
    /// Pixel grid, `NX` or `NXxNY`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Probe height, e.g. `20nm` (defaults to the scene's).
    #[arg(long)]
    pub height: Option<String>,
    /// Field of view, `W` or `W,H` (defaults to the scene's).
    #[arg(long)]
    pub fov: Option<String>,
    #[arg(long, value_enum)]
    pub color: Option<ColorArg>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record length per pixel (stochastic pipeline).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Autocorrelation lags (stochastic pipeline).
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Add the DC-sensitivity variance term to the noise model.
    #[arg(long)]
    pub dc_noise: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: SceneKind,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Destination file (refuses to overwrite); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fluctuators per unit area (custom-random).
    #[arg(long, default_value_t = presets::EXAMPLE1_DENSITY)]
    pub density: f64,
    /// Square field of view in normalized units (custom-random).
    #[arg(long, default_value_t = 1.0)]
    pub fov: f64,
    /// Coupling at unit distance (custom-random).
    #[arg(long, default_value_t = presets::EXAMPLE1_V0)]
    pub v0: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Probe position `X,Y` (with units in SI scenes).
    #[arg(long, allow_hyphen_values = true)]
    pub at: String,
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene_path: PathBuf,
    pub scene_text: String,
    pub scene: Scene,
    pub out_root: PathBuf,
    pub seed: u64,
    pub grid: ScanGrid,
    /// Dwell times; empty means noiseless.
    pub dwells: Vec<f64>,
    pub probe: ProbeConfig,
    pub color: ColorSource,
    pub threads: usize,
    pub noise: NoiseModel,
}

fn cfg_err(path: &Path, e: QdmError) -> QdmError {
    match e {
        QdmError::Parse { line, message } => QdmError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// Parse a run config file into ordered key/value pairs.
pub fn parse_config(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| QdmError::Parse {
            line: i + 1,
            message: format!("expected key = value, got {content:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_grid(text: &str) -> Result<(usize, usize)> {
    let bad = || QdmError::Parse {
        line: 0,
        message: format!("grid must be N or NXxNY, got {text:?}"),
    };
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    match text.split_once(['x', 'X']) {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(text)?;
            Ok((n, n))
        }
    }
}

/// Raw settings gathered from config file then flags.
#[derive(Debug, Default)]
struct Settings {
    scene: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    pipeline: Option<PipelineArg>,
    dwell: Option<String>,
    grid: Option<String>,
    height: Option<String>,
    fov: Option<String>,
    color: Option<ColorArg>,
    threads: Option<usize>,
    steps: Option<usize>,
    max_lag: Option<usize>,
    dc_noise: bool,
    rabi: Option<String>,
    detuning: Option<String>,
    gamma_q: Option<String>,
    kappa: Option<String>,
    dt: Option<String>,
}

fn line_err(line: usize, message: String) -> QdmError {
    QdmError::Parse { line, message }
}

fn load_config_file(path: &Path, s: &mut Settings) -> Result<()> {
    let text =
        fs::read_to_string(path).map_err(|e| QdmError::Io(format!("config not found: {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (line, k, v) in parse_config(&text).map_err(|e| cfg_err(path, e))? {
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| cfg_err(path, line_err(line, format!("{k}: expected an integer, got {v:?}"))))
        };
        match k.as_str() {
            "scene" => s.scene = Some(base.join(&v)),
            "out" => s.out = Some(base.join(&v)),
            "seed" => {
                s.seed = Some(
                    v.parse()
                        .map_err(|_| cfg_err(path, line_err(line, format!("seed: not an integer: {v:?}"))))?,
                )
            }
            "pipeline" => {
                s.pipeline = Some(
                    PipelineArg::from_str(&v.replace('_', "-"), true)
                        .map_err(|e| cfg_err(path, line_err(line, format!("pipeline: {e}"))))?,
                )
            }
            "color" => {
                s.color = Some(
                    ColorArg::from_str(&v.replace('_', "-"), true)
                        .map_err(|e| cfg_err(path, line_err(line, format!("color: {e}"))))?,
                )
            }
            "dwell" => s.dwell = Some(v),
            "grid" => s.grid = Some(v),
            "height" => s.height = Some(v),
            "fov" => s.fov = Some(v),
            "threads" => s.threads = Some(int(&v)?),
            "steps" => s.steps = Some(int(&v)?),
            "max_lag" => s.max_lag = Some(int(&v)?),
            "dc_noise" => s.dc_noise = matches!(v.as_str(), "true" | "yes" | "1"),
            "rabi" => s.rabi = Some(v),
            "detuning" => s.detuning = Some(v),
            "gamma_q" => s.gamma_q = Some(v),
            "kappa" => s.kappa = Some(v),
            "dt" => s.dt = Some(v),
            _ => return Err(cfg_err(path, line_err(line, format!("unknown key {k:?}")))),
        }
    }
    Ok(())
}

fn overlay(s: &mut Settings, a: &RunArgs) {
    macro_rules! over {
        ($($f:ident),*) => { $( if a.$f.is_some() { s.$f = a.$f.clone(); } )* };
    }
    over!(scene, out, seed, pipeline, dwell, grid, height, fov, color, threads, steps, max_lag);
    s.dc_noise |= a.dc_noise;
}

fn probe_for(scene: &Scene, s: &Settings) -> Result<ProbeConfig> {
    let mut probe = presets::default_probe(scene);
    let si = scene.env.units == UnitsMode::Si;
    let two_pi = 2.0 * std::f64::consts::PI;
    // Frequencies become angular in SI; normalized values are used as is.
    let freq = |t: &str| -> Result<f64> {
        if si {
            Ok(two_pi * parse_quantity(t, Dimension::Frequency, false)?)
        } else {
            parse_quantity(t, Dimension::Dimensionless, true)
        }
    };
    if let Some(r) = &s.rabi {
        probe.hamiltonian.epsilon = 0.5 * freq(r)?;
    }
    if let Some(d) = &s.detuning {
        probe.hamiltonian.delta = 0.5 * freq(d)?;
    }
    if let Some(g) = &s.gamma_q {
        probe.intrinsic_rate = freq(g)?;
    }
    let kappa = match &s.kappa {
        Some(k) => parse_quantity(k, Dimension::Dimensionless, true)?,
        None => probe.channel.kappa(),
    };
    let dt = match &s.dt {
        Some(t) => parse_quantity(t, Dimension::Time, !si)?,
        None => probe.channel.delta_t(),
    };
    let h = ProbeHamiltonian::new(probe.hamiltonian.epsilon, probe.hamiltonian.delta)?;
    ProbeConfig::new(h, probe.intrinsic_rate, WeakMeasurementChannel::new(kappa, dt)?)
}

/// Resolve flags (and the optional config file) into a [`RunConfig`].
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut s = Settings::default();
    if let Some(c) = &args.config {
        load_config_file(c, &mut s)?;
    }
    overlay(&mut s, args);

    let scene_path = s
        .scene
        .clone()
        .ok_or_else(|| QdmError::Domain("no scene given (use --scene or `scene =` in --config)".into()))?;
    let scene_text = fs::read_to_string(&scene_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => QdmError::Io(format!("scene not found: {}", scene_path.display())),
        _ => QdmError::Io(format!("{}: {e}", scene_path.display())),
    })?;
    let scene = parse_scene(&scene_text).map_err(|e| cfg_err(&scene_path, e))?;
    let si = scene.env.units == UnitsMode::Si;

    let tag = |what: &'static str| move |e: QdmError| QdmError::Domain(format!("{what}: {e}"));
    let (nx, ny) = match &s.grid {
        Some(g) => parse_grid(g).map_err(tag("--grid"))?,
        None => (50, 50),
    };
    let height = match &s.height {
        Some(h) => parse_quantity(h, Dimension::Length, !si).map_err(tag("--height"))?,
        None => scene.env.probe_height,
    };
    let fov = match &s.fov {
        Some(f) => match parse_list(f, Dimension::Length, !si).map_err(tag("--fov"))?.as_slice() {
            [w] => (*w, *w),
            [w, h] => (*w, *h),
            _ => return Err(QdmError::Domain("--fov takes W or W,H".into())),
        },
        None => scene.fov,
    };
    // Dwell times are always seconds; a bare number is read as seconds.
    let dwells = match &s.dwell {
        Some(d) => parse_list(d, Dimension::Time, true).map_err(tag("--dwell"))?,
        None => Vec::new(),
    };
    let pipeline = match s.pipeline.unwrap_or(PipelineArg::ClosedForm) {
        PipelineArg::ClosedForm => Pipeline::ClosedForm,
        PipelineArg::Stochastic => {
            let mut st = StochasticSettings::default();
            if let Some(n) = s.steps {
                st.n_steps = n;
            }
            if let Some(m) = s.max_lag {
                st.max_lag = m;
            }
            Pipeline::Stochastic(st)
        }
    };
    let grid = ScanGrid::new(nx, ny, fov, height, dwells.first().copied().unwrap_or(1.0))?
        .with_center(scene.center)
        .with_pipeline(pipeline);
    let probe = probe_for(&scene, &s)?;
    let color = match s.color {
        Some(ColorArg::PExcited) => ColorSource::PExcited,
        Some(ColorArg::Gamma) => ColorSource::Gamma,
        None if !scene.env.spins.is_empty() => ColorSource::PExcited,
        None => ColorSource::Gamma,
    };
    Ok(RunConfig {
        seed: s.seed.or(scene.seed).unwrap_or(DEFAULT_SEED),
        out_root: s
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("qdm-runs")),
        scene_path,
        scene_text,
        scene,
        grid,
        dwells,
        probe,
        color,
        threads: s.threads.unwrap_or(0),
        noise: NoiseModel {
            include_dc: s.dc_noise,
            ..NoiseModel::default()
        },
    })
}

fn threads(n: usize) -> usize {
    if n == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        n
    }
}

fn base_manifest(cmd: &str, cfg: &RunConfig) -> Manifest {
    let g = &cfg.grid;
    let p = &cfg.probe;
    let mut m = Manifest::new();
    m.set("command", cmd)
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("scene_path", cfg.scene_path.display())
        .set("scene_sha256", output::sha256_hex(cfg.scene_text.as_bytes()))
        .set("units", format!("{:?}", cfg.scene.env.units).to_lowercase())
        .set("seed", cfg.seed)
        .set("grid", format!("{}x{}", g.nx, g.ny))
        .set("center", format!("{:e},{:e}", g.center.0, g.center.1))
        .set("fov", format!("{:e},{:e}", g.extent.0, g.extent.1))
        .set("height", format!("{:e}", g.probe_height))
        .set("pipeline", g.pipeline.name());
    if let Pipeline::Stochastic(s) = g.pipeline {
        m.set("steps", s.n_steps)
            .set("max_lag", s.max_lag)
            .set("pad", s.pad)
            .set("switching_fraction", format!("{:e}", s.switching_fraction))
            .set("max_sources", s.max_sources);
    }
    m.set("epsilon", format!("{:e}", p.hamiltonian.epsilon))
        .set("delta", format!("{:e}", p.hamiltonian.delta))
        .set("gamma_q", format!("{:e}", p.intrinsic_rate))
        .set("kappa", format!("{:e}", p.channel.kappa()))
        .set("dt", format!("{:e}", p.channel.delta_t()))
        .set(
            "color",
            match cfg.color {
                ColorSource::Gamma => "gamma",
                ColorSource::PExcited => "p_excited",
            },
        )
        .set("noise_coefficient", format!("{:e}", cfg.noise.coefficient))
        .set("dc_noise", cfg.noise.include_dc)
        .set("threads", threads(cfg.threads));
    m
}

fn run_scan_pixels(cfg: &RunConfig) -> Result<Vec<PixelResult>> {
    let env = cfg.scene.env.at_height(cfg.grid.probe_height)?;
    scan_with_threads(&env, &cfg.probe, &cfg.grid, cfg.seed, threads(cfg.threads))
}

/// `qdm scan`: returns the run directory.
pub fn cmd_scan(cfg: &RunConfig) -> Result<PathBuf> {
    let mut results = run_scan_pixels(cfg)?;
    if let Some(&dwell) = cfg.dwells.first() {
        let mut g = cfg.grid;
        g.dwell_time = dwell;
        results = results
            .iter()
            .map(|r| apply_noise_model(r, &g, cfg.seed, &cfg.noise))
            .collect();
    }
    let maps = assemble_maps(&results, cfg.grid.nx, cfg.grid.ny, cfg.color)?;
    let dir = output::create_run_dir(&cfg.out_root)?;
    output::write_map_set(&dir, "", &maps, &results)?;
    let mut m = base_manifest("scan", cfg);
    match cfg.dwells.first() {
        Some(d) => m
            .set("dwell", format!("{d:e}"))
            .set("acquisition_time", format!("{:e}", acquisition_time(&cfg.grid))),
        None => m.set("dwell", "inf"),
    };
    m.set("field_scale", format!("{:e}", maps.field_scale))
        .set("gamma_scale", format!("{:e}", maps.gamma_scale));
    fs::write(dir.join("scene.txt"), &cfg.scene_text)?;
    m.write(&dir.join("manifest.txt"))?;
    Ok(dir)
}

/// Sample variance of a finite sequence.
fn variance(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    let n = v.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// One row of the noise-sweep summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub dwell: f64,
    pub expected_variance: f64,
    pub measured_variance: f64,
    pub acquisition_time: f64,
}

/// Noisy renders of one clean scan at each dwell time. The measured variance
/// pools the deviation of both normalized channels from the clean maps.
pub fn noise_sweep(cfg: &RunConfig, results: &[PixelResult]) -> Result<Vec<(SweepRow, Vec<PixelResult>)>> {
    if cfg.dwells.is_empty() {
        return Err(QdmError::Domain("noise sweep needs at least one dwell time".into()));
    }
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let clean = assemble_maps(results, nx, ny, ColorSource::Gamma)?;
    cfg.dwells
        .iter()
        .enumerate()
        .map(|(k, &dwell)| {
            let mut g = cfg.grid;
            g.dwell_time = dwell;
            g.validate()?;
            let seed = derive_seed(cfg.seed, &[k as u64]);
            let noisy: Vec<PixelResult> = results
                .iter()
                .map(|r| apply_noise_model(r, &g, seed, &cfg.noise))
                .collect();
            let maps = assemble_maps(&noisy, nx, ny, ColorSource::Gamma)?;
            let dev = maps
                .field
                .iter()
                .zip(&clean.field)
                .chain(maps.decoherence.iter().zip(&clean.decoherence))
                .map(|(a, b)| a - b);
            let row = SweepRow {
                dwell,
                expected_variance: cfg.noise.variance(dwell),
                measured_variance: variance(dev),
                acquisition_time: acquisition_time(&g),
            };
            Ok((row, noisy))
        })
        .collect()
}

/// `qdm noise-sweep`: returns the run directory.
pub fn cmd_noise_sweep(cfg: &RunConfig) -> Result<PathBuf> {
    let results = run_scan_pixels(cfg)?;
    let sweep = noise_sweep(cfg, &results)?;
    let dir = output::create_run_dir(&cfg.out_root)?;
    let mut table = output::create_new(&dir.join("variance.csv"))?;
    writeln!(table, "dwell,expected_variance,measured_variance,acquisition_time")?;
    for (row, noisy) in &sweep {
        let maps = assemble_maps(noisy, cfg.grid.nx, cfg.grid.ny, cfg.color)?;
        output::write_map_set(&dir, &format!("dwell-{:e}s-", row.dwell), &maps, noisy)?;
        writeln!(
            table,
            "{:e},{:e},{:e},{:e}",
            row.dwell, row.expected_variance, row.measured_variance, row.acquisition_time
        )?;
    }
    table.flush()?;
    let mut m = base_manifest("noise-sweep", cfg);
    m.set(
        "dwell",
        cfg.dwells
            .iter()
            .map(|d| format!("{d:e}"))
            .collect::<Vec<_>>()
            .join(","),
    )
    .set("dwell_seed_rule", "derive_seed(seed, [dwell index])");
    fs::write(dir.join("scene.txt"), &cfg.scene_text)?;
    m.write(&dir.join("manifest.txt"))?;
    Ok(dir)
}

/// `qdm spectrum`: returns the run directory.
pub fn cmd_spectrum(cfg: &RunConfig, at: &str) -> Result<PathBuf> {
    let si = cfg.scene.env.units == UnitsMode::Si;
    let xy = match parse_list(at, Dimension::Length, !si)?.as_slice() {
        [x, y] => (*x, *y),
        _ => return Err(QdmError::Domain(format!("--at takes X,Y, got {at:?}"))),
    };
    let settings = match cfg.grid.pipeline {
        Pipeline::Stochastic(s) => s,
        Pipeline::ClosedForm => StochasticSettings::default(),
    };
    let env = cfg.scene.env.at_height(cfg.grid.probe_height)?;
    let seed = record_seed(cfg.seed, 0, 0);
    let ps = pixel_spectrum(&env, &cfg.probe, &settings, xy, seed)?;
    let dir = output::create_run_dir(&cfg.out_root)?;
    let mut w = output::create_new(&dir.join("autocorrelation.csv"))?;
    writeln!(w, "tau,value,stderr")?;
    for (i, (t, v)) in ps
        .autocorrelation
        .lags
        .iter()
        .zip(&ps.autocorrelation.values)
        .enumerate()
    {
        let se = ps.autocorrelation.stderr.as_ref().map_or(f64::NAN, |s| s[i]);
        writeln!(w, "{t:e},{v:e},{se:e}")?;
    }
    w.flush()?;
    ps.spectrum.write_csv(output::create_new(&dir.join("spectrum.csv"))?)?;
    let e = &ps.estimate;
    let mut m = base_manifest("spectrum", cfg);
    m.set("pipeline", "stochastic")
        .set("steps", settings.n_steps)
        .set("max_lag", settings.max_lag)
        .set("at", format!("{:e},{:e}", xy.0, xy.1))
        .set("record_seed", seed)
        .set(
            "peak_frequencies",
            e.peak_frequencies
                .iter()
                .map(|f| format!("{f:e}"))
                .collect::<Vec<_>>()
                .join(","),
        )
        .set(
            "linewidths",
            e.linewidths
                .iter()
                .map(|f| format!("{f:e}"))
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("splitting", format!("{:?}", e.splitting))
        .set("p_minor", e.p_minor().map_or("none".into(), |p| format!("{p:e}")))
        .set("delta_shift", format!("{:e}", ps.delta_shift));
    fs::write(dir.join("scene.txt"), &cfg.scene_text)?;
    m.write(&dir.join("manifest.txt"))?;
    Ok(dir)
}

/// `qdm generate-scene`: returns the scene text.
pub fn generate_scene(a: &GenerateArgs) -> Result<String> {
    let (scene, what) = match a.kind {
        SceneKind::Example1 => (presets::example1(a.seed)?, "example1".to_string()),
        SceneKind::Example2 => (presets::example2(a.seed)?, "example2".to_string()),
        SceneKind::CustomRandom => (
            presets::custom_random(a.seed, a.density, a.fov, a.v0)?,
            format!("custom-random density={} fov={} v0={}", a.density, a.fov, a.v0),
        ),
    };
    Ok(write_scene(&scene, &format!("generated: {what} seed={}", a.seed)))
}

fn dispatch(cli: Cli) -> std::result::Result<String, CliError> {
    match cli.command {
        Command::GenerateScene(a) => {
            let text = generate_scene(&a).map_err(CliError::config)?;
            match &a.out {
                Some(p) => {
                    let mut w = output::create_new(p).map_err(CliError::runtime)?;
                    w.write_all(text.as_bytes()).map_err(CliError::runtime)?;
                    w.flush().map_err(CliError::runtime)?;
                    Ok(format!("wrote {}\n", p.display()))
                }
                None => Ok(text),
            }
        }
        Command::Scan(a) => {
            let cfg = resolve(&a).map_err(CliError::config)?;
            let dir = cmd_scan(&cfg).map_err(CliError::runtime)?;
            Ok(format!("{}\n", dir.display()))
        }
        Command::NoiseSweep(a) => {
            let cfg = resolve(&a).map_err(CliError::config)?;
            if cfg.dwells.is_empty() {
                return Err(CliError::config("noise-sweep needs --dwell (comma list)"));
            }
            let dir = cmd_noise_sweep(&cfg).map_err(CliError::runtime)?;
            Ok(format!("{}\n", dir.display()))
        }
        Command::Spectrum(mut a) => {
            a.run.pipeline = Some(PipelineArg::Stochastic);
            let cfg = resolve(&a.run).map_err(CliError::config)?;
            let dir = cmd_spectrum(&cfg, &a.at).map_err(|e| match e {
                QdmError::Parse { .. } | QdmError::Domain(_) => CliError::config(e),
                e => CliError::runtime(e),
            })?;
            Ok(format!("{}\n", dir.display()))
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(msg) => {
            print!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("qdm: {}", e.message);
            e.code
        }
    }
}
