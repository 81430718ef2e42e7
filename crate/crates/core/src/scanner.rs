//! Raster-scan engine: per-pixel characterization, map assembly and the
//! finite-dwell acquisition noise model.
//!
//! Pixels are evaluated independently in parallel. Every random draw a pixel
//! makes comes from a stream derived from `(master seed, ix, iy)`, so scan
//! output does not depend on evaluation order or worker count.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{domain, ensure_finite, QdmError, Result};
use crate::measurement::{
    check_operating_regime, measurement_induced_rate, simulate_switching_record, Coupling, ProbeConfig, TelegraphSource,
};
use crate::rng::{derive_seed, pixel_rng};
use crate::sample::{
    coupling_strength, effective_pixel_model, fluctuator_spectrum, golden_rule_rates, spin_sources, Environment,
};
use crate::spectral::{
    autocorrelation_empirical, estimate_parameters_with, spectrum_padded, Autocorrelation, ExpectedPeaks, LineShape,
    PeakSplitting, SpectralEstimate, Spectrum,
};

/// Variance coefficient `c` in `σ² = c/t_dwell` (s).
pub const NOISE_COEFFICIENT: f64 = 2e-7;
/// Extra variance of the 20 nT/√Hz, 10 kHz-bandwidth DC detector model.
pub const DC_SENSITIVITY_VARIANCE: f64 = 1e-5;

const RECORD_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Settings of the record-based estimation pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticSettings {
    /// Measurements per pixel record.
    pub n_steps: usize,
    /// Autocorrelation lags kept (must stay below `n_steps/10`).
    pub max_lag: usize,
    /// Zero-padding factor of the spectrum transform.
    pub pad: usize,
    /// Slow-source switching rate as a fraction of the probe linewidth.
    pub switching_fraction: f64,
    /// Largest number of telegraph sources simulated explicitly.
    pub max_sources: usize,
}

impl Default for StochasticSettings {
    fn default() -> Self {
        Self {
            n_steps: 4_000_000,
            max_lag: 4096,
            pad: 2,
            switching_fraction: 0.2,
            max_sources: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pipeline {
    ClosedForm,
    Stochastic(StochasticSettings),
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::ClosedForm => "closed_form",
            Pipeline::Stochastic(_) => "stochastic",
        }
    }
}

/// Pixel lattice with both edges included: `x_i = cx − w/2 + i·w/(nx − 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub nx: usize,
    pub ny: usize,
    pub center: (f64, f64),
    pub extent: (f64, f64),
    pub probe_height: f64,
    pub dwell_time: f64,
    pub pipeline: Pipeline,
}

impl ScanGrid {
    pub fn new(nx: usize, ny: usize, extent: (f64, f64), probe_height: f64, dwell_time: f64) -> Result<Self> {
        let g = Self {
            nx,
            ny,
            center: (0.0, 0.0),
            extent,
            probe_height,
            dwell_time,
            pipeline: Pipeline::ClosedForm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_pipeline(mut self, pipeline: Pipeline) -> Self {
        self.pipeline = pipeline;
        self
    }

    pub fn with_center(mut self, center: (f64, f64)) -> Self {
        self.center = center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return domain(format!("grid needs nx, ny >= 1, got {}x{}", self.nx, self.ny));
        }
        for (name, v) in [
            ("dwell_time", self.dwell_time),
            ("probe_height", self.probe_height),
            ("extent_x", self.extent.0),
            ("extent_y", self.extent.1),
        ] {
            ensure_finite(name, v)?;
        }
        if !(self.dwell_time > 0.0) || !(self.probe_height > 0.0) || self.extent.0 < 0.0 || self.extent.1 < 0.0 {
            return domain("grid needs dwell_time > 0, probe_height > 0 and nonnegative extent");
        }
        if let Pipeline::Stochastic(s) = self.pipeline {
            if s.max_lag == 0 || s.max_lag * 10 >= s.n_steps || s.pad == 0 || !(s.switching_fraction > 0.0) {
                return domain("stochastic settings need 0 < max_lag < n_steps/10, pad >= 1, switching_fraction > 0");
            }
        }
        Ok(())
    }

    fn axis(n: usize, c: f64, w: f64, i: usize) -> f64 {
        if n == 1 {
            c
        } else {
            c - 0.5 * w + w * i as f64 / (n - 1) as f64
        }
    }

    pub fn position(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            Self::axis(self.nx, self.center.0, self.extent.0, ix),
            Self::axis(self.ny, self.center.1, self.extent.1, iy),
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Total image time `nx·ny·t_dwell`.
pub fn acquisition_time(grid: &ScanGrid) -> f64 {
    (grid.nx * grid.ny) as f64 * grid.dwell_time
}

#[derive(Debug, Clone, PartialEq)]
pub enum PixelStatus {
    Ok,
    /// Outside the detection window (shift below Γ_q or splitting above
    /// the measurement bandwidth).
    Undetectable,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelResult {
    pub ix: usize,
    pub iy: usize,
    pub position: (f64, f64),
    /// Static probe shift (field-map channel).
    pub delta_shift: f64,
    /// Total Pauli z-rate (HWHM of the probe line).
    pub gamma_total: f64,
    pub splitting: PeakSplitting,
    pub p_excited: Option<f64>,
    /// Acquisition-noise variance in normalized intensity units (0 until
    /// [`apply_acquisition_noise`] runs).
    pub noise_variance: f64,
    /// Noise draws for the field and colour channels.
    pub noise: [f64; 2],
    pub status: PixelStatus,
}

impl PixelResult {
    fn failed(ix: usize, iy: usize, position: (f64, f64), msg: String) -> Self {
        Self {
            ix,
            iy,
            position,
            delta_shift: f64::NAN,
            gamma_total: f64::NAN,
            splitting: PeakSplitting::Single,
            p_excited: None,
            noise_variance: 0.0,
            noise: [0.0; 2],
            status: PixelStatus::Failed(msg),
        }
    }

    pub fn is_resolved(&self) -> bool {
        self.status == PixelStatus::Ok && !matches!(self.splitting, PeakSplitting::Unresolved { .. })
    }
}

fn within_window(shift: f64, splitting: &PeakSplitting, probe: &ProbeConfig) -> bool {
    let too_fast = match *splitting {
        PeakSplitting::Split { splitting, .. } => splitting > 2.0 * PI * probe.channel.bandwidth(),
        _ => false,
    };
    shift.abs() >= probe.intrinsic_rate && !too_fast
}

fn closed_form_pixel(env: &Environment, probe: &ProbeConfig, ix: usize, iy: usize, xy: (f64, f64)) -> PixelResult {
    let m = effective_pixel_model(env, probe, xy);
    let gamma_total = probe.intrinsic_rate + measurement_induced_rate(&probe.channel) + m.gamma_sample;
    let splitting = match (m.splitting, m.p_excited) {
        (Some(s), Some(pe)) if s > gamma_total => PeakSplitting::Split {
            splitting: s,
            peak_ratio: pe / (1.0 - pe),
        },
        (Some(s), _) => PeakSplitting::Unresolved { separation: s },
        _ => PeakSplitting::Single,
    };
    let status = if env.is_empty() || within_window(m.delta_shift, &splitting, probe) {
        PixelStatus::Ok
    } else {
        PixelStatus::Undetectable
    };
    PixelResult {
        ix,
        iy,
        position: xy,
        delta_shift: m.delta_shift,
        gamma_total,
        splitting,
        p_excited: m.p_excited,
        noise_variance: 0.0,
        noise: [0.0; 2],
        status,
    }
}

/// Telegraph sources, coupling axis and residual fast-bath rate for a pixel.
///
/// Spins shift the transition energy and switch at `switching_fraction`
/// times the probe linewidth. Fluctuators shift Δ about their mean
/// occupation; the `max_sources` strongest (by spectral weight at the probe
/// transition) switch explicitly at their own rate, the rest enter as a
/// golden-rule dephasing rate.
fn stochastic_sources(
    env: &Environment,
    probe: &ProbeConfig,
    xy: (f64, f64),
    s: &StochasticSettings,
) -> (Vec<TelegraphSource>, Coupling, f64, f64) {
    let linewidth = probe.intrinsic_rate + measurement_induced_rate(&probe.channel);
    if !env.spins.is_empty() {
        let k = s.switching_fraction * linewidth;
        let sources = spin_sources(env, xy)
            .into_iter()
            .take(s.max_sources)
            .map(|(shift, pe)| TelegraphSource {
                amplitude: shift,
                p_excited: pe,
                switching_rate: k,
            })
            .collect();
        return (sources, Coupling::Transition, 0.0, 0.0);
    }
    let Some(bath) = &env.bath else {
        return (Vec::new(), Coupling::Delta, 0.0, 0.0);
    };
    let e = probe.transition_energy();
    let mut weighted: Vec<(f64, f64, f64)> = bath
        .fluctuators()
        .iter()
        .map(|f| {
            let v = coupling_strength(f, xy, env.probe_height);
            (fluctuator_spectrum(f, v, e), v, f.gamma)
        })
        .collect();
    weighted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mean: f64 = weighted.iter().map(|w| 0.5 * w.1).sum();
    let rest: f64 = weighted.iter().skip(s.max_sources).map(|w| w.0).sum();
    let sources = weighted
        .iter()
        .take(s.max_sources)
        .map(|&(_, v, g)| TelegraphSource {
            amplitude: 0.5 * v,
            p_excited: 0.5,
            switching_rate: g,
        })
        .collect();
    (sources, Coupling::Delta, mean, golden_rule_rates(rest).0)
}

/// Intermediate products of the record-based estimate at one position.
#[derive(Debug, Clone)]
pub struct PixelSpectrum {
    pub autocorrelation: Autocorrelation,
    pub spectrum: Spectrum,
    pub estimate: SpectralEstimate,
    /// Static shift recovered from the area-weighted mean line position.
    pub delta_shift: f64,
}

/// Simulate, correlate and fit the record of a probe parked at `xy`.
/// `env` must already sit at the intended probe height.
pub fn pixel_spectrum(
    env: &Environment,
    probe: &ProbeConfig,
    s: &StochasticSettings,
    xy: (f64, f64),
    record_seed: u64,
) -> Result<PixelSpectrum> {
    let (sources, coupling, mean_shift, extra_rate) = stochastic_sources(env, probe, xy, s);
    let base = coupling.apply(&probe.hamiltonian, mean_shift);
    let channels = probe.channels(extra_rate)?;
    let record = simulate_switching_record(
        &base,
        coupling,
        &sources,
        &channels,
        &probe.channel,
        s.n_steps,
        record_seed,
    )?;
    let ac = autocorrelation_empirical(&record, s.max_lag)?;
    let spec = spectrum_padded(&ac, s.pad)?;
    // Slow spins modulate the transition energy of a transversely driven
    // probe, whose σz lines have the damped-oscillator shape.
    let shape = match coupling {
        Coupling::Transition => LineShape::DrivenQubit,
        Coupling::Delta => LineShape::Lorentzian,
    };
    let est = estimate_parameters_with(&spec, ExpectedPeaks::Auto, shape)?;

    let w0 = probe.transition_energy();
    let weights: Vec<f64> = est
        .amplitudes
        .iter()
        .zip(&est.linewidths)
        .map(|(a, g)| (a * g).abs())
        .collect();
    let total: f64 = weights.iter().sum();
    let mean_w = est
        .peak_frequencies
        .iter()
        .zip(&weights)
        .map(|(w, a)| w * a)
        .sum::<f64>()
        / total;
    let delta_shift = match coupling {
        Coupling::Transition => mean_w - w0,
        Coupling::Delta => {
            let eps = probe.hamiltonian.epsilon;
            let d0 = probe.hamiltonian.delta;
            ((0.25 * mean_w * mean_w - eps * eps).max(0.0)).sqrt() - d0.abs()
        }
    };
    Ok(PixelSpectrum {
        autocorrelation: ac,
        spectrum: spec,
        estimate: est,
        delta_shift,
    })
}

fn stochastic_pixel(
    env: &Environment,
    probe: &ProbeConfig,
    s: &StochasticSettings,
    ix: usize,
    iy: usize,
    xy: (f64, f64),
    seed: u64,
) -> PixelResult {
    match pixel_spectrum(env, probe, s, xy, record_seed(seed, ix, iy)) {
        Ok(ps) => {
            let status = if env.is_empty() || within_window(ps.delta_shift, &ps.estimate.splitting, probe) {
                PixelStatus::Ok
            } else {
                PixelStatus::Undetectable
            };
            PixelResult {
                ix,
                iy,
                position: xy,
                delta_shift: ps.delta_shift,
                gamma_total: ps.estimate.linewidth,
                splitting: ps.estimate.splitting,
                p_excited: ps.estimate.p_minor(),
                noise_variance: 0.0,
                noise: [0.0; 2],
                status,
            }
        }
        Err(e) => PixelResult::failed(ix, iy, xy, e.to_string()),
    }
}

/// Seed of the measurement record of pixel `(ix, iy)`.
pub fn record_seed(master: u64, ix: usize, iy: usize) -> u64 {
    derive_seed(master, &[ix as u64, iy as u64, RECORD_STREAM])
}

/// Characterize every pixel of `grid`; results are in row-major order
/// (`iy` outer, `ix` inner).
///
/// Estimation failures are recorded per pixel and never abort the scan.
pub fn scan(env: &Environment, probe: &ProbeConfig, grid: &ScanGrid, seed: u64) -> Result<Vec<PixelResult>> {
    grid.validate()?;
    let env = env.at_height(grid.probe_height)?;
    let sample_peak = (0..grid.len())
        .map(|i| effective_pixel_model(&env, probe, grid.position(i % grid.nx, i / grid.nx)).gamma_sample)
        .fold(0.0, f64::max);
    check_operating_regime(&probe.channel, probe.intrinsic_rate, sample_peak);
    let results = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % grid.nx, i / grid.nx);
            let xy = grid.position(ix, iy);
            match grid.pipeline {
                Pipeline::ClosedForm => closed_form_pixel(&env, probe, ix, iy, xy),
                Pipeline::Stochastic(s) => stochastic_pixel(&env, probe, &s, ix, iy, xy, seed),
            }
        })
        .collect();
    Ok(results)
}

/// Run [`scan`] on a dedicated pool of `threads` workers.
pub fn scan_with_threads(
    env: &Environment,
    probe: &ProbeConfig,
    grid: &ScanGrid,
    seed: u64,
    threads: usize,
) -> Result<Vec<PixelResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| QdmError::Domain(format!("cannot build worker pool: {e}")))?;
    pool.install(|| scan(env, probe, grid, seed))
}

/// Acquisition-noise model `σ² = c/t_dwell (+ DC term)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub coefficient: f64,
    pub include_dc: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            coefficient: NOISE_COEFFICIENT,
            include_dc: false,
        }
    }
}

impl NoiseModel {
    pub fn variance(&self, dwell_time: f64) -> f64 {
        let dc = if self.include_dc { DC_SENSITIVITY_VARIANCE } else { 0.0 };
        self.coefficient / dwell_time + dc
    }
}

/// Draw zero-mean Gaussian intensity noise of variance `c/t_dwell` for both
/// map channels of a pixel, from the pixel's own noise stream.
pub fn apply_acquisition_noise(result: &PixelResult, grid: &ScanGrid, seed: u64) -> PixelResult {
    apply_noise_model(result, grid, seed, &NoiseModel::default())
}

pub fn apply_noise_model(result: &PixelResult, grid: &ScanGrid, seed: u64, model: &NoiseModel) -> PixelResult {
    let var = model.variance(grid.dwell_time);
    let mut out = result.clone();
    out.noise_variance = var;
    if var == 0.0 {
        out.noise = [0.0; 2];
        return out;
    }
    let mut rng = pixel_rng(seed, result.ix, result.iy, NOISE_STREAM);
    let normal = Normal::new(0.0, var.sqrt()).expect("finite variance");
    out.noise = [normal.sample(&mut rng), normal.sample(&mut rng)];
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSource {
    Gamma,
    PExcited,
}

/// Colour value of pixels whose splitting is unresolved or undetectable.
pub const UNRESOLVED_SENTINEL: f64 = -1.0;

/// Normalized maps over an `nx × ny` grid, row-major (`iy` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMaps {
    pub nx: usize,
    pub ny: usize,
    /// Static shift divided by its largest magnitude (undetectable pixels 0).
    pub field: Vec<f64>,
    /// Total decoherence rate divided by its largest magnitude.
    pub decoherence: Vec<f64>,
    /// Normalized decoherence, or the raw excited fraction; sentinel for
    /// unresolved pixels.
    pub color: Vec<f64>,
    pub resolved: Vec<bool>,
    pub field_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
    pub positions: Vec<(f64, f64)>,
    pub field_scale: f64,
    pub gamma_scale: f64,
    pub color_source: ColorSource,
}

impl ImageMaps {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
}

fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let scale = v.iter().filter(|x| x.is_finite()).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return (v.iter().map(|x| if x.is_finite() { 0.0 } else { *x }).collect(), 0.0);
    }
    (v.iter().map(|x| x / scale).collect(), scale)
}

/// Assemble normalized field, decoherence and colour maps.
///
/// Both physical maps are divided by their largest finite magnitude;
/// acquisition noise drawn per pixel is added after normalization. Failed
/// pixels carry NaN in every channel.
pub fn assemble_maps(results: &[PixelResult], nx: usize, ny: usize, color_source: ColorSource) -> Result<ImageMaps> {
    let mut slots: Vec<Option<&PixelResult>> = vec![None; nx * ny];
    for r in results {
        if r.ix < nx && r.iy < ny {
            slots[r.iy * nx + r.ix] = Some(r);
        }
    }
    let missing: Vec<(usize, usize)> = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| (i % nx, i / nx))
        .collect();
    if !missing.is_empty() {
        return Err(QdmError::MissingPixels(missing));
    }
    let px: Vec<&PixelResult> = slots.into_iter().map(|s| s.expect("checked")).collect();
    let field_raw: Vec<f64> = px
        .iter()
        .map(|p| match p.status {
            PixelStatus::Undetectable => 0.0,
            _ => p.delta_shift,
        })
        .collect();
    let gamma_raw: Vec<f64> = px.iter().map(|p| p.gamma_total).collect();
    let (mut field, field_scale) = normalize(&field_raw);
    let (mut decoherence, gamma_scale) = normalize(&gamma_raw);
    for (i, p) in px.iter().enumerate() {
        field[i] += p.noise[0];
        decoherence[i] += p.noise[1];
    }
    let resolved: Vec<bool> = px.iter().map(|p| p.is_resolved()).collect();
    let color = px
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if matches!(p.status, PixelStatus::Failed(_)) {
                return f64::NAN;
            }
            if !resolved[i] {
                return UNRESOLVED_SENTINEL;
            }
            match color_source {
                ColorSource::Gamma => decoherence[i],
                ColorSource::PExcited => p.p_excited.unwrap_or(0.0),
            }
        })
        .collect();
    Ok(ImageMaps {
        nx,
        ny,
        field,
        decoherence,
        color,
        resolved,
        field_raw,
        gamma_raw,
        positions: px.iter().map(|p| p.position).collect(),
        field_scale,
        gamma_scale,
        color_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{ChargeFluctuator, FluctuatorBath, MesoscopicSpin, RateDistribution, UnitsMode};

    fn empty_env() -> Environment {
        Environment::new(0.05, 1.0, 0.0, UnitsMode::Normalized).unwrap()
    }

    #[test]
    fn acquisition_time_examples() {
        let g = |n, t| ScanGrid::new(n, n, (1.0, 1.0), 1.0, t).unwrap();
        assert!((acquisition_time(&g(50, 2e-6)) - 5e-3).abs() < 1e-15);
        assert!((acquisition_time(&g(50, 20e-3)) - 50.0).abs() < 1e-12);
        assert_eq!(acquisition_time(&g(1, 0.37)), 0.37);
    }

    #[test]
    fn grid_validation() {
        assert!(ScanGrid::new(0, 3, (1.0, 1.0), 1.0, 1.0).is_err());
        assert!(ScanGrid::new(3, 3, (1.0, 1.0), 1.0, 0.0).is_err());
        let g = ScanGrid::new(3, 1, (2.0, 2.0), 1.0, 1.0).unwrap();
        assert_eq!(g.position(0, 0), (-1.0, 0.0));
        assert_eq!(g.position(2, 0), (1.0, 0.0));
    }

    #[test]
    fn empty_environment_gives_zero_field_map() {
        let grid = ScanGrid::new(4, 3, (1.0, 1.0), 0.05, 1e-3).unwrap();
        let res = scan(&empty_env(), &ProbeConfig::normalized(), &grid, 1).unwrap();
        assert_eq!(res.len(), 12);
        let maps = assemble_maps(&res, 4, 3, ColorSource::Gamma).unwrap();
        assert!(maps.field.iter().all(|&v| v == 0.0));
        // Only intrinsic and measurement dephasing remain: a constant map.
        assert!(maps.decoherence.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn missing_pixels_are_listed() {
        let grid = ScanGrid::new(2, 2, (1.0, 1.0), 0.05, 1e-3).unwrap();
        let mut res = scan(&empty_env(), &ProbeConfig::normalized(), &grid, 1).unwrap();
        res.remove(1);
        assert_eq!(
            assemble_maps(&res, 2, 2, ColorSource::Gamma),
            Err(QdmError::MissingPixels(vec![(1, 0)]))
        );
    }

    #[test]
    fn noise_variances() {
        let grid = |t| ScanGrid::new(1, 1, (0.0, 0.0), 1.0, t).unwrap();
        let px = scan(&empty_env(), &ProbeConfig::normalized(), &grid(1.0), 0)
            .unwrap()
            .remove(0);
        assert!((apply_acquisition_noise(&px, &grid(2e-6), 0).noise_variance - 0.1).abs() < 1e-15);
        assert!((apply_acquisition_noise(&px, &grid(20e-3), 0).noise_variance - 1e-5).abs() < 1e-18);
        let quiet = apply_acquisition_noise(&px, &grid(f64::MAX), 0);
        assert!(quiet.noise.iter().all(|n| n.abs() < 1e-150));
        let dc = NoiseModel {
            include_dc: true,
            ..Default::default()
        };
        assert!((dc.variance(20e-3) - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn single_fluctuator_decoherence_peak_is_centred() {
        let f = ChargeFluctuator::new(0.1, -0.05, 1e-2, 1.0, 2.0).unwrap();
        let env = empty_env().with_bath(FluctuatorBath::new(vec![f], RateDistribution::Fixed).unwrap());
        let grid = ScanGrid::new(41, 41, (0.4, 0.4), 0.05, 1e-3)
            .unwrap()
            .with_center((0.1, -0.05));
        let res = scan(&env, &ProbeConfig::normalized(), &grid, 0).unwrap();
        let best = res
            .iter()
            .max_by(|a, b| a.gamma_total.total_cmp(&b.gamma_total))
            .unwrap();
        assert_eq!((best.ix, best.iy), (20, 20));
    }

    #[test]
    fn spin_pixel_is_split_with_boltzmann_ratio() {
        let env = Environment::new(20e-9, 4.0, 0.1, UnitsMode::Si)
            .unwrap()
            .with_spins(vec![MesoscopicSpin::new(0.0, 0.0, 50.0, 8e-9).unwrap()]);
        let grid = ScanGrid::new(1, 1, (0.0, 0.0), 20e-9, 1e-3).unwrap();
        let px = scan(&env, &ProbeConfig::nv_center(), &grid, 0).unwrap().remove(0);
        assert_eq!(px.status, PixelStatus::Ok);
        assert!(matches!(px.splitting, PeakSplitting::Split { .. }));
        assert!((px.p_excited.unwrap() - 0.157).abs() < 1e-3);
        let maps = assemble_maps(&[px], 1, 1, ColorSource::PExcited).unwrap();
        assert!((maps.color[0] - 0.157).abs() < 1e-3);
    }

    #[test]
    fn far_pixels_fall_outside_detection_window() {
        let env = Environment::new(20e-9, 4.0, 0.1, UnitsMode::Si)
            .unwrap()
            .with_spins(vec![MesoscopicSpin::new(0.0, 0.0, 50.0, 8e-9).unwrap()]);
        let grid = ScanGrid::new(1, 1, (0.0, 0.0), 20e-9, 1e-3)
            .unwrap()
            .with_center((300e-9, 0.0));
        let px = scan(&env, &ProbeConfig::nv_center(), &grid, 0).unwrap().remove(0);
        assert_eq!(px.status, PixelStatus::Undetectable);
        let maps = assemble_maps(&[px], 1, 1, ColorSource::PExcited).unwrap();
        assert_eq!(maps.color[0], UNRESOLVED_SENTINEL);
        assert!(!maps.resolved[0]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let f = ChargeFluctuator::new(0.0, 0.0, 1e-2, 1.0, 2.0).unwrap();
        let env = empty_env().with_bath(FluctuatorBath::new(vec![f], RateDistribution::Fixed).unwrap());
        let s = StochasticSettings {
            n_steps: 20_000,
            max_lag: 256,
            ..Default::default()
        };
        let grid = ScanGrid::new(3, 2, (0.2, 0.2), 0.05, 1e-3)
            .unwrap()
            .with_pipeline(Pipeline::Stochastic(s));
        let a = scan_with_threads(&env, &ProbeConfig::normalized(), &grid, 5, 1).unwrap();
        let b = scan_with_threads(&env, &ProbeConfig::normalized(), &grid, 5, 3).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
