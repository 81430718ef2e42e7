//! Autocorrelations, spectra and Lorentzian parameter estimation.
//!
//! Theoretical autocorrelations come from the quantum regression theorem,
//! `C(τ) = Re Tr[σz e^{𝓛τ} σz ρ_ss]`. Empirical ones come from ±1 records,
//! normalized as `(Ĉ(k) − m²)/(Ĉ(0) − m²)` with `m` the record mean.
//!
//! For a record of strength κ the normalized empirical autocorrelation is
//! `κ²(C(τ) − s²)/(1 − κ²s²)` at nonzero lag (and 1 at lag 0), with
//! `s = ⟨σz⟩_ss`; [`autocorrelation_record_prediction`] returns that form.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{domain, QdmError, Result};
use crate::fit::{levenberg_marquardt, LmFit, LmOptions, Model};
use crate::measurement::MeasurementRecord;
use crate::qubit::{operator_trace, sigma_z, steady_state, DensityMatrix, Liouvillian};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    Normalized,
}

/// Lag window applied before the Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Plain truncation.
    None,
    /// Half-Hann taper `½(1 + cos(πk/M))` over the `M` available lags.
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub window: Window,
    /// Steady-state signal mean (`⟨σz⟩_ss` or the record mean).
    pub mean_signal: f64,
    /// One-sigma statistical error per lag (empirical estimates only).
    pub stderr: Option<Vec<f64>>,
}

impl Autocorrelation {
    /// `(C(τ) − s²)/(C(0) − s²)`; identity on already normalized data.
    pub fn normalized(&self) -> Result<Autocorrelation> {
        if self.normalization == Normalization::Normalized {
            return Ok(self.clone());
        }
        let s2 = self.mean_signal * self.mean_signal;
        let denom = self.values.first().copied().unwrap_or(0.0) - s2;
        if denom.abs() < 1e-15 {
            return Err(QdmError::DegenerateRecord);
        }
        Ok(Autocorrelation {
            values: self.values.iter().map(|v| (v - s2) / denom).collect(),
            normalization: Normalization::Normalized,
            stderr: self
                .stderr
                .as_ref()
                .map(|e| e.iter().map(|x| x / denom.abs()).collect()),
            ..self.clone()
        })
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    /// Uniform lag spacing, if the grid starts at 0 and is evenly spaced.
    pub fn lag_step(&self) -> Option<f64> {
        uniform_step(&self.lags)
    }
}

fn uniform_step(lags: &[f64]) -> Option<f64> {
    if lags.len() < 2 || lags[0] != 0.0 {
        return None;
    }
    let dt = lags[1];
    if dt <= 0.0 {
        return None;
    }
    let ok = lags
        .iter()
        .enumerate()
        .all(|(k, &t)| (t - k as f64 * dt).abs() <= 1e-9 * dt * (k as f64).max(1.0));
    ok.then_some(dt)
}

/// `[0, dt, 2dt, …]` with `n` entries.
pub fn uniform_lags(dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

/// Steady-state autocorrelation via the quantum regression theorem.
pub fn autocorrelation_qrt(l: &Liouvillian, tau_grid: &[f64]) -> Result<Autocorrelation> {
    let ss = steady_state(l)?;
    autocorrelation_qrt_from_state(l, &ss, tau_grid)
}

/// `Re Tr[σz e^{𝓛τ} σz ρ]` for an explicitly supplied state.
pub fn autocorrelation_qrt_from_state(
    l: &Liouvillian,
    rho: &DensityMatrix,
    tau_grid: &[f64],
) -> Result<Autocorrelation> {
    let sz = sigma_z();
    let x = sz * rho.matrix();
    let values = operator_trace(l, &sz, &x, tau_grid)?
        .into_iter()
        .map(|z| z.re)
        .collect();
    Ok(Autocorrelation {
        lags: tau_grid.to_vec(),
        values,
        normalization: Normalization::Raw,
        window: Window::None,
        mean_signal: rho.sigma_z(),
        stderr: None,
    })
}

/// Predicted normalized autocorrelation of a strength-κ record whose
/// between-measurement dynamics (including measurement dephasing) is `l`.
pub fn autocorrelation_record_prediction(l: &Liouvillian, kappa: f64, tau_grid: &[f64]) -> Result<Autocorrelation> {
    let qrt = autocorrelation_qrt(l, tau_grid)?;
    let s = qrt.mean_signal;
    let k2 = kappa * kappa;
    let denom = 1.0 - k2 * s * s;
    let values = qrt
        .lags
        .iter()
        .zip(&qrt.values)
        .map(|(&t, &c)| if t == 0.0 { 1.0 } else { k2 * (c - s * s) / denom })
        .collect();
    Ok(Autocorrelation {
        values,
        normalization: Normalization::Normalized,
        mean_signal: kappa * s,
        ..qrt
    })
}

/// Lagged products `Σ_i x_i x_{i+k}` for `k = 0..=max_lag`, exact.
fn lagged_sums(x: &[i8], max_lag: usize) -> Vec<i64> {
    let n = x.len();
    if (n as u64) * (max_lag as u64 + 1) <= 20_000_000 {
        return (0..=max_lag)
            .map(|k| x[..n - k].iter().zip(&x[k..]).map(|(&a, &b)| (a * b) as i64).sum())
            .collect();
    }
    // Blocked correlation: each block of `len` samples is correlated with
    // itself plus the following `max_lag` samples, so memory stays bounded.
    let size = (4 * (max_lag + 1)).next_power_of_two().max(1 << 15);
    let len = size - max_lag;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let zero = Complex::new(0.0, 0.0);
    let mut a = vec![zero; size];
    let mut b = vec![zero; size];
    let mut sums = vec![0i64; max_lag + 1];
    for start in (0..n).step_by(len) {
        let end_a = (start + len).min(n);
        let end_b = (start + size).min(n);
        for (i, z) in a.iter_mut().enumerate() {
            *z = if start + i < end_a {
                Complex::new(x[start + i] as f64, 0.0)
            } else {
                zero
            };
        }
        for (i, z) in b.iter_mut().enumerate() {
            *z = if start + i < end_b {
                Complex::new(x[start + i] as f64, 0.0)
            } else {
                zero
            };
        }
        fwd.process(&mut a);
        fwd.process(&mut b);
        for (za, zb) in a.iter_mut().zip(&b) {
            *za = za.conj() * zb;
        }
        inv.process(&mut a);
        // Sums of ±1 products are integers; rounding removes FFT round-off.
        for (s, z) in sums.iter_mut().zip(&a) {
            *s += (z.re / size as f64).round() as i64;
        }
    }
    sums
}

/// Normalized autocorrelation of a measurement record up to `max_lag`.
pub fn autocorrelation_empirical(record: &MeasurementRecord, max_lag: usize) -> Result<Autocorrelation> {
    let n = record.len();
    if max_lag == 0 || max_lag * 10 >= n {
        return Err(QdmError::RecordTooShort { len: n, max_lag });
    }
    let x = record.outcomes();
    let m = record.mean();
    let var = 1.0 - m * m;
    if var < 1e-15 {
        return Err(QdmError::DegenerateRecord);
    }
    let sums = lagged_sums(x, max_lag);
    let mut values = Vec::with_capacity(max_lag + 1);
    let mut stderr = Vec::with_capacity(max_lag + 1);
    for (k, &s) in sums.iter().enumerate() {
        let c = s as f64 / (n - k) as f64;
        values.push((c - m * m) / var);
        stderr.push(if k == 0 {
            0.0
        } else {
            ((1.0 - c * c).max(0.0) / (n - k) as f64).sqrt() / var
        });
    }
    Ok(Autocorrelation {
        lags: uniform_lags(record.delta_t(), max_lag + 1),
        values,
        normalization: Normalization::Normalized,
        window: Window::Hann,
        mean_signal: m,
        stderr: Some(stderr),
    })
}

/// Power spectrum on a uniform angular-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(f64::INFINITY) - self.frequencies[0]
    }

    pub fn scaled(&self, c: f64) -> Spectrum {
        Spectrum {
            frequencies: self.frequencies.clone(),
            power: self.power.iter().map(|p| p * c).collect(),
        }
    }

    /// `frequency,power` rows (angular frequency).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,power")?;
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            writeln!(w, "{f:e},{p:e}")?;
        }
        Ok(())
    }
}

/// Cosine transform of the (window-tapered, symmetrized) normalized
/// autocorrelation: `S(ω) = Δτ Σ_{|k|<M} w_k C_k e^{iωkΔτ}`.
pub fn spectrum(ac: &Autocorrelation) -> Result<Spectrum> {
    spectrum_padded(ac, 1)
}

/// As [`spectrum`] with the transform zero-padded by `pad` (finer grid).
///
/// Negative values produced by window sidelobes or truncation are clipped
/// to zero.
pub fn spectrum_padded(ac: &Autocorrelation, pad: usize) -> Result<Spectrum> {
    let dt = ac
        .lag_step()
        .ok_or_else(|| QdmError::Domain("spectrum requires a uniform lag grid starting at 0".into()))?;
    if pad == 0 {
        return domain("pad must be >= 1");
    }
    let ac = ac.normalized()?;
    let m = ac.values.len();
    let size = 2 * m * pad;
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for (k, &c) in ac.values.iter().enumerate() {
        let w = match ac.window {
            Window::None => 1.0,
            Window::Hann => 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / m as f64).cos()),
        };
        buf[k] = Complex::new(w * c, 0.0);
        if k > 0 {
            buf[size - k] = Complex::new(w * c, 0.0);
        }
    }
    FftPlanner::<f64>::new().plan_fft_forward(size).process(&mut buf);
    let n_out = size / 2 + 1;
    let d_omega = 2.0 * std::f64::consts::PI / (size as f64 * dt);
    Ok(Spectrum {
        frequencies: (0..n_out).map(|i| i as f64 * d_omega).collect(),
        power: buf[..n_out].iter().map(|z| (z.re * dt).max(0.0)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedPeaks {
    One,
    Two,
    Auto,
}

/// Resolution state of a spectral splitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakSplitting {
    /// One line.
    Single,
    /// Two lines separated by more than the resolution threshold.
    Split { splitting: f64, peak_ratio: f64 },
    /// Two lines fitted but too close to separate.
    Unresolved { separation: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    /// Ascending peak centres (angular frequency).
    pub peak_frequencies: Vec<f64>,
    /// Peak heights above baseline, matching `peak_frequencies`.
    pub amplitudes: Vec<f64>,
    /// HWHM of each peak.
    pub linewidths: Vec<f64>,
    /// HWHM of the dominant peak.
    pub linewidth: f64,
    pub splitting: PeakSplitting,
    pub baseline: f64,
    /// Residual sum of squares relative to Σ power² (after normalization).
    pub fit_residual: f64,
}

impl SpectralEstimate {
    pub fn splitting_value(&self) -> Option<f64> {
        match self.splitting {
            PeakSplitting::Split { splitting, .. } => Some(splitting),
            _ => None,
        }
    }

    /// Minor-to-major peak area ratio.
    pub fn peak_ratio(&self) -> Option<f64> {
        match self.splitting {
            PeakSplitting::Split { peak_ratio, .. } => Some(peak_ratio),
            _ => None,
        }
    }

    /// Minor-state population `r/(1 + r)` implied by the peak ratio.
    pub fn p_minor(&self) -> Option<f64> {
        self.peak_ratio().map(|r| r / (1.0 + r))
    }

    /// Dominant peak frequency.
    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .amplitudes
            .iter()
            .zip(&self.linewidths)
            .map(|(a, g)| a * g)
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, w)| if w > acc.1 { (i, w) } else { acc });
        self.peak_frequencies[i]
    }
}

/// Line shape used by [`estimate_parameters_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LineShape {
    /// `A Γ²/(Γ² + (ω − ω₀)²)`.
    #[default]
    Lorentzian,
    /// Lorentzian times the counter-rotating factor
    /// `(Γ² + 4ω₀²)/(Γ² + (ω + ω₀)²)`. This is the exact σz line of a
    /// transversely driven, z-dephased qubit (a damped oscillator), whose
    /// low-frequency side is otherwise overweighted relative to a Lorentzian.
    DrivenQubit,
}

/// Baseline plus `n` lines of peak height `A`, centre `ω₀`, HWHM `Γ`.
struct Lines {
    n: usize,
    shape: LineShape,
}

impl Model for Lines {
    fn n_params(&self) -> usize {
        1 + 3 * self.n
    }

    fn eval(&self, p: &[f64], x: f64, g: &mut [f64]) -> f64 {
        let mut f = p[0];
        g[0] = 1.0;
        for k in 0..self.n {
            let (a, w0, gam) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
            let d = x - w0;
            let g2 = gam * gam;
            let den = g2 + d * d;
            let l = g2 / den;
            let l_w = g2 * 2.0 * d / (den * den);
            let l_g = 2.0 * gam * d * d / (den * den);
            let (k_, k_w, k_g) = match self.shape {
                LineShape::Lorentzian => (1.0, 0.0, 0.0),
                LineShape::DrivenQubit => {
                    let s = x + w0;
                    let num = g2 + 4.0 * w0 * w0;
                    let dd = g2 + s * s;
                    (
                        num / dd,
                        (8.0 * w0 * dd - num * 2.0 * s) / (dd * dd),
                        (2.0 * gam * dd - num * 2.0 * gam) / (dd * dd),
                    )
                }
            };
            f += a * l * k_;
            g[1 + 3 * k] = l * k_;
            g[2 + 3 * k] = a * (l_w * k_ + l * k_w);
            g[3 + 3 * k] = a * (l_g * k_ + l * k_g);
        }
        f
    }
}

struct Candidate {
    index: usize,
    prominence: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Half width (in bins) of the moving average used to locate peaks.
const SMOOTH_HALF_WIDTH: usize = 2;
/// Auto mode: minimum height of the second line in residual-noise units.
const AUTO_MIN_SIGMAS: f64 = 3.0;
/// Auto mode: minimum residual reduction, in residual-noise variances.
const AUTO_MIN_RSS_GAIN: f64 = 100.0;

fn smooth(v: &[f64], half: usize) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(n));
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn robust_sigma(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    1.4826 * median(&mut dev)
}

/// Local maxima of `p[start..]` ranked by topographic prominence.
fn peak_candidates(p: &[f64], start: usize) -> Vec<Candidate> {
    let n = p.len();
    let mut out = Vec::new();
    for i in start.max(1)..n.saturating_sub(1) {
        if !(p[i] > p[i - 1] && p[i] >= p[i + 1]) {
            continue;
        }
        let mut left_min = p[i];
        let mut j = i;
        while j > start {
            j -= 1;
            if p[j] > p[i] {
                break;
            }
            left_min = left_min.min(p[j]);
        }
        let mut right_min = p[i];
        let mut j = i;
        while j + 1 < n {
            j += 1;
            if p[j] > p[i] {
                break;
            }
            right_min = right_min.min(p[j]);
        }
        out.push(Candidate {
            index: i,
            prominence: p[i] - left_min.max(right_min),
        });
    }
    out.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
    out
}

/// HWHM of the feature at `i` above `base`, in frequency units.
fn half_width(p: &[f64], f: &[f64], i: usize, base: f64, bin: f64) -> f64 {
    let half = base + 0.5 * (p[i] - base);
    let mut r = i;
    while r + 1 < p.len() && p[r] > half {
        r += 1;
    }
    let mut l = i;
    while l > 0 && p[l] > half {
        l -= 1;
    }
    (0.5 * (f[r] - f[l])).max(bin)
}

fn fit_peaks(xs: &[f64], ys: &[f64], init: Vec<f64>, shape: LineShape) -> Result<LmFit> {
    let n = (init.len() - 1) / 3;
    // Nearly coincident lines make a flat valley; allow a longer walk.
    let opts = LmOptions {
        max_iterations: 1000,
        tolerance: 1e-7,
        ..LmOptions::default()
    };
    levenberg_marquardt(&Lines { n, shape }, xs, ys, &init, opts)
}

/// Fit one or two Lorentzians plus a constant baseline and classify the
/// splitting.
///
/// The spectrum is rescaled to unit maximum before fitting, so the result is
/// invariant under multiplication of the power by a positive constant. A
/// zero-frequency feature (population relaxation) is excluded from the fit
/// window. The second line is seeded where the single-line fit leaves the
/// largest excess. In `Auto` mode the two-line model is kept when it lowers
/// the residual sum of squares by more than 100 residual-noise variances and
/// its minor line rises above three times the residual noise (both measured
/// by the robust scatter of the single-line residuals). Two lines count as split when their
/// separation exceeds `max(linewidth, 2 × bin width)`.
pub fn estimate_parameters(s: &Spectrum, expected: ExpectedPeaks) -> Result<SpectralEstimate> {
    estimate_parameters_with(s, expected, LineShape::Lorentzian)
}

/// As [`estimate_parameters`] with a choice of line shape.
pub fn estimate_parameters_with(s: &Spectrum, expected: ExpectedPeaks, shape: LineShape) -> Result<SpectralEstimate> {
    if s.power.len() < 8 || s.power.len() != s.frequencies.len() {
        return domain("spectrum too short to fit");
    }
    let scale = s.power.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(QdmError::FeaturelessSpectrum {
            prominence: 0.0,
            floor: 0.0,
        });
    }
    let p: Vec<f64> = s.power.iter().map(|v| v / scale).collect();
    let f = &s.frequencies;
    let bin = s.bin_width();

    // Skip a feature centred at zero frequency.
    let mut start = 0;
    if p[0] >= p[1] {
        while start + 1 < p.len() && p[start + 1] <= p[start] {
            start += 1;
        }
    }
    let xs = &f[start..];
    let ys = &p[start..];

    // Candidates come from a lightly smoothed copy so that bin-to-bin noise
    // does not masquerade as structure.
    let ps = smooth(&p, SMOOTH_HALF_WIDTH);
    let cands = peak_candidates(&ps, start);
    let floor = 5.0 * robust_sigma(ys);
    let top = match cands.first() {
        Some(c) if c.prominence > floor && c.prominence > 1e-9 => c,
        Some(c) => {
            return Err(QdmError::FeaturelessSpectrum {
                prominence: c.prominence,
                floor,
            })
        }
        None => return Err(QdmError::FeaturelessSpectrum { prominence: 0.0, floor }),
    };

    let base0 = median(&mut ys.to_vec());
    let hw0 = half_width(&ps, f, top.index, base0, bin);
    let a0 = ps[top.index] - base0;
    let fit1 = fit_peaks(xs, ys, vec![base0, a0, f[top.index], hw0], shape)?;
    let resid1: Vec<f64> = {
        let m = Lines { n: 1, shape };
        let mut g = vec![0.0; 4];
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| y - m.eval(&fit1.params, x, &mut g))
            .collect()
    };
    let noise1 = robust_sigma(&resid1);

    // The second line is seeded at the largest excess left by the
    // single-line fit, falling back to the runner-up local maximum.
    let rs = smooth(&resid1, SMOOTH_HALF_WIDTH);
    let excess = rs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &v)| (i + start, v))
        .filter(|&(i, v)| v > 0.0 && i != top.index);
    let seed2 = excess.or_else(|| {
        cands
            .iter()
            .skip(1)
            .find(|c| c.index.abs_diff(top.index) >= 2)
            .map(|c| (c.index, ps[c.index] - base0))
    });
    let init2 = |seed: Option<(usize, f64)>| {
        let (a1, w1, g1) = match seed {
            Some((i, h)) => (h, f[i], half_width(&ps, f, i, ps[i] - h, bin).min(4.0 * hw0)),
            None => (0.5 * a0, f[top.index] + 2.0 * hw0, hw0),
        };
        let q = &fit1.params;
        vec![q[0], q[1], q[2], q[3].abs(), a1.max(1e-6), w1, g1]
    };

    let use_two = match expected {
        ExpectedPeaks::One => None,
        ExpectedPeaks::Two => Some(fit_peaks(xs, ys, init2(seed2), shape)?),
        ExpectedPeaks::Auto => match seed2 {
            Some(sd) if sd.1 > AUTO_MIN_SIGMAS * noise1 => match fit_peaks(xs, ys, init2(Some(sd)), shape) {
                Ok(fit2) => {
                    let minor = fit2.params[1].abs().min(fit2.params[4].abs());
                    let gain = fit1.rss - fit2.rss;
                    (gain > AUTO_MIN_RSS_GAIN * noise1 * noise1 && minor > AUTO_MIN_SIGMAS * noise1).then_some(fit2)
                }
                Err(_) => None,
            },
            _ => None,
        },
    };

    let sum_sq: f64 = ys.iter().map(|y| y * y).sum();
    let (fit, n) = match use_two {
        Some(f2) => (f2, 2),
        None => (fit1, 1),
    };
    let mut peaks: Vec<(f64, f64, f64)> = (0..n)
        .map(|k| {
            let q = &fit.params[1 + 3 * k..4 + 3 * k];
            (q[1], q[0] * scale, q[2].abs())
        })
        .collect();
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    if peaks
        .iter()
        .any(|&(w, a, g)| !(g > 0.0) || !w.is_finite() || !a.is_finite())
    {
        return Err(QdmError::FitNonConvergence {
            iterations: fit.iterations,
            residual: fit.rss,
            lambda: f64::NAN,
        });
    }
    let areas: Vec<f64> = peaks.iter().map(|&(_, a, g)| (a * g).abs()).collect();
    let major = if n == 2 && areas[1] > areas[0] { 1 } else { 0 };
    let linewidth = peaks[major].2;
    let splitting = if n == 1 {
        PeakSplitting::Single
    } else {
        let sep = (peaks[1].0 - peaks[0].0).abs();
        if sep > linewidth.max(2.0 * bin) {
            PeakSplitting::Split {
                splitting: sep,
                peak_ratio: areas[1 - major] / areas[major],
            }
        } else {
            PeakSplitting::Unresolved { separation: sep }
        }
    };
    Ok(SpectralEstimate {
        peak_frequencies: peaks.iter().map(|p| p.0).collect(),
        amplitudes: peaks.iter().map(|p| p.1).collect(),
        linewidths: peaks.iter().map(|p| p.2).collect(),
        linewidth,
        splitting,
        baseline: fit.params[0] * scale,
        fit_residual: if sum_sq > 0.0 { fit.rss / sum_sq } else { 0.0 },
    })
}
