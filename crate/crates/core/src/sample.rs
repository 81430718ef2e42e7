//! Synthetic samples: 1/f charge-fluctuator baths and mesoscopic dipolar
//! spins, mapped to per-pixel probe shifts and decoherence rates.
//!
//! Fluctuator quantities are unit-agnostic (normalized scenes use lengths in
//! units of the field of view and energies in units of the probe transition).
//! Spins are always evaluated in SI: positions in metres, moments in Bohr
//! magnetons, shifts in rad/s.

use rand::RngExt;

use crate::constants::{Constants, GAMMA_ELECTRON};
use crate::error::{domain, ensure_finite, Result};
use crate::fit::{levenberg_marquardt, LmOptions, Model};
use crate::measurement::ProbeConfig;
use crate::rng::rng_from_seed;

/// Two-state charge defect switching at `gamma` with coupling `v0/rⁿ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeFluctuator {
    pub x: f64,
    pub y: f64,
    pub v0: f64,
    pub gamma: f64,
    pub exponent: f64,
    /// Current occupation ξ ∈ {0, 1}.
    pub occupied: bool,
}

impl ChargeFluctuator {
    pub fn new(x: f64, y: f64, v0: f64, gamma: f64, exponent: f64) -> Result<Self> {
        for (name, v) in [("x", x), ("y", y), ("v0", v0), ("gamma", gamma), ("n", exponent)] {
            ensure_finite(name, v)?;
        }
        if gamma <= 0.0 || exponent < 1.0 || v0 < 0.0 {
            return domain(format!(
                "fluctuator needs gamma > 0, n >= 1, v0 >= 0 (got gamma={gamma}, n={exponent}, v0={v0})"
            ));
        }
        Ok(Self {
            x,
            y,
            v0,
            gamma,
            exponent,
            occupied: false,
        })
    }
}

/// How the switching rates of a bath were chosen (recorded, not enforced).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateDistribution {
    OneOverF {
        gamma_min: f64,
        gamma_max: f64,
    },
    /// Rates graded with position across a calibration strip.
    CalibrationGradient {
        gamma_min: f64,
        gamma_max: f64,
    },
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuatorBath {
    fluctuators: Vec<ChargeFluctuator>,
    distribution: RateDistribution,
}

impl FluctuatorBath {
    pub fn new(fluctuators: Vec<ChargeFluctuator>, distribution: RateDistribution) -> Result<Self> {
        if fluctuators.is_empty() {
            return domain("fluctuator bath must be nonempty");
        }
        match distribution {
            RateDistribution::OneOverF { gamma_min, gamma_max }
            | RateDistribution::CalibrationGradient { gamma_min, gamma_max }
                if !(0.0 < gamma_min && gamma_min < gamma_max) =>
            {
                return domain(format!(
                    "need 0 < gamma_min < gamma_max, got [{gamma_min}, {gamma_max}]"
                ));
            }
            _ => {}
        }
        Ok(Self {
            fluctuators,
            distribution,
        })
    }

    pub fn fluctuators(&self) -> &[ChargeFluctuator] {
        &self.fluctuators
    }

    pub fn distribution(&self) -> RateDistribution {
        self.distribution
    }

    pub fn len(&self) -> usize {
        self.fluctuators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluctuators.is_empty()
    }
}

/// Macrospin with moment `m0` (in μ_B) whose axis is along the probe axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MesoscopicSpin {
    pub x: f64,
    pub y: f64,
    pub m0: f64,
    /// Display only.
    pub diameter: f64,
    pub gyromagnetic_ratio: f64,
}

impl MesoscopicSpin {
    pub fn new(x: f64, y: f64, m0: f64, diameter: f64) -> Result<Self> {
        for (name, v) in [("x", x), ("y", y), ("m0", m0), ("diameter", diameter)] {
            ensure_finite(name, v)?;
        }
        if m0 <= 0.0 {
            return domain(format!("spin moment must be > 0, got {m0}"));
        }
        Ok(Self {
            x,
            y,
            m0,
            diameter,
            gyromagnetic_ratio: GAMMA_ELECTRON,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitsMode {
    Si,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub bath: Option<FluctuatorBath>,
    pub spins: Vec<MesoscopicSpin>,
    /// Applied field B (T), along the probe axis.
    pub field: f64,
    pub temperature: f64,
    pub probe_height: f64,
    pub probe_gyromagnetic_ratio: f64,
    pub constants: Constants,
    pub units: UnitsMode,
}

impl Environment {
    pub fn new(probe_height: f64, temperature: f64, field: f64, units: UnitsMode) -> Result<Self> {
        ensure_finite("probe_height", probe_height)?;
        ensure_finite("temperature", temperature)?;
        ensure_finite("field", field)?;
        if probe_height <= 0.0 || temperature <= 0.0 {
            return domain(format!(
                "need probe height > 0 and temperature > 0, got h_p={probe_height}, T={temperature}"
            ));
        }
        Ok(Self {
            bath: None,
            spins: Vec::new(),
            field,
            temperature,
            probe_height,
            probe_gyromagnetic_ratio: GAMMA_ELECTRON,
            constants: Constants::default(),
            units,
        })
    }

    pub fn with_bath(mut self, bath: FluctuatorBath) -> Self {
        self.bath = Some(bath);
        self
    }

    pub fn with_spins(mut self, spins: Vec<MesoscopicSpin>) -> Self {
        self.spins = spins;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.bath.is_none() && self.spins.is_empty()
    }

    /// Same sample seen from a different probe height.
    pub fn at_height(&self, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return domain(format!("probe height must be > 0, got {h}"));
        }
        Ok(Self {
            probe_height: h,
            ..self.clone()
        })
    }
}

fn distance(h: f64, dx: f64, dy: f64) -> f64 {
    (h * h + dx * dx + dy * dy).sqrt()
}

/// `v0/rⁿ` with `r = √(h_p² + lateral²)`.
pub fn coupling_strength(f: &ChargeFluctuator, probe_xy: (f64, f64), h_p: f64) -> f64 {
    let r = distance(h_p, probe_xy.0 - f.x, probe_xy.1 - f.y);
    f.v0 / r.powf(f.exponent)
}

/// Telegraph-noise Lorentzian `v²γ/(γ² + ω²)`.
pub fn fluctuator_spectrum(f: &ChargeFluctuator, v: f64, omega: f64) -> f64 {
    v * v * f.gamma / (f.gamma * f.gamma + omega * omega)
}

/// Sum of per-fluctuator spectra seen from `probe_xy`.
pub fn bath_spectrum(bath: &FluctuatorBath, probe_xy: (f64, f64), h_p: f64, omega: f64) -> f64 {
    bath.fluctuators
        .iter()
        .map(|f| fluctuator_spectrum(f, coupling_strength(f, probe_xy, h_p), omega))
        .sum()
}

/// Golden-rule `(Γ₂, Γ₋) = (S/4, S/2)`.
pub fn golden_rule_rates(s_at_ej: f64) -> (f64, f64) {
    (0.25 * s_at_ej, 0.5 * s_at_ej)
}

/// Log-uniform rates `γ_min (γ_max/γ_min)^u`, density ∝ 1/γ.
pub fn draw_1f_rates(n: usize, gamma_min: f64, gamma_max: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0 < gamma_min && gamma_min < gamma_max) || !gamma_max.is_finite() {
        return domain(format!(
            "need 0 < gamma_min < gamma_max, got [{gamma_min}, {gamma_max}]"
        ));
    }
    let mut rng = rng_from_seed(seed);
    let ratio = gamma_max / gamma_min;
    Ok((0..n).map(|_| gamma_min * ratio.powf(rng.random::<f64>())).collect())
}

/// `(r, cos φ)` between the probe and a spin, φ measured from the probe axis.
fn spin_geometry(spin: &MesoscopicSpin, probe_xy: (f64, f64), h_p: f64) -> (f64, f64) {
    let r = distance(h_p, probe_xy.0 - spin.x, probe_xy.1 - spin.y);
    (r, h_p / r)
}

/// Axial dipole field `(μ0/4π) M0 μ_B (3cos²φ − 1)/r³` (T) at the probe.
pub fn dipolar_field(spin: &MesoscopicSpin, probe_xy: (f64, f64), env: &Environment) -> f64 {
    let (r, c) = spin_geometry(spin, probe_xy, env.probe_height);
    env.constants.dipole_prefactor() * spin.m0 * env.constants.mu_b * (3.0 * c * c - 1.0) / r.powi(3)
}

/// Probe frequency shift (rad/s) with the sample spin up: `γ_p B_dip`.
pub fn dipolar_shift(spin: &MesoscopicSpin, probe_xy: (f64, f64), env: &Environment) -> f64 {
    env.probe_gyromagnetic_ratio * dipolar_field(spin, probe_xy, env)
}

/// Classical dipole–dipole energy `(μ0/4π)[m₁·m₂ − 3(m₁·r̂)(m₂·r̂)]/r³` (J).
pub fn dipolar_energy_tensor(m1: [f64; 3], m2: [f64; 3], r: [f64; 3], constants: &Constants) -> f64 {
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let rn = dot(r, r).sqrt();
    let u = [r[0] / rn, r[1] / rn, r[2] / rn];
    constants.dipole_prefactor() * (dot(m1, m2) - 3.0 * dot(m1, u) * dot(m2, u)) / rn.powi(3)
}

/// Stationary `(p_ground, p_excited)` for a full flip `ΔE = 2 M0 μ_B B`.
pub fn boltzmann_populations(spin: &MesoscopicSpin, env: &Environment) -> (f64, f64) {
    let de = 2.0 * spin.m0 * env.constants.mu_b * env.field.abs();
    let x = de / (env.constants.k_b * env.temperature);
    if x < 1e-12 {
        return (0.5, 0.5);
    }
    let pe = 1.0 / (1.0 + x.exp());
    (1.0 - pe, pe)
}

/// Lateral FWHM `2h√(2^{2/n} − 1)` of a `1/rⁿ` response.
pub fn resolution_fwhm(h_p: f64, n: f64) -> Result<f64> {
    if !(h_p > 0.0) || !(n >= 1.0) {
        return domain(format!("need h_p > 0 and n >= 1, got h_p={h_p}, n={n}"));
    }
    Ok(2.0 * h_p * (2f64.powf(2.0 / n) - 1.0).sqrt())
}

/// Unnormalized lateral response `[1/(h_p² + (x − x_s)²)]^{n/2}`.
pub fn response_profile(x: f64, x_s: f64, h_p: f64, n: f64) -> f64 {
    (1.0 / (h_p * h_p + (x - x_s) * (x - x_s))).powf(0.5 * n)
}

/// Full width at half maximum of sampled data with a single peak, with
/// linear interpolation of both half-max crossings.
pub fn measured_fwhm(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (imax, &ymax) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = 0.5 * ymax;
    let cross = |i: usize, j: usize| xs[i] + (half - ys[i]) * (xs[j] - xs[i]) / (ys[j] - ys[i]);
    let left = (1..=imax).rev().find(|&i| ys[i - 1] < half).map(|i| cross(i - 1, i))?;
    let right = (imax..ys.len() - 1)
        .find(|&i| ys[i + 1] < half)
        .map(|i| cross(i, i + 1))?;
    Some(right - left)
}

/// Closed-form response of the probe at one position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelModel {
    /// Static σz (field-map) shift: fluctuator mean plus spin thermal mean.
    pub delta_shift: f64,
    /// Golden-rule Γ₂ of the fast bath at the probe transition energy.
    pub gamma_sample: f64,
    /// Peak separation `2|s|` from the dominant slow spin.
    pub splitting: Option<f64>,
    /// Excited population of the dominant spin.
    pub p_excited: Option<f64>,
}

/// Shift and excited population of every spin as seen from `probe_xy`,
/// ordered by decreasing |shift|.
pub fn spin_sources(env: &Environment, probe_xy: (f64, f64)) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = env
        .spins
        .iter()
        .map(|s| (dipolar_shift(s, probe_xy, env), boltzmann_populations(s, env).1))
        .collect();
    v.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
    v
}

/// Fast-bath limit for fluctuators plus slow-spin limit for spins.
///
/// Fluctuators sit at mean occupation ½, so their static shift is `Σv/2`.
/// A slow spin contributes its thermal mean `s(1 − 2p_e)` to the static
/// shift; the dominant spin (largest |s|) sets the splitting `2|s|` and the
/// reported excited population.
pub fn effective_pixel_model(env: &Environment, probe: &ProbeConfig, probe_xy: (f64, f64)) -> PixelModel {
    let mut out = PixelModel::default();
    if let Some(bath) = &env.bath {
        let e = probe.transition_energy();
        out.gamma_sample = golden_rule_rates(bath_spectrum(bath, probe_xy, env.probe_height, e)).0;
        out.delta_shift += 0.5
            * bath
                .fluctuators
                .iter()
                .map(|f| coupling_strength(f, probe_xy, env.probe_height))
                .sum::<f64>();
    }
    let spins = spin_sources(env, probe_xy);
    out.delta_shift += spins.iter().map(|&(s, pe)| s * (1.0 - 2.0 * pe)).sum::<f64>();
    if let Some(&(s, pe)) = spins.first() {
        out.splitting = Some(2.0 * s.abs());
        out.p_excited = Some(pe);
    }
    out
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    struct Line;
    impl Model for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, p: &[f64], x: f64, g: &mut [f64]) -> f64 {
            g[0] = 1.0;
            g[1] = x;
            p[0] + p[1] * x
        }
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    // A linear model converges in one step from any start.
    levenberg_marquardt(&Line, &lx, &ly, &[0.0, 0.0], LmOptions::default())
        .map(|f| f.params[1])
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fl(v0: f64, gamma: f64, n: f64) -> ChargeFluctuator {
        ChargeFluctuator::new(0.0, 0.0, v0, gamma, n).unwrap()
    }

    fn example2_env() -> Environment {
        Environment::new(20e-9, 4.0, 0.1, UnitsMode::Si).unwrap()
    }

    #[test]
    fn coupling_examples() {
        let f = fl(1.0, 1.0, 2.0);
        let above = coupling_strength(&f, (0.0, 0.0), 0.05);
        assert!((above - 400.0).abs() < 1e-9);
        assert!((coupling_strength(&f, (0.05, 0.0), 0.05) - above / 2.0).abs() < 1e-9);
        let f3 = fl(1.0, 1.0, 3.0);
        let off = 0.05 * 3f64.sqrt();
        let ratio = coupling_strength(&f3, (0.0, off), 0.05) / coupling_strength(&f3, (0.0, 0.0), 0.05);
        assert!((ratio - 0.125).abs() < 1e-12);
    }

    #[test]
    fn fluctuator_spectrum_examples() {
        let f = fl(1.0, 2.0, 2.0);
        let s0 = fluctuator_spectrum(&f, 3.0, 0.0);
        assert!((s0 - 4.5).abs() < 1e-12);
        assert!((fluctuator_spectrum(&f, 3.0, 2.0) - s0 / 2.0).abs() < 1e-12);
        assert!((fluctuator_spectrum(&f, 3.0, 20.0) - 9.0 * 2.0 / 404.0).abs() < 1e-12);
    }

    #[test]
    fn bath_is_additive() {
        let f = fl(1.0, 2.0, 2.0);
        let one = FluctuatorBath::new(vec![f], RateDistribution::Fixed).unwrap();
        let two = FluctuatorBath::new(vec![f, f], RateDistribution::Fixed).unwrap();
        let v = coupling_strength(&f, (0.1, 0.0), 0.05);
        assert!((bath_spectrum(&one, (0.1, 0.0), 0.05, 1.0) - fluctuator_spectrum(&f, v, 1.0)).abs() < 1e-12);
        assert!(
            (bath_spectrum(&two, (0.1, 0.0), 0.05, 1.0) - 2.0 * bath_spectrum(&one, (0.1, 0.0), 0.05, 1.0)).abs()
                < 1e-9
        );
        assert!(FluctuatorBath::new(vec![], RateDistribution::Fixed).is_err());
    }

    #[test]
    fn golden_rule_examples() {
        assert_eq!(golden_rule_rates(0.0), (0.0, 0.0));
        assert_eq!(golden_rule_rates(1.0), (0.25, 0.5));
        assert_eq!(golden_rule_rates(8.0), (2.0, 4.0));
    }

    #[test]
    fn one_over_f_draws() {
        let r = draw_1f_rates(1000, 1.0, 1.0 + 1e-9, 3).unwrap();
        assert!(r.iter().all(|g| (g - 1.0).abs() < 2e-9));
        let mut r = draw_1f_rates(100_000, 1e-2, 1e2, 4).unwrap();
        r.sort_by(|a, b| a.total_cmp(b));
        let median = r[r.len() / 2];
        assert!((median - 1.0).abs() < 0.05, "{median}");
        assert_eq!(
            draw_1f_rates(10, 1.0, 2.0, 9).unwrap(),
            draw_1f_rates(10, 1.0, 2.0, 9).unwrap()
        );
        assert!(draw_1f_rates(10, 2.0, 1.0, 0).is_err());
    }

    #[test]
    fn dipolar_examples() {
        let env = example2_env();
        let spin = MesoscopicSpin::new(0.0, 0.0, 200.0, 8e-9).unwrap();
        let field = dipolar_field(&spin, (0.0, 0.0), &env);
        assert!((field - 46.4e-6).abs() / 46.4e-6 < 0.01, "{field}");
        let shift = dipolar_shift(&spin, (0.0, 0.0), &env);
        assert!((shift / (2.0 * std::f64::consts::PI) - 1.3e6).abs() / 1.3e6 < 0.02);
        // Magic angle: tan φ = √2.
        let magic = 20e-9 * 2f64.sqrt();
        assert!(dipolar_shift(&spin, (magic, 0.0), &env).abs() < 1e-9 * shift);
        // φ → π/2 at fixed r: compare against the r-scaled on-axis value.
        let far = env.at_height(1e-15).unwrap();
        let side = dipolar_shift(&spin, (20e-9, 0.0), &far);
        assert!((side / shift + 0.5).abs() < 1e-6);
    }

    #[test]
    fn ising_form_matches_tensor_element() {
        let env = example2_env();
        let spin = MesoscopicSpin::new(3e-9, -7e-9, 120.0, 8e-9).unwrap();
        let xy = (11e-9, 4e-9);
        let shift = dipolar_shift(&spin, xy, &env);
        let m_p = env.constants.hbar * env.probe_gyromagnetic_ratio;
        let m_s = spin.m0 * env.constants.mu_b;
        let r = [xy.0 - spin.x, xy.1 - spin.y, env.probe_height];
        let e = dipolar_energy_tensor([0.0, 0.0, m_p], [0.0, 0.0, m_s], r, &env.constants);
        assert!((env.constants.hbar * shift + e).abs() <= 1e-12 * e.abs());
    }

    #[test]
    fn boltzmann_examples() {
        let env = example2_env();
        let spin = MesoscopicSpin::new(0.0, 0.0, 50.0, 8e-9).unwrap();
        let (pg, pe) = boltzmann_populations(&spin, &env);
        assert!((pe - 0.157).abs() < 0.001, "{pe}");
        assert!((pg + pe - 1.0).abs() < 1e-15);
        let zero = Environment {
            field: 0.0,
            ..env.clone()
        };
        assert_eq!(boltzmann_populations(&spin, &zero), (0.5, 0.5));
        let hot = Environment {
            temperature: 1e30,
            ..env
        };
        assert_eq!(boltzmann_populations(&spin, &hot), (0.5, 0.5));
    }

    #[test]
    fn resolution_examples() {
        assert_eq!(resolution_fwhm(1.0, 2.0).unwrap(), 2.0);
        assert!((resolution_fwhm(1.0, 3.0).unwrap() - 1.5328).abs() < 1e-4);
        let r4 = resolution_fwhm(1.0, 4.0).unwrap();
        assert!((r4 - 1.287).abs() < 1e-3);
        assert!((2.0 / r4 - 1.554).abs() < 1e-3);
        assert!(resolution_fwhm(0.0, 2.0).is_err());
        let xs: Vec<f64> = (0..10_001).map(|i| -5.0 + i as f64 * 1e-3).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| response_profile(x, 0.0, 1.0, 3.0)).collect();
        let w = measured_fwhm(&xs, &ys).unwrap();
        assert!((w / resolution_fwhm(1.0, 3.0).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn pixel_model_examples() {
        let probe = ProbeConfig::normalized();
        let empty = Environment::new(0.05, 1.0, 0.0, UnitsMode::Normalized).unwrap();
        assert_eq!(effective_pixel_model(&empty, &probe, (0.0, 0.0)), PixelModel::default());

        let g = probe.transition_energy();
        let f = fl(1e-3, g, 2.0);
        let env = empty
            .clone()
            .with_bath(FluctuatorBath::new(vec![f], RateDistribution::Fixed).unwrap());
        let v = coupling_strength(&f, (0.0, 0.0), 0.05);
        let m = effective_pixel_model(&env, &probe, (0.0, 0.0));
        assert!((m.gamma_sample - v * v / (8.0 * g)).abs() < 1e-12 * m.gamma_sample);
        assert!((m.delta_shift - v / 2.0).abs() < 1e-15);

        let env2 = example2_env().with_spins(vec![MesoscopicSpin::new(0.0, 0.0, 200.0, 8e-9).unwrap()]);
        let m = effective_pixel_model(&env2, &ProbeConfig::nv_center(), (0.0, 0.0));
        let split_mhz = m.splitting.unwrap() / (2.0 * std::f64::consts::PI) / 1e6;
        assert!((split_mhz - 2.6).abs() < 0.05, "{split_mhz}");
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let xs: Vec<f64> = (1..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.7)).collect();
        assert!((log_log_slope(&xs, &ys) + 1.7).abs() < 1e-9);
    }
}
