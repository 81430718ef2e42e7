//! Scene generators for the two reference samples and random baths.

use rand::RngExt;

use crate::error::{domain, Result};
use crate::measurement::ProbeConfig;
use crate::rng::{derive_seed, rng_from_seed};
use crate::sample::{
    draw_1f_rates, ChargeFluctuator, Environment, FluctuatorBath, MesoscopicSpin, RateDistribution, UnitsMode,
};
use crate::scene::Scene;

/// Fluctuators per unit area in the normalized fluctuator scenes.
pub const EXAMPLE1_DENSITY: f64 = 1000.0;
/// Probe height of the normalized fluctuator scenes (field of view = 1).
pub const EXAMPLE1_HEIGHT: f64 = 0.05;
/// Coupling at unit distance; gives shifts of ~10⁻¹ and Γ₂ comparable to
/// the intrinsic rate of [`ProbeConfig::normalized`] over dense regions.
pub const EXAMPLE1_V0: f64 = 2e-4;
pub const EXAMPLE1_GAMMA_RANGE: (f64, f64) = (1e-2, 1e2);

/// Magnetizations (μ_B) and positions (nm) of the four-spin sample. The
/// 200 and 100 μ_B spins sit 18 nm apart, inside one field-map blob.
pub const EXAMPLE2_SPINS: [(f64, f64, f64, f64); 4] = [
    // (m0, x, y, diameter)
    (50.0, -28.0, -28.0, 6.0),
    (70.0, -28.0, 28.0, 7.0),
    (100.0, 22.0, -4.0, 8.0),
    (200.0, 22.0, 14.0, 10.0),
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Region {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ring { cx: f64, cy: f64, r_in: f64, r_out: f64 },
}

impl Region {
    fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Region::Disk { r, .. } => PI * r * r,
            Region::Rect { x0, y0, x1, y1 } => (x1 - x0) * (y1 - y0),
            Region::Ring { r_in, r_out, .. } => PI * (r_out * r_out - r_in * r_in),
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Region::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Region::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Region::Ring { cx, cy, r_out, .. } => (cx - r_out, cy - r_out, cx + r_out, cy + r_out),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Disk { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
            Region::Rect { x0, y0, x1, y1 } => (x0..=x1).contains(&x) && (y0..=y1).contains(&y),
            Region::Ring { cx, cy, r_in, r_out } => (r_in..=r_out).contains(&(x - cx).hypot(y - cy)),
        }
    }

    /// `round(density·area)` uniform points by rejection sampling.
    fn sample(&self, density: f64, seed: u64) -> Vec<(f64, f64)> {
        let n = (density * self.area()).round() as usize;
        let (x0, y0, x1, y1) = self.bounds();
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = x0 + (x1 - x0) * rng.random::<f64>();
            let y = y0 + (y1 - y0) * rng.random::<f64>();
            if self.contains(x, y) {
                out.push((x, y));
            }
        }
        out
    }
}

const EXAMPLE1_REGIONS: [Region; 3] = [
    Region::Disk {
        cx: -0.22,
        cy: 0.2,
        r: 0.12,
    },
    Region::Ring {
        cx: 0.22,
        cy: 0.18,
        r_in: 0.07,
        r_out: 0.14,
    },
    Region::Rect {
        x0: -0.3,
        y0: -0.2,
        x1: 0.3,
        y1: -0.1,
    },
];

const CALIBRATION_STRIP: Region = Region::Rect {
    x0: -0.4,
    y0: -0.42,
    x1: 0.4,
    y1: -0.34,
};

/// Normalized fluctuator sample: three outlined regions at area density
/// 1000 with log-uniform (1/f) rates in `[10⁻², 10²]`, plus a calibration
/// strip whose rates grow log-linearly from left to right.
pub fn example1(seed: u64) -> Result<Scene> {
    let (gmin, gmax) = EXAMPLE1_GAMMA_RANGE;
    let mut fl = Vec::new();
    for (k, region) in EXAMPLE1_REGIONS.iter().enumerate() {
        let pts = region.sample(EXAMPLE1_DENSITY, derive_seed(seed, &[k as u64, 0]));
        let rates = draw_1f_rates(pts.len(), gmin, gmax, derive_seed(seed, &[k as u64, 1]))?;
        for ((x, y), g) in pts.into_iter().zip(rates) {
            fl.push(ChargeFluctuator::new(x, y, EXAMPLE1_V0, g, 2.0)?);
        }
    }
    let (x0, x1) = match CALIBRATION_STRIP {
        Region::Rect { x0, x1, .. } => (x0, x1),
        _ => unreachable!(),
    };
    for (x, y) in CALIBRATION_STRIP.sample(EXAMPLE1_DENSITY, derive_seed(seed, &[99, 0])) {
        let u = (x - x0) / (x1 - x0);
        fl.push(ChargeFluctuator::new(
            x,
            y,
            EXAMPLE1_V0,
            gmin * (gmax / gmin).powf(u),
            2.0,
        )?);
    }
    let env = Environment::new(EXAMPLE1_HEIGHT, 1.0, 0.0, UnitsMode::Normalized)?.with_bath(FluctuatorBath::new(
        fl,
        RateDistribution::OneOverF {
            gamma_min: gmin,
            gamma_max: gmax,
        },
    )?);
    Ok(Scene {
        env,
        fov: (1.0, 1.0),
        center: (0.0, 0.0),
        seed: Some(seed),
    })
}

/// Four mesoscopic spins (50, 70, 100, 200 μ_B) in a 100 nm field of view,
/// B = 0.1 T, T = 4 K, h_p = 20 nm.
pub fn example2(seed: u64) -> Result<Scene> {
    let spins = EXAMPLE2_SPINS
        .iter()
        .map(|&(m0, x, y, d)| MesoscopicSpin::new(x / 1e9, y / 1e9, m0, d / 1e9))
        .collect::<Result<Vec<_>>>()?;
    let env = Environment::new(20e-9, 4.0, 0.1, UnitsMode::Si)?.with_spins(spins);
    Ok(Scene {
        env,
        fov: (100e-9, 100e-9),
        center: (0.0, 0.0),
        seed: Some(seed),
    })
}

/// Uniform random normalized bath: `round(density·fov²)` fluctuators in a
/// square field of view with 1/f rates.
pub fn custom_random(seed: u64, density: f64, fov: f64, v0: f64) -> Result<Scene> {
    if !(density >= 0.0) || !(fov > 0.0) || !density.is_finite() || !fov.is_finite() {
        return domain(format!("need density >= 0 and fov > 0, got {density}, {fov}"));
    }
    let half = 0.5 * fov;
    let region = Region::Rect {
        x0: -half,
        y0: -half,
        x1: half,
        y1: half,
    };
    let pts = region.sample(density, derive_seed(seed, &[0]));
    let (gmin, gmax) = EXAMPLE1_GAMMA_RANGE;
    let rates = draw_1f_rates(pts.len(), gmin, gmax, derive_seed(seed, &[1]))?;
    let fl = pts
        .into_iter()
        .zip(rates)
        .map(|((x, y), g)| ChargeFluctuator::new(x, y, v0, g, 2.0))
        .collect::<Result<Vec<_>>>()?;
    let mut env = Environment::new(EXAMPLE1_HEIGHT * fov, 1.0, 0.0, UnitsMode::Normalized)?;
    if !fl.is_empty() {
        env.bath = Some(FluctuatorBath::new(
            fl,
            RateDistribution::OneOverF {
                gamma_min: gmin,
                gamma_max: gmax,
            },
        )?);
    }
    Ok(Scene {
        env,
        fov: (fov, fov),
        center: (0.0, 0.0),
        seed: Some(seed),
    })
}

/// Default probe for a scene's units mode.
pub fn default_probe(scene: &Scene) -> ProbeConfig {
    match scene.env.units {
        UnitsMode::Si => ProbeConfig::nv_center(),
        UnitsMode::Normalized => ProbeConfig::normalized(),
    }
}
