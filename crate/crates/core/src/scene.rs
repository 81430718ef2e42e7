//! Scene files: a line-oriented text format describing a sample.
//!
//! ```text
//! # Four-spin sample
//! units = si                 # si | normalized
//! probe_height = 20nm
//! temperature = 4K
//! field = 0.1T
//! fov = 100nm                # or 100nm,80nm
//! center = 0nm,0nm
//! seed = 7
//! spin x=-28nm y=-28nm m0=50 diameter=8nm
//! bath distribution=one_over_f gamma_min=0.01 gamma_max=100
//! fluctuator x=0.1 y=-0.2 v0=2e-4 gamma=0.5 n=2
//! ```
//!
//! Globals are `key = value`; `spin`, `fluctuator` and `bath` lines carry
//! `key=value` fields. In `si` mode lengths, fields and temperatures need a
//! unit suffix; in `normalized` mode bare numbers are taken as already
//! dimensionless. Fluctuator `v0` is always a bare number and `gamma` a bare
//! rate (or, in `si` mode, a frequency with unit, read as s⁻¹).
//! Every parse error carries the offending line number.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{QdmError, Result};
use crate::sample::{ChargeFluctuator, Environment, FluctuatorBath, MesoscopicSpin, RateDistribution, UnitsMode};
use crate::units::{at_line, parse_list, parse_quantity, Dimension};

/// A parsed scene: the sample plus its default field of view and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub env: Environment,
    pub fov: (f64, f64),
    pub center: (f64, f64),
    pub seed: Option<u64>,
}

fn perr(line: usize, message: impl Into<String>) -> QdmError {
    QdmError::Parse {
        line,
        message: message.into(),
    }
}

fn fields(line: usize, tokens: &[&str]) -> Result<Vec<(String, String)>> {
    tokens
        .iter()
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| perr(line, format!("expected key=value, got {t:?}")))
        })
        .collect()
}

struct FieldSet {
    line: usize,
    items: Vec<(String, String)>,
}

impl FieldSet {
    fn take(&mut self, key: &str) -> Option<String> {
        let i = self.items.iter().position(|(k, _)| k == key)?;
        Some(self.items.remove(i).1)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| perr(self.line, format!("missing field {key:?}")))
    }

    fn finish(self) -> Result<()> {
        match self.items.first() {
            Some((k, _)) => Err(perr(self.line, format!("unknown field {k:?}"))),
            None => Ok(()),
        }
    }
}

/// Parse scene text.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut units = None;
    let mut height = None;
    let mut temperature = None;
    let mut field = None;
    let mut fov = None;
    let mut center = None;
    let mut seed = None;
    let mut raw_spins = Vec::new();
    let mut raw_fluct = Vec::new();
    let mut bath_line: Option<(usize, Vec<(String, String)>)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let first = content.split_whitespace().next().unwrap_or("");
        if matches!(first, "spin" | "fluctuator" | "bath") && !content[first.len()..].trim_start().starts_with('=') {
            let rest: Vec<&str> = content[first.len()..].split_whitespace().collect();
            let f = fields(line, &rest)?;
            match first {
                "spin" => raw_spins.push((line, f)),
                "fluctuator" => raw_fluct.push((line, f)),
                _ => {
                    if bath_line.is_some() {
                        return Err(perr(line, "duplicate bath line"));
                    }
                    bath_line = Some((line, f));
                }
            }
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| perr(line, format!("expected `key = value`, got {content:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "units" => {
                units = Some(match v {
                    "si" => UnitsMode::Si,
                    "normalized" => UnitsMode::Normalized,
                    _ => return Err(perr(line, format!("units must be si or normalized, got {v:?}"))),
                })
            }
            "probe_height" => height = Some((line, v.to_string())),
            "temperature" => temperature = Some((line, v.to_string())),
            "field" => field = Some((line, v.to_string())),
            "fov" => fov = Some((line, v.to_string())),
            "center" => center = Some((line, v.to_string())),
            "seed" => {
                seed = Some(
                    v.parse::<u64>()
                        .map_err(|e| perr(line, format!("bad seed {v:?}: {e}")))?,
                )
            }
            _ => return Err(perr(line, format!("unknown key {k:?}"))),
        }
    }

    let units = units.unwrap_or(UnitsMode::Si);
    let bare = units == UnitsMode::Normalized;
    let q = |line: usize, v: &str, dim| at_line(line, parse_quantity(v, dim, bare));
    let (hl, hv) = height.ok_or_else(|| perr(0, "missing probe_height"))?;
    let h = q(hl, &hv, Dimension::Length)?;
    let t = match &temperature {
        Some((l, v)) => q(*l, v, Dimension::Temperature)?,
        None => 1.0,
    };
    let b = match &field {
        Some((l, v)) => q(*l, v, Dimension::Field)?,
        None => 0.0,
    };
    let pair = |entry: &Option<(usize, String)>, default: (f64, f64)| -> Result<(f64, f64)> {
        match entry {
            None => Ok(default),
            Some((l, v)) => {
                let xs = at_line(*l, parse_list(v, Dimension::Length, bare))?;
                match xs.as_slice() {
                    [a] => Ok((*a, *a)),
                    [a, b] => Ok((*a, *b)),
                    _ => Err(perr(*l, "expected one or two lengths")),
                }
            }
        }
    };
    let fov = pair(&fov, (0.0, 0.0))?;
    let center = pair(&center, (0.0, 0.0))?;
    let mut env = to_parse(hl, Environment::new(h, t, b, units))?;

    for (line, f) in raw_spins {
        let mut fs = FieldSet { line, items: f };
        let x = q(line, &fs.require("x")?, Dimension::Length)?;
        let y = q(line, &fs.require("y")?, Dimension::Length)?;
        let m0 = q(line, &fs.require("m0")?, Dimension::Dimensionless)?;
        let d = match fs.take("diameter") {
            Some(v) => q(line, &v, Dimension::Length)?,
            None => 0.0,
        };
        fs.finish()?;
        env.spins.push(to_parse(line, MesoscopicSpin::new(x, y, m0, d))?);
    }

    let mut fl = Vec::new();
    for (line, f) in raw_fluct {
        let mut fs = FieldSet { line, items: f };
        let x = q(line, &fs.require("x")?, Dimension::Length)?;
        let y = q(line, &fs.require("y")?, Dimension::Length)?;
        let v0 = q(line, &fs.require("v0")?, Dimension::Dimensionless)?;
        let g = at_line(line, parse_quantity(&fs.require("gamma")?, Dimension::Frequency, true))?;
        let n = match fs.take("n") {
            Some(v) => q(line, &v, Dimension::Dimensionless)?,
            None => 2.0,
        };
        fs.finish()?;
        fl.push(to_parse(line, ChargeFluctuator::new(x, y, v0, g, n))?);
    }
    let distribution = match bath_line {
        None => RateDistribution::Fixed,
        Some((line, f)) => {
            let mut fs = FieldSet { line, items: f };
            let kind = fs.require("distribution")?;
            let mut bound =
                |k: &str| -> Result<f64> { at_line(line, parse_quantity(&fs.require(k)?, Dimension::Frequency, true)) };
            let d = match kind.as_str() {
                "fixed" => RateDistribution::Fixed,
                "one_over_f" => RateDistribution::OneOverF {
                    gamma_min: bound("gamma_min")?,
                    gamma_max: bound("gamma_max")?,
                },
                "calibration_gradient" => RateDistribution::CalibrationGradient {
                    gamma_min: bound("gamma_min")?,
                    gamma_max: bound("gamma_max")?,
                },
                other => return Err(perr(line, format!("unknown distribution {other:?}"))),
            };
            fs.finish()?;
            if fl.is_empty() {
                return Err(perr(line, "bath line without fluctuators"));
            }
            d
        }
    };
    if !fl.is_empty() {
        env.bath = Some(FluctuatorBath::new(fl, distribution)?);
    }
    Ok(Scene { env, fov, center, seed })
}

fn to_parse<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        QdmError::Domain(m) => perr(line, m),
        other => other,
    })
}

/// Read and parse a scene file.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => QdmError::Io(format!("scene not found: {}", path.display())),
        _ => QdmError::Io(format!("{}: {e}", path.display())),
    })?;
    parse_scene(&text)
}

/// Serialize a scene in the same grammar. Values are written in SI base
/// units (or bare in normalized mode) with round-trip precision.
pub fn write_scene(scene: &Scene, comment: &str) -> String {
    let env = &scene.env;
    let si = env.units == UnitsMode::Si;
    let len = |v: f64| if si { format!("{v:e}m") } else { format!("{v:e}") };
    let mut out = String::new();
    for c in comment.lines() {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "units = {}", if si { "si" } else { "normalized" });
    let _ = writeln!(out, "probe_height = {}", len(env.probe_height));
    if si {
        let _ = writeln!(out, "temperature = {:e}K", env.temperature);
        let _ = writeln!(out, "field = {:e}T", env.field);
    } else {
        let _ = writeln!(out, "temperature = {:e}", env.temperature);
        let _ = writeln!(out, "field = {:e}", env.field);
    }
    let _ = writeln!(out, "fov = {},{}", len(scene.fov.0), len(scene.fov.1));
    let _ = writeln!(out, "center = {},{}", len(scene.center.0), len(scene.center.1));
    if let Some(s) = scene.seed {
        let _ = writeln!(out, "seed = {s}");
    }
    for s in &env.spins {
        let _ = writeln!(
            out,
            "spin x={} y={} m0={:e} diameter={}",
            len(s.x),
            len(s.y),
            s.m0,
            len(s.diameter)
        );
    }
    if let Some(bath) = &env.bath {
        match bath.distribution() {
            RateDistribution::Fixed => {
                let _ = writeln!(out, "bath distribution=fixed");
            }
            RateDistribution::OneOverF { gamma_min, gamma_max } => {
                let _ = writeln!(
                    out,
                    "bath distribution=one_over_f gamma_min={gamma_min:e} gamma_max={gamma_max:e}"
                );
            }
            RateDistribution::CalibrationGradient { gamma_min, gamma_max } => {
                let _ = writeln!(
                    out,
                    "bath distribution=calibration_gradient gamma_min={gamma_min:e} gamma_max={gamma_max:e}"
                );
            }
        }
        for f in bath.fluctuators() {
            let _ = writeln!(
                out,
                "fluctuator x={} y={} v0={:e} gamma={:e} n={:e}",
                len(f.x),
                len(f.y),
                f.v0,
                f.gamma,
                f.exponent
            );
        }
    }
    out
}
