//! Run artifacts: per-run directories, CSV tables, 16-bit PGM renders and
//! the reproduction manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{QdmError, Result};
use crate::scanner::{ImageMaps, PixelResult, PixelStatus};
use crate::spectral::PeakSplitting;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "QDM_OUT_ROOT";

/// Create a fresh `run-NNNN` directory under `root`. Existing runs are never
/// reused: the first free index wins, and creation itself is atomic so two
/// concurrent runs cannot share a directory.
pub fn create_run_dir(root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    for i in 1..=9999u32 {
        let dir = root.join(format!("run-{i:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(QdmError::Io(format!("no free run directory under {}", root.display())))
}

/// Open a file for writing, refusing to replace an existing one.
pub fn create_new(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| QdmError::Io(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-tripping decimal form; keeps CSVs bit-reproducible.
fn num(v: f64) -> String {
    format!("{v:e}")
}

/// `ix,iy,x,y,normalized,raw` table of one map channel.
pub fn write_map_csv(path: &Path, maps: &ImageMaps, normalized: &[f64], raw: &[f64]) -> Result<()> {
    let mut w = create_new(path)?;
    writeln!(w, "ix,iy,x,y,normalized,raw")?;
    for iy in 0..maps.ny {
        for ix in 0..maps.nx {
            let k = maps.index(ix, iy);
            let (x, y) = maps.positions[k];
            writeln!(
                w,
                "{ix},{iy},{},{},{},{}",
                num(x),
                num(y),
                num(normalized[k]),
                num(raw[k])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `x,y,height,color,resolved` surface table.
pub fn write_combined_csv(path: &Path, maps: &ImageMaps) -> Result<()> {
    let mut w = create_new(path)?;
    writeln!(w, "x,y,height,color,resolved")?;
    for k in 0..maps.nx * maps.ny {
        let (x, y) = maps.positions[k];
        writeln!(
            w,
            "{},{},{},{},{}",
            num(x),
            num(y),
            num(maps.field[k]),
            num(maps.color[k]),
            u8::from(maps.resolved[k])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Per-pixel estimate table, row-major.
pub fn write_pixels_csv(path: &Path, results: &[PixelResult]) -> Result<()> {
    let mut sorted: Vec<&PixelResult> = results.iter().collect();
    sorted.sort_by_key(|p| (p.iy, p.ix));
    let mut w = create_new(path)?;
    writeln!(
        w,
        "ix,iy,x,y,delta_shift,gamma_total,splitting_kind,splitting,peak_ratio,p_excited,noise_variance,status"
    )?;
    for p in sorted {
        let (kind, s, r) = match p.splitting {
            PeakSplitting::Single => ("single", f64::NAN, f64::NAN),
            PeakSplitting::Split { splitting, peak_ratio } => ("split", splitting, peak_ratio),
            PeakSplitting::Unresolved { separation } => ("unresolved", separation, f64::NAN),
        };
        let status = match &p.status {
            PixelStatus::Ok => "ok".to_string(),
            PixelStatus::Undetectable => "undetectable".to_string(),
            PixelStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{kind},{},{},{},{},{status}",
            p.ix,
            p.iy,
            num(p.position.0),
            num(p.position.1),
            num(p.delta_shift),
            num(p.gamma_total),
            num(s),
            num(r),
            num(p.p_excited.unwrap_or(f64::NAN)),
            num(p.noise_variance)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Binary 16-bit PGM (P5, big-endian samples). Finite values are mapped
/// linearly from `[min, max]` onto `[1, 65535]`; NaN and the colour
/// sentinel render as 0. Row 0 of the image is the top (largest y).
pub fn write_pgm(path: &Path, nx: usize, ny: usize, values: &[f64], sentinel: Option<f64>) -> Result<()> {
    let valid = |v: f64| v.is_finite() && Some(v) != sentinel;
    let (lo, hi) = values
        .iter()
        .copied()
        .filter(|&v| valid(v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let mut w = create_new(path)?;
    write!(w, "P5\n{nx} {ny}\n65535\n")?;
    for row in (0..ny).rev() {
        for ix in 0..nx {
            let v = values[row * nx + ix];
            let level: u16 = if !valid(v) {
                0
            } else if hi > lo {
                (1.0 + (v - lo) / (hi - lo) * 65534.0).round() as u16
            } else {
                65535
            };
            w.write_all(&level.to_be_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Ordered `key = value` manifest.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# qdm run manifest\n");
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create_new(path)?;
        w.write_all(self.render().as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Write the full map artifact set (CSVs and PGMs) into `dir` with an
/// optional file-name prefix.
pub fn write_map_set(dir: &Path, prefix: &str, maps: &ImageMaps, results: &[PixelResult]) -> Result<()> {
    let p = |name: &str| dir.join(format!("{prefix}{name}"));
    write_map_csv(&p("field.csv"), maps, &maps.field, &maps.field_raw)?;
    write_map_csv(&p("gamma.csv"), maps, &maps.decoherence, &maps.gamma_raw)?;
    write_combined_csv(&p("combined.csv"), maps)?;
    write_pixels_csv(&p("pixels.csv"), results)?;
    write_pgm(&p("field.pgm"), maps.nx, maps.ny, &maps.field, None)?;
    write_pgm(&p("gamma.pgm"), maps.nx, maps.ny, &maps.decoherence, None)?;
    write_pgm(
        &p("color.pgm"),
        maps.nx,
        maps.ny,
        &maps.color,
        Some(crate::scanner::UNRESOLVED_SENTINEL),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path()).unwrap();
        let b = create_run_dir(tmp.path()).unwrap();
        assert_ne!(a, b);
        assert!(a.ends_with("run-0001") && b.ends_with("run-0002"));
    }

    #[test]
    fn create_new_refuses_overwrite() {
        let tmp = tempfile::tempdir().unwrap();
        let f = tmp.path().join("x.csv");
        create_new(&f).unwrap();
        assert!(create_new(&f).is_err());
    }

    #[test]
    fn pgm_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let f = tmp.path().join("m.pgm");
        write_pgm(&f, 2, 2, &[0.0, 1.0, f64::NAN, 0.5], None).unwrap();
        let bytes = fs::read(&f).unwrap();
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        // top row is iy = 1
        assert_eq!(px, vec![0, 32768, 1, 65535]);
    }

    #[test]
    fn sha_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
