//! On-disk artifacts: KPFIELD/NLSFIELD snapshots, CSV tables and run
//! manifests. Every writer goes through a write-temp-then-rename step so a
//! manifest never references a partially written file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::solutions::KpBranch;
use crate::spectral::{Field, Grid2D};
use crate::{Error, Result};

/// Writes `path` atomically: the payload goes to a sibling `.tmp` file which
/// is renamed over the destination only after a successful flush.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut writer = BufWriter::new(File::create(&tmp)?);
        write(&mut writer)?;
        writer.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Metadata carried by a KPFIELD snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpFieldMeta {
    pub time: f64,
    pub epsilon: f64,
    pub branch: KpBranch,
}

/// Writes a physical field in the `KPFIELD v1` format: one ASCII header line
/// `KPFIELD v1 Nx Ny Lx Ly time epsilon alpha`, then `Nx * Ny` little-endian
/// doubles, row-major with y as the outer index.
pub fn write_kpfield(path: &Path, field: &Field, meta: &KpFieldMeta) -> Result<()> {
    let grid = &field.grid;
    let data = field.physical()?;
    write_atomic(path, |w| {
        writeln!(
            w,
            "KPFIELD v1 {} {} {} {} {} {} {}",
            grid.nx,
            grid.ny,
            grid.lx,
            grid.ly,
            meta.time,
            meta.epsilon,
            meta.branch.alpha() as i64
        )?;
        for &v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

/// Reads a `KPFIELD v1` snapshot back into a physical field.
pub fn read_kpfield(path: &Path) -> Result<(Field, KpFieldMeta)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 9 || tokens[0] != "KPFIELD" || tokens[1] != "v1" {
        return Err(Error::Format(format!(
            "{}: not a KPFIELD v1 header",
            path.display()
        )));
    }
    let parse_f = |s: &str, what: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("{}: bad {what} `{s}`", path.display())))
    };
    let nx: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Format("bad Nx".into()))?;
    let ny: usize = tokens[3]
        .parse()
        .map_err(|_| Error::Format("bad Ny".into()))?;
    let grid = Grid2D::new(nx, ny, parse_f(tokens[4], "Lx")?, parse_f(tokens[5], "Ly")?)?;
    let meta = KpFieldMeta {
        time: parse_f(tokens[6], "time")?,
        epsilon: parse_f(tokens[7], "epsilon")?,
        branch: KpBranch::from_alpha(parse_f(tokens[8], "alpha")?)?,
    };
    let mut bytes = vec![0u8; nx * ny * 8];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("{}: truncated payload ({e})", path.display())))?;
    let mut data = ndarray::Array2::<f64>::zeros((ny, nx));
    for (i, v) in data.iter_mut().enumerate() {
        let mut chunk = [0u8; 8];
        chunk.copy_from_slice(&bytes[8 * i..8 * i + 8]);
        *v = f64::from_le_bytes(chunk);
    }
    Ok((Field::from_physical(&grid, data)?, meta))
}

/// Writes a 1D complex state in the `NLSFIELD v1` format: ASCII header
/// `NLSFIELD v1 N L y epsilon`, then interleaved little-endian re/im doubles.
pub fn write_nlsfield(path: &Path, psi: &[Complex64], l: f64, y: f64, epsilon: f64) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "NLSFIELD v1 {} {} {} {}", psi.len(), l, y, epsilon)?;
        for v in psi {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    })
}

/// Reads an `NLSFIELD v1` dump.
pub fn read_nlsfield(path: &Path) -> Result<(Vec<Complex64>, f64, f64, f64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 || tokens[0] != "NLSFIELD" || tokens[1] != "v1" {
        return Err(Error::Format(format!(
            "{}: not an NLSFIELD v1 header",
            path.display()
        )));
    }
    let n: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Format("bad N".into()))?;
    let parse_f = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad header number `{s}`")))
    };
    let (l, y, epsilon) = (parse_f(tokens[3])?, parse_f(tokens[4])?, parse_f(tokens[5])?);
    let mut bytes = vec![0u8; n * 16];
    reader.read_exact(&mut bytes)?;
    let mut psi = Vec::with_capacity(n);
    for i in 0..n {
        let mut re = [0u8; 8];
        let mut im = [0u8; 8];
        re.copy_from_slice(&bytes[16 * i..16 * i + 8]);
        im.copy_from_slice(&bytes[16 * i + 8..16 * i + 16]);
        psi.push(Complex64::new(
            f64::from_le_bytes(re),
            f64::from_le_bytes(im),
        ));
    }
    Ok((psi, l, y, epsilon))
}

/// Writes a CSV table with a header row; floats use the shortest
/// round-trippable representation.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{header}")?;
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })
}

/// Reads a numeric CSV with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty CSV", path.display())))??;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(names.len());
        for tok in line.split(',') {
            row.push(tok.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: non-numeric entry `{tok}`",
                    path.display(),
                    lineno + 2
                ))
            })?);
        }
        if row.len() != names.len() {
            return Err(Error::Format(format!(
                "{}:{}: expected {} columns, got {}",
                path.display(),
                lineno + 2,
                names.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((names, rows))
}

/// One snapshot reference inside a manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SnapshotEntry {
    pub step: u64,
    pub time: f64,
    pub file: String,
}

/// Run manifest: configuration echo, snapshot index and monitor location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub code_version: String,
    pub config: serde_json::Value,
    pub monitor_csv: String,
    pub snapshots: Vec<SnapshotEntry>,
    pub completed_steps: u64,
    pub t_final: f64,
    pub wall_start_unix: u64,
    pub wall_seconds: f64,
}

pub const MANIFEST_FORMAT: &str = "dlab-manifest v1";

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, manifest)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Reads a manifest and checks that every referenced file exists (paths are
/// resolved relative to the manifest location).
pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Format(format!(
            "{}: unknown manifest format `{}`",
            path.display(),
            manifest.format
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for entry in &manifest.snapshots {
        let p = base.join(&entry.file);
        if !p.exists() {
            return Err(Error::Format(format!(
                "manifest references missing snapshot {}",
                p.display()
            )));
        }
    }
    Ok(manifest)
}
