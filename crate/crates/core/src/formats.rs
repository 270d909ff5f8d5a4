//! On-disk formats: PECD detection data, PECL label sidecars, FGRD float
//! grids, PGM images, and the N_cl table CSV.
//!
//! All binary formats are little-endian. Timestamps are integer
//! picoseconds so round-trips are bit-exact. Writers go through a
//! temp-file-plus-rename so readers never observe partial output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AcquisitionConfig, DetectionSet, NclTable};

pub const PECD_MAGIC: &[u8; 4] = b"PECD";
pub const PECL_MAGIC: &[u8; 4] = b"PECL";
pub const FGRD_MAGIC: &[u8; 4] = b"FGRD";
pub const PEWR_MAGIC: &[u8; 4] = b"PEWR";
pub const FORMAT_VERSION: u16 = 1;

/// Writes through a sibling temp file and renames into place.
pub fn atomic_write<F>(path: &Path, write_fn: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let tmp = path.with_extension("tmp~");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_fn(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_exact::<2>(r)?))
}
fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}
fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}
fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(r)?))
}

pub fn write_pecd(path: &Path, detections: &DetectionSet) -> Result<()> {
    let config = &detections.config;
    atomic_write(path, |w| {
        w.write_all(PECD_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(detections.width as u32).to_le_bytes())?;
        w.write_all(&(detections.height as u32).to_le_bytes())?;
        w.write_all(&(config.t_r_ps as u64).to_le_bytes())?;
        w.write_all(&config.n_r.to_le_bytes())?;
        w.write_all(&config.eta.to_le_bytes())?;
        w.write_all(&config.s_total.to_le_bytes())?;
        w.write_all(&config.b_total.to_le_bytes())?;
        for ts in &detections.times {
            w.write_all(&(ts.len() as u32).to_le_bytes())?;
            for t in ts {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

/// Reads a PECD file. Pulse-shape parameters are not part of the format;
/// the caller supplies them (they are algorithm inputs, not measurements).
pub fn read_pecd(
    path: &Path,
    t_p_ps: f64,
    pulse_sigma_ps: f64,
    t_wind_ps: f64,
) -> Result<DetectionSet> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != PECD_MAGIC {
        return Err(Error::Data(format!("{}: not a PECD file", path.display())));
    }
    let version = read_u16(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported PECD version {version}")));
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let t_r_ps = read_u64(&mut r)? as f64;
    let n_r = read_u32(&mut r)?;
    let eta = read_f64(&mut r)?;
    let s_total = read_f64(&mut r)?;
    let b_total = read_f64(&mut r)?;
    let mut times = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let count = read_u32(&mut r)? as usize;
        let mut ts = Vec::with_capacity(count);
        for _ in 0..count {
            ts.push(read_u64(&mut r)?);
        }
        times.push(ts);
    }
    let detections = DetectionSet {
        width,
        height,
        times,
        config: AcquisitionConfig {
            t_r_ps,
            t_p_ps,
            pulse_sigma_ps,
            t_wind_ps,
            n_r,
            eta,
            s_total,
            b_total,
        },
    };
    detections.validate()?;
    Ok(detections)
}

/// Writes the ground-truth label sidecar (0 = background, 1 = signal),
/// aligned with the timestamps of the matching PECD file.
pub fn write_pecl(path: &Path, width: usize, height: usize, labels: &[Vec<u8>]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::Data("label grid size disagrees with dimensions".into()));
    }
    atomic_write(path, |w| {
        w.write_all(PECL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(width as u32).to_le_bytes())?;
        w.write_all(&(height as u32).to_le_bytes())?;
        for ls in labels {
            w.write_all(&(ls.len() as u32).to_le_bytes())?;
            w.write_all(ls)?;
        }
        Ok(())
    })
}

pub fn read_pecl(path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != PECL_MAGIC {
        return Err(Error::Data(format!("{}: not a PECL file", path.display())));
    }
    let version = read_u16(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported PECL version {version}")));
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let mut labels = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let count = read_u32(&mut r)? as usize;
        let mut ls = vec![0u8; count];
        r.read_exact(&mut ls)?;
        if ls.iter().any(|l| *l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        labels.push(ls);
    }
    Ok((width, height, labels))
}

/// Float-grid image: magic, dimensions, a scale-unit tag (e.g. meters per
/// unit), then row-major f32 values.
pub fn write_fgrd(path: &Path, width: usize, height: usize, scale: f64, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Data("grid size disagrees with dimensions".into()));
    }
    atomic_write(path, |w| {
        w.write_all(FGRD_MAGIC)?;
        w.write_all(&(width as u32).to_le_bytes())?;
        w.write_all(&(height as u32).to_le_bytes())?;
        w.write_all(&scale.to_le_bytes())?;
        for v in values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn read_fgrd(path: &Path) -> Result<(usize, usize, f64, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != FGRD_MAGIC {
        return Err(Error::Data(format!("{}: not an FGRD file", path.display())));
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let scale = read_f64(&mut r)?;
    let mut values = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        values.push(f64::from(f32::from_le_bytes(read_exact::<4>(&mut r)?)));
    }
    Ok((width, height, scale, values))
}

/// Binary PGM (P5), 8- or 16-bit, values normalized to [0, 1].
pub fn read_pgm_normalized(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("malformed PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::Data(format!("{}: not a binary PGM", path.display())));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| Error::Data("bad PGM width".into()))?;
    let height: usize =
        token(&bytes)?.parse().map_err(|_| Error::Data("bad PGM height".into()))?;
    let maxval: u32 =
        token(&bytes)?.parse().map_err(|_| Error::Data("bad PGM maxval".into()))?;
    if maxval == 0 || maxval > 65_535 {
        return Err(Error::Data(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let n = width * height;
    let mut values = Vec::with_capacity(n);
    if maxval < 256 {
        if bytes.len() < pos + n {
            return Err(Error::Data("truncated PGM data".into()));
        }
        for i in 0..n {
            values.push(f64::from(bytes[pos + i]) / f64::from(maxval));
        }
    } else {
        if bytes.len() < pos + 2 * n {
            return Err(Error::Data("truncated PGM data".into()));
        }
        for i in 0..n {
            let v = u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]);
            values.push(f64::from(v) / f64::from(maxval));
        }
    }
    Ok((width, height, values))
}

/// Writes a 16-bit PGM quantizing `values` over [0, scale_max]; the scale
/// is recorded in a header comment so viewers can recover physical units.
pub fn write_pgm(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
    scale_max: f64,
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Data("grid size disagrees with dimensions".into()));
    }
    atomic_write(path, |w| {
        write!(w, "P5\n# scale_max={scale_max}\n{width} {height}\n65535\n")?;
        for v in values {
            let q = ((v / scale_max).clamp(0.0, 1.0) * 65_535.0).round() as u16;
            w.write_all(&q.to_be_bytes())?;
        }
        Ok(())
    })
}

/// Either a PGM (normalized) or an FGRD grid, detected by magic.
pub fn read_grid_auto(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut magic = [0u8; 4];
    File::open(path)?.read_exact(&mut magic)?;
    if &magic == FGRD_MAGIC {
        let (w, h, _scale, values) = read_fgrd(path)?;
        Ok((w, h, values))
    } else {
        read_pgm_normalized(path)
    }
}

/// Per-pixel windowing results, the handoff between unmixing and
/// estimation. Layout after the magic: u16 version, u32 width, u32 height,
/// the full acquisition config (f64 t_r/t_p/sigma/t_wind, u32 n_r, f64
/// eta/s_total/b_total) so estimation sees the same calibrated rates, then
/// per pixel: u8 reliable, u32 n_sp, u32 k_max, u64 window_start + 1
/// (0 encodes none), u32 retained count, count u64 timestamps.
pub fn write_windows(
    path: &Path,
    width: usize,
    height: usize,
    config: &AcquisitionConfig,
    results: &[crate::unmix::WindowResult],
) -> Result<()> {
    if results.len() != width * height {
        return Err(Error::Data("window grid disagrees with dimensions".into()));
    }
    atomic_write(path, |w| {
        w.write_all(PEWR_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(width as u32).to_le_bytes())?;
        w.write_all(&(height as u32).to_le_bytes())?;
        w.write_all(&config.t_r_ps.to_le_bytes())?;
        w.write_all(&config.t_p_ps.to_le_bytes())?;
        w.write_all(&config.pulse_sigma_ps.to_le_bytes())?;
        w.write_all(&config.t_wind_ps.to_le_bytes())?;
        w.write_all(&config.n_r.to_le_bytes())?;
        w.write_all(&config.eta.to_le_bytes())?;
        w.write_all(&config.s_total.to_le_bytes())?;
        w.write_all(&config.b_total.to_le_bytes())?;
        for r in results {
            w.write_all(&[u8::from(r.reliable)])?;
            w.write_all(&(r.n_sp as u32).to_le_bytes())?;
            w.write_all(&(r.k_max as u32).to_le_bytes())?;
            w.write_all(&r.window_start.map_or(0, |s| s + 1).to_le_bytes())?;
            w.write_all(&(r.retained.len() as u32).to_le_bytes())?;
            for &t in &r.retained {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

pub fn read_windows(
    path: &Path,
) -> Result<(usize, usize, AcquisitionConfig, Vec<crate::unmix::WindowResult>)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != PEWR_MAGIC {
        return Err(Error::Data(format!("{}: not a PEWR file", path.display())));
    }
    let version = read_u16(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported PEWR version {version}")));
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let config = AcquisitionConfig {
        t_r_ps: read_f64(&mut r)?,
        t_p_ps: read_f64(&mut r)?,
        pulse_sigma_ps: read_f64(&mut r)?,
        t_wind_ps: read_f64(&mut r)?,
        n_r: read_u32(&mut r)?,
        eta: read_f64(&mut r)?,
        s_total: read_f64(&mut r)?,
        b_total: read_f64(&mut r)?,
    };
    config.validate()?;
    let mut results = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let reliable = read_exact::<1>(&mut r)?[0] != 0;
        let n_sp = read_u32(&mut r)? as usize;
        let k_max = read_u32(&mut r)? as usize;
        let start = read_u64(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut retained = Vec::with_capacity(count);
        for _ in 0..count {
            retained.push(read_u64(&mut r)?);
        }
        results.push(crate::unmix::WindowResult {
            k_max,
            window_start: if start == 0 { None } else { Some(start - 1) },
            retained,
            n_sp,
            reliable,
        });
    }
    Ok((width, height, config, results))
}

pub fn write_ncl_table_csv(path: &Path, table: &NclTable) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "# tau_fa={},t_wind_over_t_r={}", table.tau_fa, table.t_wind_over_t_r)?;
        writeln!(w, "noise_rate,n_cl")?;
        for (rate, n_cl) in table.entries() {
            writeln!(w, "{rate},{n_cl}")?;
        }
        Ok(())
    })
}

/// Generic CSV writer used by the diagnostics and experiment outputs.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        Ok(())
    })
}
