//! On-disk formats: the power-trace CSV, the binary frame container, and
//! ingestion of externally captured datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::channel::PowerTrace;
use crate::error::{Error, Result};
use crate::scene::{DepthFrame, SyntheticEpisode};

const FRAME_MAGIC: &[u8; 4] = b"MMHF";

fn format_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        detail: detail.into(),
    }
}

/// Writes a power trace as `t_ms,p1_dbm,p2_dbm` rows.
pub fn save_power_csv(path: &Path, trace: &PowerTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t_ms,p1_dbm,p2_dbm")?;
    for i in 0..trace.len() {
        writeln!(
            w,
            "{},{},{}",
            (i as f64 * trace.tau * 1000.0),
            trace.p1_dbm[i],
            trace.p2_dbm[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a power-trace CSV, recovering `tau` from the (strictly uniform)
/// timestamp grid. Errors carry the 1-based row number as the offset.
pub fn load_power_csv(path: &Path) -> Result<PowerTrace> {
    let reader = BufReader::new(File::open(path)?);
    let mut times = Vec::new();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = (i + 1) as u64;
        let line = line.map_err(|e| format_err(path, row, format!("read failed: {e}")))?;
        if i == 0 {
            if line.trim() != "t_ms,p1_dbm,p2_dbm" {
                return Err(format_err(
                    path,
                    row,
                    format!("bad header {line:?}, expected t_ms,p1_dbm,p2_dbm"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format_err(
                path,
                row,
                format!("{} fields, expected 3", fields.len()),
            ));
        }
        let parse = |s: &str, name: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| format_err(path, row, format!("bad {name} value {s:?}")))
        };
        times.push(parse(fields[0], "t_ms")?);
        p1.push(parse(fields[1], "p1_dbm")?);
        p2.push(parse(fields[2], "p2_dbm")?);
    }
    if times.len() < 2 {
        return Err(format_err(path, 0, "trace needs at least 2 rows"));
    }
    let tau = (times[1] - times[0]) / 1000.0;
    if !(tau > 0.0) {
        return Err(format_err(path, 3, "timestamps must increase"));
    }
    for (i, pair) in times.windows(2).enumerate() {
        let dt = (pair[1] - pair[0]) / 1000.0;
        if dt <= 0.0 {
            return Err(format_err(path, (i + 3) as u64, "non-monotone timestamp"));
        }
        if (dt - tau).abs() > 1e-6 {
            return Err(format_err(
                path,
                (i + 3) as u64,
                format!("non-uniform step {dt} s, expected {tau} s"),
            ));
        }
    }
    Ok(PowerTrace { tau, p1_dbm: p1, p2_dbm: p2 })
}

/// Writes frames as `MMHF` + width/height/count/fps-millis header plus raw
/// 8-bit pixels.
pub fn save_frames(path: &Path, frames: &[DepthFrame], fps: f64) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("no frames to save".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FRAME_MAGIC)?;
    for v in [
        first.width,
        first.height,
        frames.len() as u32,
        (fps * 1000.0).round() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        if f.width != first.width || f.height != first.height {
            return Err(Error::InvalidInput("mixed frame sizes".into()));
        }
        w.write_all(&f.pixels)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a frame container written by [`save_frames`]; returns the frames
/// and the frame rate.
pub fn load_frames(path: &Path) -> Result<(Vec<DepthFrame>, f64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut pos: u64 = 0;
    let mut take = |buf: &mut [u8], what: &str| -> Result<()> {
        r.read_exact(buf)
            .map_err(|e| format_err(path, pos, format!("short read of {what}: {e}")))?;
        pos += buf.len() as u64;
        Ok(())
    };
    let mut magic = [0u8; 4];
    take(&mut magic, "magic")?;
    if &magic != FRAME_MAGIC {
        return Err(format_err(path, 0, "bad magic, expected \"MMHF\""));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |what: &str| -> Result<u32> {
        take(&mut word, what)?;
        Ok(u32::from_le_bytes(word))
    };
    let width = next_u32("width")?;
    let height = next_u32("height")?;
    let count = next_u32("frame count")?;
    let fps_milli = next_u32("fps")?;
    if width == 0 || height == 0 || fps_milli == 0 {
        return Err(format_err(path, 4, "zero width, height or fps"));
    }
    let frame_len = (width * height) as usize;
    if count as u64 * frame_len as u64 > 1 << 32 {
        return Err(format_err(path, 12, format!("implausible frame count {count}")));
    }
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut pixels = vec![0u8; frame_len];
        take(&mut pixels, "frame pixels")?;
        frames.push(DepthFrame { width, height, pixels });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(format_err(path, pos, "trailing bytes after last frame"));
    }
    Ok((frames, fps_milli as f64 / 1000.0))
}

/// Reconstructs 3 dB blockage windows from a power trace: the reference LOS
/// level is the 90th-percentile power, runs below `ref - 3 dB` become
/// events, and runs separated by a single sample merge.
pub fn windows_from_power(trace: &PowerTrace) -> Vec<(f64, f64)> {
    let mut sorted = trace.p1_dbm.clone();
    sorted.sort_by(f64::total_cmp);
    let reference = sorted[(sorted.len() - 1) * 9 / 10];
    let below: Vec<bool> = trace.p1_dbm.iter().map(|&p| reference - p > 3.0).collect();
    let mut windows: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &b) in below.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                windows.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        windows.push((s, below.len()));
    }
    // Merge windows separated by at most one sample (noise flicker).
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 + 1 => last.1 = w.1,
            _ => merged.push(w),
        }
    }
    merged
        .into_iter()
        .map(|(s, e)| (s as f64 * trace.tau, e as f64 * trace.tau))
        .collect()
}

/// Loads an externally captured power CSV plus frame file into the aligned
/// episode representation, reconstructing blockage labels from the powers.
pub fn ingest_external(power_csv: &Path, frames_path: &Path) -> Result<SyntheticEpisode> {
    let power = load_power_csv(power_csv)?;
    let (frames, fps) = load_frames(frames_path)?;
    if frames.len() != power.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} frames in {} vs {} power rows in {}",
            frames.len(),
            frames_path.display(),
            power.len(),
            power_csv.display()
        )));
    }
    let frame_dt = 1.0 / fps;
    if (frame_dt - power.tau).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "frame interval {frame_dt} s does not match power step {} s",
            power.tau
        )));
    }
    let n = frames.len();
    let windows = windows_from_power(&power);
    Ok(SyntheticEpisode {
        frames,
        blockage_onsets: windows.iter().map(|&(s, _)| s).collect(),
        blockage_windows: windows,
        ped_tracks: vec![Vec::new(); n],
        power,
    })
}
