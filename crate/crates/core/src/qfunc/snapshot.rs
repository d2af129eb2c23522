//! Binary network snapshots.
//!
//! Layout (all integers little-endian):
//! `"MMHQ"` magic, `u32` version, `u8` variant (0 = image, 1 = power),
//! the architecture fields as `u32`s, then a `u32` segment count followed by
//! each segment: `u32` name length, UTF-8 name, `u32` rows, `u32` cols,
//! `u8` trainable flag, and `rows * cols` `f64` values row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{ConvSpec, ImageArch, NetArch, PowerArch, QNetwork};

const MAGIC: &[u8; 4] = b"MMHQ";
const VERSION: u32 = 1;

struct Reader<R> {
    inner: R,
    pos: u64,
    path: String,
}

impl<R: Read> Reader<R> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.fail(format!("short read of {n} bytes: {e}")))?;
        self.pos += n as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl QNetwork {
    /// Writes a snapshot of the architecture and all parameter segments.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let fields: Vec<u32> = match &self.arch {
            NetArch::Image(a) => {
                w.write_all(&[0u8])?;
                vec![
                    a.window as u32,
                    a.num_bs as u32,
                    a.c_levels as u32,
                    a.height as u32,
                    a.width as u32,
                    a.conv1.filters as u32,
                    a.conv1.kernel as u32,
                    a.conv1.stride as u32,
                    a.conv2.filters as u32,
                    a.conv2.kernel as u32,
                    a.conv2.stride as u32,
                    a.pool as u32,
                    a.lstm_units as u32,
                    a.embed as u32,
                ]
            }
            NetArch::Power(a) => {
                w.write_all(&[1u8])?;
                vec![
                    a.window as u32,
                    a.num_bs as u32,
                    a.c_levels as u32,
                    a.hidden as u32,
                    a.embed as u32,
                ]
            }
        };
        for f in fields {
            w.write_all(&f.to_le_bytes())?;
        }
        w.write_all(&(self.params.segments().len() as u32).to_le_bytes())?;
        for seg in self.params.segments() {
            w.write_all(&(seg.name.len() as u32).to_le_bytes())?;
            w.write_all(seg.name.as_bytes())?;
            w.write_all(&(seg.values.nrows() as u32).to_le_bytes())?;
            w.write_all(&(seg.values.ncols() as u32).to_le_bytes())?;
            w.write_all(&[seg.trainable as u8])?;
            for v in seg.values.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot written by [`QNetwork::save`], verifying that the
    /// segment layout matches the declared architecture.
    pub fn load(path: &Path) -> Result<QNetwork> {
        let mut r = Reader {
            inner: BufReader::new(File::open(path)?),
            pos: 0,
            path: path.display().to_string(),
        };
        if r.bytes(4)? != MAGIC {
            return Err(r.fail("bad magic, expected \"MMHQ\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let arch = match r.u8()? {
            0 => NetArch::Image(ImageArch {
                window: r.usize()?,
                num_bs: r.usize()?,
                c_levels: r.usize()?,
                height: r.usize()?,
                width: r.usize()?,
                conv1: ConvSpec {
                    filters: r.usize()?,
                    kernel: r.usize()?,
                    stride: r.usize()?,
                },
                conv2: ConvSpec {
                    filters: r.usize()?,
                    kernel: r.usize()?,
                    stride: r.usize()?,
                },
                pool: r.usize()?,
                lstm_units: r.usize()?,
                embed: r.usize()?,
            }),
            1 => NetArch::Power(PowerArch {
                window: r.usize()?,
                num_bs: r.usize()?,
                c_levels: r.usize()?,
                hidden: r.usize()?,
                embed: r.usize()?,
            }),
            v => return Err(r.fail(format!("unknown variant tag {v}"))),
        };
        // A freshly initialized network supplies the expected layout.
        let mut net = QNetwork::new(arch, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| r.fail(format!("invalid architecture: {e}")))?;
        let n_segments = r.usize()?;
        if n_segments != net.params.segments().len() {
            return Err(r.fail(format!(
                "{n_segments} segments, expected {}",
                net.params.segments().len()
            )));
        }
        let mut loaded = net.params.zeros_like();
        for i in 0..n_segments {
            let name_len = r.usize()?;
            if name_len > 1024 {
                return Err(r.fail(format!("implausible name length {name_len}")));
            }
            let name = String::from_utf8(r.bytes(name_len)?)
                .map_err(|e| r.fail(format!("segment name not UTF-8: {e}")))?;
            let rows = r.usize()?;
            let cols = r.usize()?;
            let trainable = r.u8()? != 0;
            let expect = &loaded.segments()[i];
            if expect.name != name
                || expect.values.nrows() != rows
                || expect.values.ncols() != cols
                || expect.trainable != trainable
            {
                return Err(r.fail(format!(
                    "segment {i} is {name:?} {rows}x{cols} (trainable {trainable}), expected \
                     {:?} {}x{} (trainable {})",
                    expect.name,
                    expect.values.nrows(),
                    expect.values.ncols(),
                    expect.trainable
                )));
            }
            let values = r.f64s(rows * cols)?;
            if values.iter().any(|v| v.is_nan()) {
                return Err(r.fail(format!("segment {name:?} contains NaN")));
            }
            loaded.segments_mut()[i].values =
                Array2::from_shape_vec((rows, cols), values).expect("shape verified");
        }
        // Reject trailing garbage.
        let mut extra = [0u8; 1];
        match r.inner.read(&mut extra) {
            Ok(0) => {}
            Ok(_) => return Err(r.fail("trailing bytes after last segment")),
            Err(e) => return Err(Error::Io(e)),
        }
        net.params = loaded;
        Ok(net)
    }
}
