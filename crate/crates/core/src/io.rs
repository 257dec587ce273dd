//! On-disk formats.
//!
//! Field record (`CHDA`), all little-endian:
//!
//! | bytes | content            |
//! |-------|--------------------|
//! | 4     | magic `CHDA`       |
//! | 2     | version (u16)      |
//! | 4     | nx (u32)           |
//! | 4     | ny (u32)           |
//! | 8×3   | dx, dy, thickness  |
//! | 8·n   | values, row-major  |
//!
//! Ensemble (`CHEN`): magic, member count (u32), then concatenated field
//! records. Field CSV export uses the header `i,j,log10_k_mD`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Ensemble, EnsembleTag, GridSpec, LogPermField};

pub const FIELD_MAGIC: &[u8; 4] = b"CHDA";
pub const ENSEMBLE_MAGIC: &[u8; 4] = b"CHEN";
pub const FIELD_VERSION: u16 = 1;

/// Little-endian primitive writer.
pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Little-endian primitive reader.
pub struct BinReader<R: Read> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("unexpected end of file while reading {what}")))?;
        Ok(buf)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.exact::<4>("magic")?;
        if &got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.exact::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.exact(what)?))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact(what)?))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact(what)?))
    }

    /// Reads `n` values; a short read is reported as a truncated payload.
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for k in 0..n {
            if self.inner.read_exact(&mut buf).is_err() {
                return Err(Error::TruncatedPayload {
                    expected: n,
                    found: k,
                });
            }
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    }

    /// True if no bytes remain.
    pub fn at_end(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        Ok(self.inner.read(&mut b)? == 0)
    }
}

pub fn write_field<W: Write>(w: &mut BinWriter<W>, f: &LogPermField) -> Result<()> {
    let g = f.grid();
    w.bytes(FIELD_MAGIC)?;
    w.u16(FIELD_VERSION)?;
    w.u32(g.nx as u32)?;
    w.u32(g.ny as u32)?;
    w.f64(g.dx)?;
    w.f64(g.dy)?;
    w.f64(g.thickness)?;
    w.f64s(f.values())
}

pub fn read_field<R: Read>(r: &mut BinReader<R>) -> Result<LogPermField> {
    r.magic(FIELD_MAGIC)?;
    let version = r.u16("version")?;
    if version != FIELD_VERSION {
        return Err(Error::Format(format!(
            "unsupported field version {version}"
        )));
    }
    let nx = r.u32("nx")? as usize;
    let ny = r.u32("ny")? as usize;
    let dx = r.f64("dx")?;
    let dy = r.f64("dy")?;
    let thickness = r.f64("thickness")?;
    let grid = GridSpec::new(nx, ny, dx, dy, thickness).map_err(|e| Error::DimensionMismatch {
        expected: "a valid grid header".into(),
        found: e.to_string(),
    })?;
    let values = r.f64s(grid.len())?;
    LogPermField::new(grid, values)
}

pub fn save_field(path: impl AsRef<Path>, f: &LogPermField) -> Result<()> {
    let mut w = BinWriter::new(BufWriter::new(File::create(path)?));
    write_field(&mut w, f)?;
    w.into_inner().flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<LogPermField> {
    let mut r = BinReader::new(BufReader::new(File::open(path)?));
    let f = read_field(&mut r)?;
    if !r.at_end()? {
        return Err(Error::Format("trailing bytes after field payload".into()));
    }
    Ok(f)
}

/// Loads a field and checks it against an expected grid.
pub fn load_field_on(path: impl AsRef<Path>, grid: &GridSpec) -> Result<LogPermField> {
    let f = load_field(path)?;
    if f.grid() != grid {
        return Err(Error::DimensionMismatch {
            expected: format!("{grid:?}"),
            found: format!("{:?}", f.grid()),
        });
    }
    Ok(f)
}

pub fn write_ensemble<W: Write>(w: &mut BinWriter<W>, e: &Ensemble) -> Result<()> {
    w.bytes(ENSEMBLE_MAGIC)?;
    w.u32(e.len() as u32)?;
    for m in e.members() {
        write_field(w, m)?;
    }
    Ok(())
}

pub fn read_ensemble<R: Read>(
    r: &mut BinReader<R>,
    seed: u64,
    tag: EnsembleTag,
) -> Result<Ensemble> {
    r.magic(ENSEMBLE_MAGIC)?;
    let n = r.u32("member count")? as usize;
    let members = (0..n).map(|_| read_field(r)).collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, seed, tag)
}

pub fn save_ensemble(path: impl AsRef<Path>, e: &Ensemble) -> Result<()> {
    let mut w = BinWriter::new(BufWriter::new(File::create(path)?));
    write_ensemble(&mut w, e)?;
    w.into_inner().flush()?;
    Ok(())
}

/// Loads an ensemble file. Seed and tag are not persisted and are supplied by the caller.
pub fn load_ensemble(path: impl AsRef<Path>, seed: u64, tag: EnsembleTag) -> Result<Ensemble> {
    let mut r = BinReader::new(BufReader::new(File::open(path)?));
    let e = read_ensemble(&mut r, seed, tag)?;
    if !r.at_end()? {
        return Err(Error::Format(
            "trailing bytes after ensemble payload".into(),
        ));
    }
    Ok(e)
}

/// CSV export: `i,j,log10_k_mD`, one line per cell in row-major order.
pub fn field_to_csv(f: &LogPermField) -> String {
    let g = f.grid();
    let mut s = String::from("i,j,log10_k_mD\n");
    for (k, v) in f.values().iter().enumerate() {
        let (i, j) = g.coords(k);
        s.push_str(&format!("{i},{j},{v}\n"));
    }
    s
}

pub fn save_field_csv(path: impl AsRef<Path>, f: &LogPermField) -> Result<()> {
    std::fs::write(path, field_to_csv(f))?;
    Ok(())
}
