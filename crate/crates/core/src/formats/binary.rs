//! `TGIR` reference sets and `TGIM` measurement cubes.
//!
//! Both start with a 4-byte magic and a `u16` format version, followed by
//! `u64` dimensions and `f64` payloads, all little-endian.

use crate::error::{Error, Result};
use crate::scene::{MeasurementCube, Provenance};
use crate::signal::ReferenceSet;

pub const REFERENCE_MAGIC: &[u8; 4] = b"TGIR";
pub const CUBE_MAGIC: &[u8; 4] = b"TGIM";
pub const FORMAT_VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], name: &'a str) -> Self {
        Self {
            bytes,
            pos: 0,
            name,
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.name, self.pos as u64, message)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!(
                "truncated: need {n} bytes for {what}, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            self.pos = 0;
            return Err(self.error(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            self.pos -= 2;
            return Err(self.error(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, "u16")?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, "u64")?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "f64")?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.error(format!("{what} = {v} is too large")))
    }

    fn f64_array(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| self.error("payload size overflows"))?;
        let raw = self.take(len, "payload")?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// The generator seed is not part of the format.
pub fn encode_reference(reference: &ReferenceSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(30 + reference.samples().len() * 8);
    out.extend_from_slice(REFERENCE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(reference.num_pulses() as u64).to_le_bytes());
    out.extend_from_slice(&(reference.pulse_len() as u64).to_le_bytes());
    out.extend_from_slice(&reference.tick_seconds().to_le_bytes());
    put_f64s(&mut out, reference.samples());
    out
}

pub fn decode_reference(bytes: &[u8], name: &str) -> Result<ReferenceSet> {
    let mut r = Reader::new(bytes, name);
    r.header(REFERENCE_MAGIC)?;
    let k = r.dim("K")?;
    let p = r.dim("P")?;
    let tick = r.f64()?;
    let count = k.checked_mul(p).ok_or_else(|| r.error("K * P overflows"))?;
    let samples = r.f64_array(count)?;
    r.finish()?;
    ReferenceSet::from_samples(k, p, samples, tick, None)
        .map_err(|e| Error::format(name, 0, e.to_string()))
}

pub fn encode_cube(cube: &MeasurementCube) -> Result<Vec<u8>> {
    let trailer = serde_json::to_vec(cube.provenance())
        .map_err(|e| Error::InvalidInput(format!("provenance: {e}")))?;
    let mut out = Vec::with_capacity(38 + cube.data().len() * 8 + trailer.len());
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cube.num_frames() as u64).to_le_bytes());
    out.extend_from_slice(&(cube.height() as u64).to_le_bytes());
    out.extend_from_slice(&(cube.width() as u64).to_le_bytes());
    put_f64s(&mut out, cube.data());
    out.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

pub fn decode_cube(bytes: &[u8], name: &str) -> Result<MeasurementCube> {
    let mut r = Reader::new(bytes, name);
    r.header(CUBE_MAGIC)?;
    let k = r.dim("K")?;
    let h = r.dim("H")?;
    let w = r.dim("W")?;
    let count = k
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| r.error("K * H * W overflows"))?;
    let data = r.f64_array(count)?;
    let trailer_len = r.dim("provenance length")?;
    let trailer_at = r.pos;
    let trailer = r.take(trailer_len, "provenance")?;
    r.finish()?;
    let provenance: Provenance = serde_json::from_slice(trailer)
        .map_err(|e| Error::format(name, trailer_at as u64, format!("provenance: {e}")))?;
    MeasurementCube::from_parts(k, w, h, data, provenance)
        .map_err(|e| Error::format(name, 0, e.to_string()))
}
