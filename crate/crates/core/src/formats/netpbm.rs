//! Binary PGM (`P5`, 8- or 16-bit) and PBM (`P4`).

use crate::error::{Error, Result};
use crate::grid::Grid;

/// 16-bit `P5` with maxval 65535; samples are big-endian.
pub fn encode_pgm16(image: &Grid<u16>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    out.reserve(image.len() * 2);
    for v in image.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// `P4`, one bit per pixel, rows padded to whole bytes. Set bits (black) are
/// masked-in pixels.
pub fn encode_pbm(mask: &Grid<bool>) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let row_bytes = w.div_ceil(8);
    for y in 0..h {
        let mut row = vec![0u8; row_bytes];
        for x in 0..w {
            if *mask.get(x, y) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Header<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.name, self.pos as u64, message)
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.error(format!("{what} out of range")))
    }

    /// Exactly one whitespace byte separates the header from the raster.
    fn end(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error("missing whitespace before raster")),
        }
    }
}

fn magic<'a>(bytes: &'a [u8], name: &'a str, expect: &[u8; 2]) -> Result<Header<'a>> {
    if bytes.len() < 2 || &bytes[..2] != expect {
        return Err(Error::format(
            name,
            0,
            format!("expected netpbm magic {}", String::from_utf8_lossy(expect)),
        ));
    }
    Ok(Header {
        bytes,
        pos: 2,
        name,
    })
}

/// Reads a `P5` image. 8-bit images are widened to `u16` unchanged.
pub fn decode_pgm16(bytes: &[u8], name: &str) -> Result<Grid<u16>> {
    let mut hdr = magic(bytes, name, b"P5")?;
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(hdr.error(format!("maxval {maxval} outside 1..=65535")));
    }
    hdr.end()?;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let need = w * h * sample_bytes;
    let raster = &bytes[hdr.pos..];
    if raster.len() < need {
        return Err(Error::format(
            name,
            bytes.len() as u64,
            format!("truncated raster: need {need} bytes, have {}", raster.len()),
        ));
    }
    let data: Vec<u16> = if sample_bytes == 2 {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(i) = data.iter().position(|&v| v as usize > maxval) {
        return Err(Error::format(
            name,
            (hdr.pos + i * sample_bytes) as u64,
            format!("sample exceeds maxval {maxval}"),
        ));
    }
    Ok(Grid::from_vec(w, h, data).expect("size checked"))
}

pub fn decode_pbm(bytes: &[u8], name: &str) -> Result<Grid<bool>> {
    let mut hdr = magic(bytes, name, b"P4")?;
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    hdr.end()?;
    let row_bytes = w.div_ceil(8);
    let raster = &bytes[hdr.pos..];
    if raster.len() < row_bytes * h {
        return Err(Error::format(
            name,
            bytes.len() as u64,
            format!("truncated raster: need {} bytes", row_bytes * h),
        ));
    }
    Ok(Grid::from_fn(w, h, |x, y| {
        raster[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_header_is_standard() {
        let img = Grid::from_vec(2, 1, vec![1u16, 65535]).unwrap();
        let bytes = encode_pgm16(&img);
        assert_eq!(&bytes[..14], b"P5\n2 1\n65535\n\x00");
        assert_eq!(&bytes[13..], &[0, 1, 255, 255]);
    }

    #[test]
    fn pgm_with_comments_and_8_bit() {
        let bytes = b"P5 # made by hand\n3 1\n# max\n255\n\x01\x02\xff";
        let img = decode_pgm16(bytes, "x").unwrap();
        assert_eq!(img.as_slice(), &[1, 2, 255]);
    }

    #[test]
    fn pgm_errors() {
        assert!(decode_pgm16(b"P2\n1 1\n255\n1", "x").is_err());
        assert!(decode_pgm16(b"P5\n2 2\n65535\n\x00\x01", "x").is_err());
        assert!(decode_pgm16(b"P5\n1 1\n10\n\x0b", "x").is_err());
    }

    #[test]
    fn pbm_packs_rows() {
        let mask = Grid::from_vec(
            9,
            1,
            vec![true, false, false, false, false, false, false, true, true],
        )
        .unwrap();
        let bytes = encode_pbm(&mask);
        assert_eq!(&bytes[bytes.len() - 2..], &[0b1000_0001, 0b1000_0000]);
        assert_eq!(decode_pbm(&bytes, "m").unwrap(), mask);
    }

    proptest! {
        #[test]
        fn pgm_and_pbm_roundtrip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let img = Grid::from_fn(w, h, |x, y| (seed.wrapping_mul((x * 31 + y * 7 + 1) as u64) >> 48) as u16);
            prop_assert_eq!(decode_pgm16(&encode_pgm16(&img), "p").unwrap(), img.clone());
            let mask = img.map(|v| v % 3 == 0);
            prop_assert_eq!(decode_pbm(&encode_pbm(&mask), "m").unwrap(), mask);
        }
    }
}
