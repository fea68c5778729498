//! Binary Netpbm images: RGB `P6` with maxval 255, grayscale `P5` with maxval
//! 255 (masks) or 65535 (depth, little-endian samples).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Depth scale of the 16-bit depth format: one unit is a thousandth of a
/// scene unit.
pub const DEPTH_SCALE: f64 = 1000.0;

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < 2 {
        return Err(Error::Truncated {
            offset: 0,
            expected: 2,
        });
    }
    let magic = [buf[0], buf[1]];
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        // whitespace and comments before each number
        loop {
            match buf.get(pos) {
                None => {
                    return Err(Error::Truncated {
                        offset: pos as u64,
                        expected: 1,
                    })
                }
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|c| *c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == start {
            return Err(Error::format(pos as u64, "expected a decimal number in header"));
        }
        if pos - start > 9 {
            return Err(Error::format(start as u64, "header number too large"));
        }
        *field = std::str::from_utf8(&buf[start..pos]).unwrap().parse().unwrap();
    }
    match buf.get(pos) {
        None => {
            return Err(Error::Truncated {
                offset: pos as u64,
                expected: 1,
            })
        }
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::format(pos as u64, "expected whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::format(2, "image dimensions must be positive"));
    }
    Ok(Header {
        magic,
        width: w as usize,
        height: h as usize,
        maxval: maxval as u32,
        data_offset: pos,
    })
}

fn payload<'a>(buf: &'a [u8], h: &Header, bytes_per_sample: usize, channels: usize) -> Result<&'a [u8]> {
    let need = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels * bytes_per_sample))
        .ok_or_else(|| Error::format(2, "image dimensions overflow"))?;
    let have = buf.len() - h.data_offset;
    if have < need {
        return Err(Error::Truncated {
            offset: h.data_offset as u64,
            expected: need as u64,
        });
    }
    if have > need {
        return Err(Error::format((h.data_offset + need) as u64, "trailing bytes after image data"));
    }
    Ok(&buf[h.data_offset..])
}

pub fn decode_ppm(buf: &[u8]) -> Result<RgbImage> {
    let h = parse_header(buf)?;
    if &h.magic != b"P6" {
        return Err(Error::format(0, "not a binary PPM (P6)"));
    }
    if h.maxval != 255 {
        return Err(Error::format(2, format!("unsupported PPM maxval {}", h.maxval)));
    }
    let data = payload(buf, &h, 1, 3)?;
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data: data.iter().map(|b| *b as f64 / 255.0).collect(),
    })
}

/// Encodes with each sample rounded to the nearest of 256 levels.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| to_u8(*v)));
    out
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit grayscale samples.
pub fn decode_pgm8(buf: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_header(buf)?;
    if &h.magic != b"P5" {
        return Err(Error::format(0, "not a binary PGM (P5)"));
    }
    if h.maxval != 255 {
        return Err(Error::format(2, format!("expected maxval 255, found {}", h.maxval)));
    }
    let data = payload(buf, &h, 1, 1)?;
    Ok((h.width, h.height, data.to_vec()))
}

pub fn encode_pgm8(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

/// 16-bit grayscale samples, stored little-endian.
pub fn decode_pgm16(buf: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let h = parse_header(buf)?;
    if &h.magic != b"P5" {
        return Err(Error::format(0, "not a binary PGM (P5)"));
    }
    if h.maxval != 65535 {
        return Err(Error::format(2, format!("expected maxval 65535, found {}", h.maxval)));
    }
    let data = payload(buf, &h, 2, 1)?;
    Ok((
        h.width,
        h.height,
        data.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
    ))
}

pub fn encode_pgm16(width: usize, height: usize, data: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Mask where 255 keeps a pixel and 0 excludes it.
pub fn decode_mask(buf: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let (w, h, data) = decode_pgm8(buf)?;
    let header_len = buf.len() - data.len();
    let mut mask = Vec::with_capacity(data.len());
    for (i, v) in data.iter().enumerate() {
        match v {
            255 => mask.push(true),
            0 => mask.push(false),
            _ => {
                return Err(Error::format(
                    (header_len + i) as u64,
                    format!("mask value {v} is neither 0 nor 255"),
                ))
            }
        }
    }
    Ok((w, h, mask))
}

pub fn encode_mask(width: usize, height: usize, mask: &[bool]) -> Vec<u8> {
    let data: Vec<u8> = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    encode_pgm8(width, height, &data)
}

/// Fixed-point depth: `round(depth * 1000)` clamped to the 16-bit range.
pub fn depth_to_u16(depth: f64) -> u16 {
    if !(depth > 0.0) {
        return 0;
    }
    (depth * DEPTH_SCALE).round().min(u16::MAX as f64) as u16
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
}

pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    decode_mask(&fs::read(path)?)
}

pub fn save_mask(width: usize, height: usize, mask: &[bool], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_mask(width, height, mask))?;
    Ok(())
}

/// Writes metric depth as a 16-bit PGM.
pub fn save_depth(width: usize, height: usize, depth: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u16> = depth.iter().map(|d| depth_to_u16(*d)).collect();
    fs::write(path, encode_pgm16(width, height, &data))?;
    Ok(())
}

/// Reads a 16-bit depth PGM back to scene units.
pub fn load_depth(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let (w, h, d) = decode_pgm16(&fs::read(path)?)?;
    Ok((w, h, d.iter().map(|v| *v as f64 / DEPTH_SCALE).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        let mut img = RgbImage::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        img
    }

    #[test]
    fn ppm_roundtrip_is_exact_at_8_bits() {
        let img = sample();
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut buf = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = decode_ppm(&buf).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn truncated_image_is_rejected() {
        let buf = encode_ppm(&sample());
        for cut in [0, 1, 5, 10, buf.len() - 1] {
            let r = decode_ppm(&buf[..cut]);
            assert!(matches!(r, Err(Error::Truncated { .. }) | Err(Error::Format { .. })), "cut {cut}");
        }
        assert!(matches!(decode_ppm(&buf[..buf.len() - 1]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n   "), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_ppm(b"P6\nx 1\n255\n"), Err(Error::Format { .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(Error::Format { .. })));
        let mut extra = encode_ppm(&sample());
        extra.push(0);
        assert!(matches!(decode_ppm(&extra), Err(Error::Format { .. })));
    }

    #[test]
    fn depth_pgm_is_little_endian_and_clamps() {
        let buf = encode_pgm16(2, 1, &[0x0102, 0xfffe]);
        assert_eq!(&buf[buf.len() - 4..], &[0x02, 0x01, 0xfe, 0xff]);
        assert_eq!(decode_pgm16(&buf).unwrap().2, vec![0x0102, 0xfffe]);
        assert_eq!(depth_to_u16(1e9), u16::MAX);
        assert_eq!(depth_to_u16(-1.0), 0);
        assert_eq!(depth_to_u16(1.2345), 1235);
    }

    #[test]
    fn mask_values_must_be_binary() {
        let m = vec![true, false, true];
        assert_eq!(decode_mask(&encode_mask(3, 1, &m)).unwrap().2, m);
        assert!(matches!(decode_mask(&encode_pgm8(1, 1, &[7])), Err(Error::Format { .. })));
    }
}
