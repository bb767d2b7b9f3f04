//! Binary 16-bit PGM depth maps: stored value = depth_m × 256, 0 = invalid.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Array3, Mask2, MaskedMap};

/// Stored units per metre.
pub const DEPTH_SCALE: f64 = 256.0;
/// Largest depth a 16-bit pixel can hold.
pub const MAX_PGM_DEPTH: f64 = 65535.0 / DEPTH_SCALE;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let pos = skip_ws_and_comments(bytes, pos);
    let start = pos;
    let mut end = pos;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(format_err(start, format!("expected {what}")));
    }
    let v = std::str::from_utf8(&bytes[start..end])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| format_err(start, format!("{what} is not a valid integer")))?;
    Ok((v, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(0, "missing P5 magic"));
    }
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let maxval_at = skip_ws_and_comments(bytes, pos);
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if maxval != 65535 {
        return Err(format_err(maxval_at, format!("maxval {maxval} is not 65535")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(pos, "expected a single whitespace byte after maxval"));
    }
    Ok(Header {
        width,
        height,
        data_start: pos + 1,
    })
}

/// Decodes PGM bytes into a 1-channel depth map in metres.
pub fn decode_depth_pgm(bytes: &[u8]) -> Result<MaskedMap> {
    let hdr = parse_header(bytes)?;
    let n = hdr.width * hdr.height;
    let need = hdr.data_start + 2 * n;
    if bytes.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("pixel data truncated: need {need} bytes, have {}", bytes.len()),
        ));
    }
    let pixels = &bytes[hdr.data_start..need];
    let mut depth = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for px in pixels.chunks_exact(2) {
        let v = u16::from_be_bytes([px[0], px[1]]);
        depth.push(v as f64 / DEPTH_SCALE);
        mask.push(if v != 0 { 1.0 } else { 0.0 });
    }
    MaskedMap::raw(
        Array3::from_vec(1, hdr.height, hdr.width, depth)?,
        Mask2::from_vec(hdr.height, hdr.width, mask)?,
    )
}

/// Encodes a 1-channel depth map. Invalid pixels are written as 0; valid
/// depths must round to a pixel in `1..=65535`.
pub fn encode_depth_pgm(map: &MaskedMap) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::Config(format!("depth maps have 1 channel, got {}", map.channels())));
    }
    let (h, w) = (map.height(), map.width());
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * h * w);
    for (d, m) in map.features().data().iter().zip(map.mask().data()) {
        let px = if *m == 0.0 {
            0u16
        } else {
            let s = (d * DEPTH_SCALE).round();
            if !(1.0..=65535.0).contains(&s) {
                return Err(Error::Range(format!(
                    "depth {d} m is not representable in a 16-bit map (max {MAX_PGM_DEPTH} m)"
                )));
            }
            s as u16
        };
        out.extend_from_slice(&px.to_be_bytes());
    }
    Ok(out)
}

pub fn read_depth_pgm(path: impl AsRef<Path>) -> Result<MaskedMap> {
    decode_depth_pgm(&fs::read(path)?)
}

pub fn write_depth_pgm(map: &MaskedMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_depth_pgm(map)?)?;
    Ok(())
}
