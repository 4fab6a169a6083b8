//! Grayscale Portable Float Map.
//!
//! ```text
//! Pf\n
//! <width> <height>\n
//! <scale>\n          negative scale = little-endian payload
//! <width*height f32, bottom row first>
//! ```

use std::path::Path;

use super::FloatMap;
use crate::error::{Error, Result};

pub fn encode_pfm(map: &FloatMap) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + map.data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for row in map.data.chunks_exact(map.width.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits off `count` whitespace-separated header tokens; returns them and
/// the offset just past the single whitespace byte that ends the last one.
pub(super) fn header_tokens(
    bytes: &[u8],
    count: usize,
    format: &'static str,
    allow_comments: bool,
) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if allow_comments && i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(format, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..i])
            .map_err(|_| Error::format(format, "header is not ASCII"))?;
        tokens.push(tok.to_string());
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::format(format, "header not terminated by whitespace"));
    }
    Ok((tokens, i + 1))
}

pub(super) fn parse_dim(tok: &str, what: &str, format: &'static str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::format(format, format!("bad {what}: {tok:?}")))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<FloatMap> {
    let (tok, offset) = header_tokens(bytes, 4, "PFM", false)?;
    match tok[0].as_str() {
        "Pf" => {}
        "PF" => return Err(Error::format("PFM", "colour PFM (PF) is not supported")),
        other => return Err(Error::format("PFM", format!("bad magic {other:?}"))),
    }
    let width = parse_dim(&tok[1], "width", "PFM")?;
    let height = parse_dim(&tok[2], "height", "PFM")?;
    let scale: f32 = tok[3]
        .parse()
        .map_err(|_| Error::format("PFM", format!("bad scale {:?}", tok[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM", "scale must be finite and non-zero"));
    }
    let little_endian = scale < 0.0;
    let payload = &bytes[offset..];
    let expected = width * height * 4;
    if payload.len() < expected {
        return Err(Error::format(
            "PFM",
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format("PFM", "trailing bytes after payload"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(values.len());
    if width > 0 {
        for row in values.chunks_exact(width).rev() {
            data.extend_from_slice(row);
        }
    }
    FloatMap::new(width, height, data)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &FloatMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FloatMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}
