//! Binary P6 PPM, 8 bits per channel only.

use std::path::Path;

use super::pfm::{header_tokens, parse_dim};
use super::RgbImage;
use crate::error::{Error, Result};

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (tok, offset) = header_tokens(bytes, 4, "PPM", true)?;
    if tok[0] != "P6" {
        return Err(Error::format("PPM", format!("bad magic {:?}, expected P6", tok[0])));
    }
    let width = parse_dim(&tok[1], "width", "PPM")?;
    let height = parse_dim(&tok[2], "height", "PPM")?;
    if tok[3] != "255" {
        return Err(Error::format(
            "PPM",
            format!("max value {} not supported, only 255", tok[3]),
        ));
    }
    let payload = &bytes[offset..];
    let expected = width * height * 3;
    if payload.len() != expected {
        return Err(Error::format(
            "PPM",
            format!("payload is {} bytes, expected {expected}", payload.len()),
        ));
    }
    RgbImage::from_bytes(width, height, payload)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_bytes() {
        let img = RgbImage::new(1, 1, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(encode_ppm(&img), b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn rejects_other_max_values() {
        let err = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert!(err.to_string().contains("65535"), "{err}");
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_ppm(b"P6\n# made by hand\n1 1\n255\n\x00\x80\xff").unwrap();
        assert_eq!(img.to_bytes(), vec![0, 128, 255]);
    }

    #[test]
    fn truncated() {
        assert!(decode_ppm(b"P6\n2 1\n255\n\xff\xff\xff").is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\xff").is_err());
    }
}
