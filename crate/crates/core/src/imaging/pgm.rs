//! Binary (P5) PGM at 8-bit depth.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::GrayImage;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported format {magic:?}, only binary P5 is accepted")]
    UnsupportedFormat { magic: String },
    #[error("malformed header field `{field}`: {detail}")]
    MalformedHeader { field: &'static str, detail: String },
    #[error("unsupported maxval {0}, must be in 1..=255")]
    UnsupportedMaxval(u64),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &'static str) -> Result<u64, PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let detail = match self.bytes.get(self.pos) {
                None => "unexpected end of file".to_string(),
                Some(b) => format!("expected a decimal number, found byte 0x{b:02x}"),
            };
            return Err(PgmError::MalformedHeader { field, detail });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse().map_err(|e| PgmError::MalformedHeader {
            field,
            detail: format!("{e}"),
        })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 {
        return Err(PgmError::MalformedHeader {
            field: "magic",
            detail: "file shorter than the magic number".into(),
        });
    }
    if &bytes[..2] != b"P5" {
        return Err(PgmError::UnsupportedFormat {
            magic: String::from_utf8_lossy(&bytes[..2]).into_owned(),
        });
    }
    let mut rd = HeaderReader { bytes, pos: 2 };
    if rd.pos < bytes.len() && !bytes[rd.pos].is_ascii_whitespace() && bytes[rd.pos] != b'#' {
        return Err(PgmError::UnsupportedFormat {
            magic: String::from_utf8_lossy(&bytes[..3]).into_owned(),
        });
    }
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    let maxval = rd.number("maxval")?;
    if width == 0 {
        return Err(PgmError::MalformedHeader {
            field: "width",
            detail: "must be positive".into(),
        });
    }
    if height == 0 {
        return Err(PgmError::MalformedHeader {
            field: "height",
            detail: "must be positive".into(),
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(rd.pos) {
        Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
        _ => {
            return Err(PgmError::MalformedHeader {
                field: "maxval",
                detail: "missing whitespace before raster".into(),
            })
        }
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| PgmError::MalformedHeader {
            field: "width",
            detail: "image too large".into(),
        })?;
    let payload = &bytes[rd.pos..];
    if payload.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let image = GrayImage::new(
        width as usize,
        height as usize,
        payload[..expected].to_vec(),
    )
    .expect("dimensions validated");
    Ok(image)
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.pixels());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, PgmError> {
    decode_pgm(&fs::read(path)?)
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<(), PgmError> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}
