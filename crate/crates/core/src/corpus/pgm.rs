//! Binary PGM (P5) with 16-bit big-endian samples.

use std::path::Path;

use thiserror::Error;

use crate::types::{ViewImage, ViewKind};

pub const MAXVAL: u32 = 65535;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (expected 65535)")]
    UnsupportedMaxval(u32),
    #[error("unexpected end of data: expected {expected} payload bytes, found {found}")]
    UnexpectedEof { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn encode(image: &ViewImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n{}\n", image.width, image.height, MAXVAL);
    let mut out = Vec::with_capacity(header.len() + 2 * image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    for p in &image.pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], view: ViewKind) -> Result<ViewImage, PgmError> {
    let mut cursor = 0usize;
    let magic = next_token(bytes, &mut cursor)?;
    if magic != b"P5" {
        return Err(PgmError::MalformedHeader(format!(
            "magic {:?} is not P5",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = next_number(bytes, &mut cursor, "width")?;
    let height = next_number(bytes, &mut cursor, "height")?;
    let maxval = next_number(bytes, &mut cursor, "maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    if maxval != MAXVAL {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor) {
        Some(b) if b.is_ascii_whitespace() => cursor += 1,
        Some(_) => {
            return Err(PgmError::MalformedHeader(
                "missing separator after maxval".into(),
            ))
        }
        None => {
            return Err(PgmError::UnexpectedEof {
                expected: 2 * width as usize * height as usize,
                found: 0,
            })
        }
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 2 * w * h;
    let payload = &bytes[cursor..];
    if payload.len() < expected {
        return Err(PgmError::UnexpectedEof {
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload[..expected]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(ViewImage::new(view, h, w, pixels))
}

fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Result<&'a [u8], PgmError> {
    loop {
        match bytes.get(*cursor) {
            Some(b'#') => {
                while bytes.get(*cursor).is_some_and(|&b| b != b'\n') {
                    *cursor += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *cursor += 1,
            Some(_) => break,
            None => return Err(PgmError::MalformedHeader("header ended early".into())),
        }
    }
    let start = *cursor;
    while bytes
        .get(*cursor)
        .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
    {
        *cursor += 1;
    }
    Ok(&bytes[start..*cursor])
}

fn next_number(bytes: &[u8], cursor: &mut usize, what: &str) -> Result<u32, PgmError> {
    let tok = next_token(bytes, cursor)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            PgmError::MalformedHeader(format!(
                "{what} {:?} is not a number",
                String::from_utf8_lossy(tok)
            ))
        })
}

pub fn save_view(image: &ViewImage, path: &Path) -> Result<(), PgmError> {
    std::fs::write(path, encode(image)).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_view(path: &Path, view: ViewKind) -> Result<ViewImage, PgmError> {
    let bytes = std::fs::read(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, view)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ViewImage {
        ViewImage::new(ViewKind::LeftCc, 2, 3, vec![0, 1, 256, 65535, 32768, 7])
    }

    #[test]
    fn header_and_byte_order() {
        let bytes = encode(&image());
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        let payload = &bytes[bytes.len() - 12..];
        assert_eq!(&payload[4..6], &[1, 0]);
        assert_eq!(decode(&bytes, ViewKind::LeftCc).unwrap(), image());
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P5\n# written by hand\n3 2 # size\n65535\n".to_vec();
        bytes.extend(encode(&image()).iter().skip(13));
        assert_eq!(decode(&bytes, ViewKind::LeftCc).unwrap(), image());
    }

    #[test]
    fn eight_bit_maxval_is_unsupported() {
        let bytes = b"P5\n1 1\n255\n\x10".to_vec();
        let err = decode(&bytes, ViewKind::LeftCc).unwrap_err();
        assert!(matches!(err, PgmError::UnsupportedMaxval(255)));
        assert!(err.to_string().contains("unsupported maxval"));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode(&image());
        bytes.pop();
        let err = decode(&bytes, ViewKind::LeftCc).unwrap_err();
        assert!(err.to_string().contains("unexpected end of data"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b"P2\n1 1\n65535\n\0\0"[..],
            b"P5\n1 x\n65535\n\0\0",
            b"P5\n1",
        ] {
            assert!(matches!(
                decode(bad, ViewKind::LeftCc),
                Err(PgmError::MalformedHeader(_))
            ));
        }
    }
}
