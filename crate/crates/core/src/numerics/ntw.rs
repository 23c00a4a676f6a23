//! The NTW weight container: the magic `NTWEIGHT`, a little-endian `u32`
//! header length, a JSON header listing `{name, shape, byte_offset}` per
//! tensor, then the raw payload of little-endian `f64` values. Offsets are
//! relative to the start of the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"NTWEIGHT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

pub fn write_to<W: Write>(params: &ParamSet, mut w: W) -> Result<(), NumericsError> {
    let mut header = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        header.push(HeaderEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            byte_offset: offset,
        });
        offset += 8 * t.len() as u64;
    }
    let json = serde_json::to_vec(&header).map_err(|e| NumericsError::Container(e.to_string()))?;
    let len = u32::try_from(json.len())
        .map_err(|_| NumericsError::Container("header exceeds 4 GiB".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for (_, t) in params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<ParamSet, NumericsError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(NumericsError::Container(
            "bad magic, not an NTW file".into(),
        ));
    }
    let mut len = [0u8; 4];
    read_exact(&mut r, &mut len, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact(&mut r, &mut json, "header")?;
    let header: Vec<HeaderEntry> = serde_json::from_slice(&json)
        .map_err(|e| NumericsError::Container(format!("header: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut params = ParamSet::new();
    for entry in header {
        let n: usize = entry.shape.iter().product();
        let start = usize::try_from(entry.byte_offset)
            .map_err(|_| NumericsError::Container("offset overflow".into()))?;
        let end = start + 8 * n;
        let bytes = payload.get(start..end).ok_or_else(|| {
            NumericsError::Container(format!("payload for `{}` is truncated", entry.name))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    Ok(params)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), NumericsError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            NumericsError::Container(format!("unexpected end of data in {what}"))
        }
        _ => NumericsError::Io(e),
    })
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), NumericsError> {
    let mut buf = Vec::new();
    write_to(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet, NumericsError> {
    let bytes = std::fs::read(path)?;
    read_from(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_format() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::vector(vec![1.5])).unwrap();
        p.insert(
            "a",
            Tensor::new(vec![1, 2], vec![-0.0, f64::MIN_POSITIVE]).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_to(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"NTWEIGHT");
        let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let header: Vec<HeaderEntry> = serde_json::from_slice(&buf[12..12 + hlen]).unwrap();
        assert_eq!(header[0].name, "a");
        assert_eq!(header[1].byte_offset, 16);
        assert_eq!(buf.len(), 12 + hlen + 24);
        let back = read_from(buf.as_slice()).unwrap();
        assert_eq!(
            back.get("a").unwrap().data()[0].to_bits(),
            (-0.0f64).to_bits()
        );
        assert_eq!(back, p.without_optimizer_state());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        write_to(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_from(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(read_from(&b"NOTNTW00"[..]).is_err());
    }
}
