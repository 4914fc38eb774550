//! `weights.bin`: magic `TSVE`, format version (u32), tensor count (u32),
//! then per tensor a u16 name length, the UTF-8 name, a u8 rank, the dims as
//! u32 and the row-major f32 payload. Integers and floats are little-endian.

use std::path::Path;

use crate::model::{ParamSet, Tensor};
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"TSVE";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn encode_weights(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * params.n_values());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Artifact {
                path: self.path.to_path_buf(),
                reason: format!("truncated weight file at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_weights(buf: &[u8], path: &Path) -> Result<ParamSet<f32>> {
    let mut c = Cursor { buf, pos: 0, path };
    let magic: [u8; 4] = c.take(4)?.try_into().expect("4 bytes");
    if magic != WEIGHTS_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let count = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| Error::Artifact {
                path: path.to_path_buf(),
                reason: format!("tensor name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = c
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        params.insert(name, Tensor { shape, data });
    }
    if c.pos != buf.len() {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after the last tensor", buf.len() - c.pos),
        });
    }
    Ok(params)
}

pub fn write_weights(path: &Path, params: &ParamSet<f32>) -> Result<()> {
    std::fs::write(path, encode_weights(params)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<ParamSet<f32>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("a.kernel", Tensor::from_vec(&[2, 1, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap());
        p.insert("bias", Tensor::from_vec(&[2], vec![0.1, 1e-30]).unwrap());
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = sample();
        let back = decode_weights(&encode_weights(&p), Path::new("w")).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), p.names().collect::<Vec<_>>());
        for ((_, a), (_, b)) in p.iter().zip(back.iter()) {
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn layout_header() {
        let buf = encode_weights(&sample());
        assert_eq!(&buf[..4], b"TSVE");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(buf[12..14].try_into().unwrap()), 8);
        assert_eq!(&buf[14..22], b"a.kernel");
        assert_eq!(buf[22], 3);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = encode_weights(&sample());
        buf[0] = b'X';
        assert!(matches!(decode_weights(&buf, Path::new("w")), Err(Error::BadMagic { .. })));
        let mut buf = encode_weights(&sample());
        buf[4] = 9;
        assert!(matches!(
            decode_weights(&buf, Path::new("w")),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        let buf = encode_weights(&sample());
        assert!(decode_weights(&buf[..buf.len() - 1], Path::new("w")).is_err());
    }
}
