//! Named-tensor container.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 header with one
//! `name dtype rows cols offset` line per tensor, then the payload of
//! little-endian `f32` values. Offsets are relative to the payload start and
//! tensors are stored contiguously in header order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    entries: Vec<(String, Matrix)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.entries.push((name.into(), m));
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let mut offset = 0usize;
        for (name, m) in &self.entries {
            header.push_str(&format!("{name} f32 {} {} {offset}\n", m.rows(), m.cols()));
            offset += m.data().len() * 4;
        }
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, m) in &self.entries {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("file shorter than header length field".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("header extends past end of file".into()))?;
        let header = std::str::from_utf8(&bytes[8..header_end])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let payload = &bytes[header_end..];

        let mut entries = Vec::new();
        let mut expected_offset = 0usize;
        for (lineno, line) in header.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, dtype, rows, cols, offset] = fields[..] else {
                return Err(Error::Format(format!(
                    "header line {}: expected 5 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            };
            if dtype != "f32" {
                return Err(Error::Format(format!("tensor `{name}`: unsupported dtype {dtype}")));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("tensor `{name}`: bad integer `{s}`")))
            };
            let (rows, cols, offset) = (parse(rows)?, parse(cols)?, parse(offset)?);
            if offset != expected_offset {
                return Err(Error::Format(format!(
                    "tensor `{name}` at offset {offset}, expected {expected_offset}"
                )));
            }
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` too large")))?;
            let end = offset + len;
            if end > payload.len() {
                return Err(Error::Format(format!(
                    "tensor `{name}` needs bytes {offset}..{end}, payload has {}",
                    payload.len()
                )));
            }
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name.to_string(), Matrix::new(rows, cols, data)?));
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(Error::Format(format!(
                "payload has {} bytes, header describes {expected_offset}",
                payload.len()
            )));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handmade() -> Vec<u8> {
        let header = b"w f32 2 2 0\n";
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn loads_hand_built_file() {
        let tf = TensorFile::from_bytes(&handmade()).unwrap();
        let w = tf.require("w").unwrap();
        assert_eq!(w.shape(), (2, 2));
        assert_eq!(w.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tf.to_bytes(), handmade());
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let mut b = handmade();
        b.truncate(b.len() - 1);
        assert!(matches!(TensorFile::from_bytes(&b), Err(Error::Format(_))));
        let mut b = handmade();
        b.push(0);
        assert!(matches!(TensorFile::from_bytes(&b), Err(Error::Format(_))));
        assert!(matches!(TensorFile::from_bytes(&[1, 2]), Err(Error::Format(_))));
    }

    #[test]
    fn bad_offsets_rejected() {
        let header = b"a f32 1 1 0\nb f32 1 1 0\n";
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
