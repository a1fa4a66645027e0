//! Parameter container file: a JSON manifest naming each blob, followed
//! by raw 64-bit little-endian float payloads.
//!
//! Layout: magic `FIBC` | u32 LE version (=1) | u64 LE manifest length |
//! manifest JSON | payload. Manifest offsets index into the payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FIBC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

/// In-memory form of a container file: string metadata plus named blobs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    #[serde(skip)]
    pub blobs: Vec<(ContainerEntry, Vec<f64>)>,
}

impl Container {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.blobs.push((
            ContainerEntry {
                name: name.into(),
                shape,
                offset: 0,
            },
            values,
        ));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.blobs
            .iter()
            .find(|(e, _)| e.name == name)
            .map(|(e, v)| (e.shape.as_slice(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            meta: &'a BTreeMap<String, String>,
            entries: Vec<ContainerEntry>,
        }

        let mut entries = Vec::with_capacity(self.blobs.len());
        let mut offset = 0u64;
        for (e, v) in &self.blobs {
            let mut e = e.clone();
            e.offset = offset;
            offset += (v.len() * 8) as u64;
            entries.push(e);
        }
        let manifest = serde_json::to_vec(&Manifest {
            meta: &self.meta,
            entries,
        })
        .expect("manifest serialization cannot fail");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, v) in &self.blobs {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        #[derive(Deserialize)]
        struct Manifest {
            meta: BTreeMap<String, String>,
            entries: Vec<ContainerEntry>,
        }

        let bad = |msg: &str| Error::Validation(format!("checkpoint: {msg}"));
        if bytes.len() < 16 {
            return Err(bad("file too short"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic (expected FIBC)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + mlen {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + mlen])
            .map_err(|e| bad(&format!("manifest parse: {e}")))?;
        let payload = &bytes[16 + mlen..];

        let mut blobs = Vec::with_capacity(manifest.entries.len());
        for e in manifest.entries {
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + count * 8;
            if end > payload.len() {
                return Err(bad(&format!("blob {} overruns payload", e.name)));
            }
            let values: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push((e, values));
        }
        Ok(Container {
            meta: manifest.meta,
            blobs,
        })
    }
}

pub fn write_container(container: &Container, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&container.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = Container::default();
        c.meta.insert("variant".into(), "text-only".into());
        c.push("w", vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 0.1]);
        c.push("b", vec![2], vec![0.25, -0.5]);
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta.get("variant").unwrap(), "text-only");
        let (shape, vals) = back.get("w").unwrap();
        assert_eq!(shape, &[2, 3]);
        for (a, b) in vals.iter().zip(c.get("w").unwrap().1) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut c = Container::default();
        c.push("x", vec![1], vec![1.0]);
        let mut bytes = c.to_bytes();
        bytes[0] = b'X';
        assert!(Container::from_bytes(&bytes).is_err());

        let mut bytes2 = c.to_bytes();
        bytes2[4] = 9;
        assert!(Container::from_bytes(&bytes2).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut c = Container::default();
        c.push("x", vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
