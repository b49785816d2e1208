//! Tensor archive: a tar file holding `manifest.json` (metadata plus a
//! table of named f32 tensors) and `params.bin` (their little-endian
//! values back to back).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "vsl-archive";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    kind: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A named tensor read from or written to an archive.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Archive {
    /// What the archive holds, e.g. `"checkpoint"` or `"features"`.
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn append<W: Write>(builder: &mut tar::Builder<W>, name: &str, bytes: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder.append_data(&mut header, name, bytes)?;
    Ok(())
}

pub fn write_archive<W: Write>(archive: &Archive, sink: W) -> Result<()> {
    let mut entries = Vec::with_capacity(archive.tensors.len());
    let mut blob = Vec::new();
    for t in &archive.tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::shape(format!(
                "tensor {} has shape {:?} but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        entries.push(TensorEntry {
            name: t.name.clone(),
            dtype: "f32".into(),
            shape: t.shape.clone(),
            offset: blob.len(),
        });
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: archive.kind.clone(),
        metadata: archive.metadata.clone(),
        tensors: entries,
    };
    let mut builder = tar::Builder::new(sink);
    append(&mut builder, "manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    append(&mut builder, "params.bin", &blob)?;
    builder.into_inner()?.flush()?;
    Ok(())
}

pub fn read_archive<R: Read>(source: R) -> Result<Archive> {
    let mut tar = tar::Archive::new(source);
    let mut manifest: Option<Manifest> = None;
    let mut blob: Option<Vec<u8>> = None;
    for entry in tar.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.to_string_lossy().into_owned();
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes)?;
        match name.as_str() {
            "manifest.json" => manifest = Some(serde_json::from_slice(&bytes)?),
            "params.bin" => blob = Some(bytes),
            other => return Err(Error::Format(format!("unexpected archive member {other:?}"))),
        }
    }
    let manifest = manifest.ok_or_else(|| Error::Format("archive lacks manifest.json".into()))?;
    let blob = blob.ok_or_else(|| Error::Format("archive lacks params.bin".into()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported archive {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut expected_end = 0;
    for e in manifest.tensors {
        if e.dtype != "f32" {
            return Err(Error::Format(format!("tensor {} has dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > blob.len() {
            return Err(Error::Format(format!("tensor {} runs past the end of params.bin", e.name)));
        }
        expected_end = expected_end.max(end);
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    if expected_end != blob.len() {
        return Err(Error::Format("params.bin length does not match the manifest".into()));
    }
    Ok(Archive {
        kind: manifest.kind,
        metadata: manifest.metadata,
        tensors,
    })
}

pub fn save_archive(archive: &Archive, path: &Path) -> Result<()> {
    // write then rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_archive(archive, BufWriter::new(file))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        Archive {
            kind: "test".into(),
            metadata: serde_json::json!({"a": 1}),
            tensors: vec![
                NamedTensor {
                    name: "w".into(),
                    shape: vec![2, 3],
                    data: vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0],
                },
                NamedTensor {
                    name: "b".into(),
                    shape: vec![1],
                    data: vec![0.25],
                },
            ],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let a = sample();
        let mut buf = Vec::new();
        write_archive(&a, &mut buf).unwrap();
        let b = read_archive(buf.as_slice()).unwrap();
        assert_eq!(b.tensors, a.tensors);
        assert_eq!(b.metadata, a.metadata);
        assert_eq!(b.kind, "test");
        let mut again = Vec::new();
        write_archive(&b, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_shapes_and_garbage_are_rejected() {
        let mut a = sample();
        a.tensors[0].shape = vec![4];
        assert!(write_archive(&a, Vec::new()).is_err());
        assert!(read_archive(&b"not a tar"[..]).is_err());
    }
}
