//! `DWPX` patch files and dataset manifests.
//!
//! Patch layout (little-endian): magic `DWPX`, `u32` version, `u16` size
//! `S`, `u8` spectral band count, `u8` SAR band count, planar `f32` bands,
//! one `u8` label plane of `S x S`, then the UTF-8 patch id up to EOF.
//! Prediction files use the same header with both band counts zero.

use std::fs;
use std::path::{Path, PathBuf};

use super::scene::PatchSample;
use crate::config::{NUM_CLASSES, SAR_BANDS, SPEC_BANDS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DWPX";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

fn header(out: &mut Vec<u8>, size: usize, n_spec: u8, n_sar: u8) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(size as u16).to_le_bytes());
    out.push(n_spec);
    out.push(n_sar);
}

pub fn encode_patch(sample: &PatchSample) -> Result<Vec<u8>> {
    sample.validate()?;
    if sample.size > u16::MAX as usize {
        return Err(Error::Config(format!("patch size {} does not fit the format", sample.size)));
    }
    let n = sample.size * sample.size;
    let mut out = Vec::with_capacity(HEADER_LEN + (SPEC_BANDS + SAR_BANDS) * n * 4 + n + sample.patch_id.len());
    header(&mut out, sample.size, SPEC_BANDS as u8, SAR_BANDS as u8);
    for v in sample.spec.iter().chain(&sample.sar) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&sample.labels);
    out.extend_from_slice(sample.patch_id.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Magic, version, size and band counts.
    fn header(&mut self) -> Result<(usize, u8, u8)> {
        if self.take(4, "magic")? != MAGIC {
            self.pos = 0;
            return Err(self.err("bad magic, expected DWPX"));
        }
        let version = u32::from_le_bytes(self.take(4, "version")?.try_into().expect("4 bytes"));
        if version != VERSION {
            self.pos -= 4;
            return Err(self.err(format!("unsupported version {version}")));
        }
        let size = u16::from_le_bytes(self.take(2, "size")?.try_into().expect("2 bytes")) as usize;
        let counts = self.take(2, "band counts")?;
        Ok((size, counts[0], counts[1]))
    }

    fn labels(&mut self, n: usize) -> Result<Vec<u8>> {
        let start = self.pos;
        let labels = self.take(n, "label plane")?.to_vec();
        if let Some(i) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            self.pos = start + i;
            return Err(self.err(format!("label {} out of range", labels[i])));
        }
        Ok(labels)
    }

    fn patch_id(&mut self) -> Result<String> {
        let rest = &self.buf[self.pos..];
        String::from_utf8(rest.to_vec()).map_err(|e| {
            self.pos += e.utf8_error().valid_up_to();
            self.err("patch id is not valid UTF-8")
        })
    }
}

pub fn decode_patch(buf: &[u8]) -> Result<PatchSample> {
    let mut r = Reader { buf, pos: 0 };
    let (size, n_spec, n_sar) = r.header()?;
    if (n_spec as usize, n_sar as usize) != (SPEC_BANDS, SAR_BANDS) {
        r.pos -= 2;
        return Err(r.err(format!("expected {SPEC_BANDS} + {SAR_BANDS} bands, found {n_spec} + {n_sar}")));
    }
    let n = size * size;
    let mut read_bands = |bands: usize, what: &str| -> Result<Vec<f32>> {
        let raw = r.take(bands * n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    };
    let spec = read_bands(SPEC_BANDS, "spectral bands")?;
    let sar = read_bands(SAR_BANDS, "SAR bands")?;
    let labels = r.labels(n)?;
    let patch_id = r.patch_id()?;
    Ok(PatchSample {
        size,
        spec,
        sar,
        labels,
        patch_id,
    })
}

pub fn write_patch(sample: &PatchSample, path: &Path) -> Result<()> {
    fs::write(path, encode_patch(sample)?).map_err(|e| Error::io(path, e))
}

pub fn read_patch(path: &Path) -> Result<PatchSample> {
    decode_patch(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// A predicted label map as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub size: usize,
    pub labels: Vec<u8>,
    pub patch_id: String,
}

pub fn encode_labels(file: &LabelFile) -> Result<Vec<u8>> {
    if file.labels.len() != file.size * file.size || file.size > u16::MAX as usize {
        return Err(Error::Data(format!(
            "{} labels do not form a {}x{} map",
            file.labels.len(),
            file.size,
            file.size
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + file.labels.len() + file.patch_id.len());
    header(&mut out, file.size, 0, 0);
    out.extend_from_slice(&file.labels);
    out.extend_from_slice(file.patch_id.as_bytes());
    Ok(out)
}

pub fn decode_labels(buf: &[u8]) -> Result<LabelFile> {
    let mut r = Reader { buf, pos: 0 };
    let (size, n_spec, n_sar) = r.header()?;
    if (n_spec, n_sar) != (0, 0) {
        r.pos -= 2;
        return Err(r.err(format!("label file must have no bands, found {n_spec} + {n_sar}")));
    }
    let labels = r.labels(size * size)?;
    let patch_id = r.patch_id()?;
    Ok(LabelFile {
        size,
        labels,
        patch_id,
    })
}

pub fn write_labels(file: &LabelFile, path: &Path) -> Result<()> {
    fs::write(path, encode_labels(file)?).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelFile> {
    decode_labels(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// One path per line, relative to the manifest's directory.
pub fn write_manifest(path: &Path, entries: &[String]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(e);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolved patch paths listed in a manifest; blank lines are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| dir.join(l))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::generate_scene;

    fn sample(size: usize) -> PatchSample {
        generate_scene(11, size, 9)
            .unwrap()
            .into_sample(u32::MAX, "tile-0042".into())
            .or_else(|| generate_scene(12, size, 9).unwrap().into_sample(u32::MAX, "tile-0042".into()))
            .unwrap()
    }

    #[test]
    fn round_trip() {
        let s = sample(32);
        assert_eq!(decode_patch(&encode_patch(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn file_size_arithmetic() {
        let s = sample(64);
        let bytes = encode_patch(&s).unwrap();
        assert_eq!(bytes.len(), 12 + 12 * 64 * 64 * 4 + 64 * 64 + "tile-0042".len());
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let mut bytes = encode_patch(&sample(16)).unwrap();
        let good = bytes.clone();
        bytes[1] = b'X';
        assert!(matches!(decode_patch(&bytes), Err(Error::Format { offset: 0, .. })));
        match decode_patch(&good[..100]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        let mut v = good.clone();
        v[4] = 9;
        assert!(matches!(decode_patch(&v), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn label_file_round_trip() {
        let f = LabelFile {
            size: 2,
            labels: vec![0, 8, 3, 3],
            patch_id: "p".into(),
        };
        let bytes = encode_labels(&f).unwrap();
        assert_eq!(bytes.len(), 12 + 4 + 1);
        assert_eq!(decode_labels(&bytes).unwrap(), f);
        assert!(decode_patch(&bytes).is_err());
    }

    #[test]
    fn manifest_paths_are_relative() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.txt");
        write_manifest(&m, &["a.dwpx".into(), "b.dwpx".into()]).unwrap();
        assert_eq!(read_manifest(&m).unwrap(), vec![dir.path().join("a.dwpx"), dir.path().join("b.dwpx")]);
    }
}
