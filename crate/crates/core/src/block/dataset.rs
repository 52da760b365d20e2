//! `CHRB` dataset container.
//!
//! All integers little-endian.
//!
//! ```text
//! magic          4 bytes  "CHRB"
//! version        u16      1
//! chroma_format  u8       0 = 4:4:4, 1 = 4:2:0
//! bit_depth      u8
//! histogram      3 × u32  record counts for N = 4, 8, 16
//! record_count   u32
//! records...
//! ```
//!
//! Each record, with `L` the luma side (`N` or `2N`):
//!
//! ```text
//! n              u8
//! origin_x       u32      chroma-plane coordinates
//! origin_y       u32
//! luma_block     L² × f32
//! b_y            (2L+1) × f32, then (2L+1) × u8 availability
//! b_cb           (2N+1) × f32, then (2N+1) × u8
//! b_cr           (2N+1) × f32, then (2N+1) × u8
//! target_cb      N² × f32
//! target_cr      N² × f32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{boundary_coords, BlockSample, BoundaryArray, BLOCK_SIZES};
use crate::error::{Error, Result};
use crate::media_io::ChromaFormat;

pub const DATASET_MAGIC: &[u8; 4] = b"CHRB";
pub const DATASET_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 12 + 4;

/// JSON sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub chroma_format: ChromaFormat,
    pub sources: Vec<String>,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub count: usize,
    pub policy: String,
}

impl DatasetManifest {
    pub fn sidecar_path(dataset: &Path) -> std::path::PathBuf {
        let mut name = dataset.as_os_str().to_owned();
        name.push(".json");
        name.into()
    }

    pub fn save_for(&self, dataset: &Path) -> Result<()> {
        let p = Self::sidecar_path(dataset);
        fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load_for(dataset: &Path) -> Result<Self> {
        let p = Self::sidecar_path(dataset);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn size_slot(n: usize) -> Result<usize> {
    BLOCK_SIZES
        .iter()
        .position(|&s| s == n)
        .ok_or_else(|| Error::InvalidArgument(format!("unsupported block side {n}")))
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_boundary(buf: &mut Vec<u8>, b: &BoundaryArray) {
    put_f32s(buf, &b.values);
    buf.extend(b.available.iter().map(|&a| a as u8));
}

pub fn write_dataset(path: impl AsRef<Path>, format: ChromaFormat, samples: &[BlockSample]) -> Result<()> {
    let path = path.as_ref();
    let bit_depth = samples.first().map_or(10, |s| s.bit_depth);
    let mut histogram = [0u32; 3];
    for s in samples {
        s.validate()?;
        if s.format != format || s.bit_depth != bit_depth {
            return Err(Error::InvalidArgument(
                "all samples in a dataset must share format and bit depth".into(),
            ));
        }
        histogram[size_slot(s.n)?] += 1;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.push(format.as_u8());
    buf.push(bit_depth);
    for h in histogram {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        buf.push(s.n as u8);
        buf.extend_from_slice(&(s.origin.0 as u32).to_le_bytes());
        buf.extend_from_slice(&(s.origin.1 as u32).to_le_bytes());
        put_f32s(&mut buf, &s.luma_block);
        put_boundary(&mut buf, &s.b_y);
        put_boundary(&mut buf, &s.b_cb);
        put_boundary(&mut buf, &s.b_cr);
        put_f32s(&mut buf, &s.target_cb);
        put_f32s(&mut buf, &s.target_cr);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "dataset truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn boundary(&mut self, side: usize) -> Result<BoundaryArray> {
        let len = 2 * side + 1;
        let values = self.f32s(len)?;
        let available = self.take(len)?.iter().map(|&b| b != 0).collect();
        Ok(BoundaryArray {
            values,
            available,
            coords: boundary_coords(side),
        })
    }
}

/// Reads a dataset, returning its chroma format and samples.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(ChromaFormat, Vec<BlockSample>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format(format!("{} is not a CHRB dataset", path.display())));
    }
    let mut r = Reader { bytes: &bytes, pos: 4 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "dataset version {version} is not supported (expected {DATASET_VERSION})"
        )));
    }
    let format = ChromaFormat::from_u8(r.u8()?)?;
    let bit_depth = r.u8()?;
    let mut histogram = [0u32; 3];
    for h in &mut histogram {
        *h = r.u32()?;
    }
    let count = r.u32()? as usize;
    if histogram.iter().map(|&h| h as usize).sum::<usize>() != count {
        return Err(Error::Format("histogram does not sum to record count".into()));
    }
    let mut samples = Vec::with_capacity(count);
    let mut seen = [0u32; 3];
    for _ in 0..count {
        let n = r.u8()? as usize;
        seen[size_slot(n)?] += 1;
        let origin = (r.u32()? as usize, r.u32()? as usize);
        let l = match format {
            ChromaFormat::Yuv444 => n,
            ChromaFormat::Yuv420 => 2 * n,
        };
        let luma_block = r.f32s(l * l)?;
        let b_y = r.boundary(l)?;
        let b_cb = r.boundary(n)?;
        let b_cr = r.boundary(n)?;
        let target_cb = r.f32s(n * n)?;
        let target_cr = r.f32s(n * n)?;
        samples.push(BlockSample {
            n,
            format,
            bit_depth,
            origin,
            luma_block,
            b_y,
            b_cb,
            b_cr,
            target_cb,
            target_cr,
        });
    }
    if seen != histogram {
        return Err(Error::Format(format!(
            "header histogram {histogram:?} does not match records {seen:?}"
        )));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last record",
            bytes.len() - r.pos
        )));
    }
    Ok((format, samples))
}
