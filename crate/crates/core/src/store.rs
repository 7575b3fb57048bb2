//! On-disk formats: the `DCTS` sequence file, JSON-lines dataset manifests,
//! frame ingestion, and the shared varint/atomic-write helpers.
//!
//! `DCTS` layout (all multi-byte integers little-endian):
//!
//! ```text
//! magic    "DCTS"
//! version  u8 = 1
//! height   u16
//! width    u16
//! block    u8
//! quality  u8
//! flags    u8   bit0 chroma subsampled, bit1 residual
//! reserved u8 = 0
//! count    u32  number of elements, terminator included
//! payload  per element: channel uvarint, position uvarint, value zigzag varint
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use integer_encoding::VarInt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockdct::{self, CodecConfig, QuantizedPlanes};
use crate::colorspace::RgbImage;
use crate::sparse::{self, Geometry, SparseElement, SparseSequence};
use crate::{Error, Result};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"DCTS";
pub const SEQUENCE_VERSION: u8 = 1;

const FLAG_CHROMA: u8 = 1;
const FLAG_RESIDUAL: u8 = 2;

/// Appends LEB128-style varints to a byte buffer.
#[derive(Debug, Default)]
pub struct VarWriter {
    pub buf: Vec<u8>,
}

impl VarWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn uvar(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.encode_var_vec());
    }

    pub fn svar(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.encode_var_vec());
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a byte slice that rejects truncation and overlong varints.
#[derive(Debug)]
pub struct VarReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> VarReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16_le(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64_le(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn uvar(&mut self) -> Result<u64> {
        let rest = &self.data[self.pos..];
        let (v, n) = u64::decode_var(rest)
            .ok_or_else(|| Error::format(format!("bad varint at byte {}", self.pos)))?;
        if n != v.required_space() {
            return Err(Error::format(format!("non-canonical varint at byte {}", self.pos)));
        }
        self.pos += n;
        Ok(v)
    }

    pub fn svar(&mut self) -> Result<i64> {
        let rest = &self.data[self.pos..];
        let (v, n) = i64::decode_var(rest)
            .ok_or_else(|| Error::format(format!("bad varint at byte {}", self.pos)))?;
        if n != v.required_space() {
            return Err(Error::format(format!("non-canonical varint at byte {}", self.pos)));
        }
        self.pos += n;
        Ok(v)
    }

    pub fn uvar_u32(&mut self) -> Result<u32> {
        let v = self.uvar()?;
        u32::try_from(v).map_err(|_| Error::format(format!("varint {v} exceeds 32 bits")))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Fixed geometry header shared by sequence and predictor files.
pub(crate) fn write_geometry(w: &mut VarWriter, g: &Geometry, residual: bool) -> Result<()> {
    let dim = |v: usize| {
        u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("dimension {v} exceeds u16")))
    };
    w.bytes(&dim(g.height)?.to_le_bytes());
    w.bytes(&dim(g.width)?.to_le_bytes());
    let mut flags = 0;
    if g.config.chroma_downsampled() {
        flags |= FLAG_CHROMA;
    }
    if residual {
        flags |= FLAG_RESIDUAL;
    }
    w.bytes(&[g.config.block() as u8, g.config.quality() as u8, flags, 0]);
    Ok(())
}

pub(crate) fn read_geometry(r: &mut VarReader) -> Result<(Geometry, bool)> {
    let height = r.u16_le()? as usize;
    let width = r.u16_le()? as usize;
    let block = r.u8()? as usize;
    let quality = r.u8()? as u32;
    let flags = r.u8()?;
    let reserved = r.u8()?;
    if flags & !(FLAG_CHROMA | FLAG_RESIDUAL) != 0 || reserved != 0 {
        return Err(Error::format("unknown flag or reserved bits set"));
    }
    let config = CodecConfig::new(block, quality, flags & FLAG_CHROMA != 0)?;
    Ok((Geometry::new(config, height, width)?, flags & FLAG_RESIDUAL != 0))
}

pub fn encode_sequence(seq: &SparseSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let mut w = VarWriter::new();
    w.bytes(SEQUENCE_MAGIC);
    w.bytes(&[SEQUENCE_VERSION]);
    write_geometry(&mut w, &seq.geometry, seq.residual)?;
    let count = u32::try_from(seq.len())
        .map_err(|_| Error::InvalidArgument("sequence longer than u32::MAX".into()))?;
    w.bytes(&count.to_le_bytes());
    for el in &seq.elements {
        w.uvar(el.channel as u64);
        w.uvar(el.position as u64);
        w.svar(el.value as i64);
    }
    Ok(w.into_inner())
}

/// Parses and fully validates a `DCTS` buffer.
pub fn decode_sequence(bytes: &[u8]) -> Result<SparseSequence> {
    let mut r = VarReader::new(bytes);
    if r.take(4)? != SEQUENCE_MAGIC {
        return Err(Error::format("bad magic"));
    }
    let version = r.u8()?;
    if version != SEQUENCE_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let (geometry, residual) = read_geometry(&mut r)?;
    let count = r.u32_le()? as usize;
    // every element takes at least three bytes
    if count.saturating_mul(3) > bytes.len() {
        return Err(Error::format(format!("element count {count} exceeds payload")));
    }
    let mut elements = Vec::with_capacity(count);
    for _ in 0..count {
        let channel = r.uvar_u32()?;
        let position = r.uvar_u32()?;
        let value = r.svar()?;
        let value = i32::try_from(value).map_err(|_| Error::format("value exceeds 32 bits"))?;
        elements.push(SparseElement::new(channel, position, value));
    }
    r.finish()?;
    SparseSequence::new(geometry, residual, elements)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_sequence(path: impl AsRef<Path>, seq: &SparseSequence) -> Result<()> {
    write_atomic(path, &encode_sequence(seq)?)
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<SparseSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sequence(&bytes)
}

/// One clip per JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub frames: Vec<PathBuf>,
    #[serde(default)]
    pub annotations: serde_json::Value,
    /// Preset name the clip is meant for.
    #[serde(default)]
    pub codec: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Relative frame paths resolve against this directory.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records: Vec<ManifestRecord> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::format(format!("manifest line {}: {e}", i + 1)))?;
            if records.iter().any(|r| r.clip_id == rec.clip_id) {
                return Err(Error::format(format!("duplicate clip id `{}`", rec.clip_id)));
            }
            records.push(rec);
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Absolute,
    Residual,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub config: CodecConfig,
    /// Keep every `stride`-th frame starting from the first.
    pub stride: usize,
    pub center_crop: bool,
    /// Square output side; `None` keeps the (cropped) size.
    pub resize: Option<usize>,
    pub representation: Representation,
}

#[derive(Debug, Clone)]
pub struct ClipCorpus {
    pub clip_id: String,
    pub frame_paths: Vec<PathBuf>,
    pub absolute: Vec<SparseSequence>,
    /// Residuals of frames `1..` against their predecessor.
    pub residual: Vec<SparseSequence>,
}

/// Frame indices kept by a stride.
pub fn stride_indices(len: usize, stride: usize) -> Vec<usize> {
    (0..len).step_by(stride.max(1)).collect()
}

/// Largest centered square.
pub fn center_crop(img: &RgbImage) -> Result<RgbImage> {
    let side = img.height().min(img.width());
    let (y0, x0) = ((img.height() - side) / 2, (img.width() - side) / 2);
    let mut buf = img.to_image();
    let cropped = imageops::crop(&mut buf, x0 as u32, y0 as u32, side as u32, side as u32).to_image();
    RgbImage::from_image(cropped)
}

pub fn resize(img: &RgbImage, height: usize, width: usize) -> Result<RgbImage> {
    if img.height() == height && img.width() == width {
        return Ok(img.clone());
    }
    let out = imageops::resize(&img.to_image(), width as u32, height as u32, FilterType::Triangle);
    RgbImage::from_image(out)
}

pub fn prepare_frame(img: &RgbImage, opts: &IngestOptions) -> Result<RgbImage> {
    let mut img = if opts.center_crop { center_crop(img)? } else { img.clone() };
    if let Some(side) = opts.resize {
        img = resize(&img, side, side)?;
    }
    opts.config.check_dims(img.height(), img.width())?;
    Ok(img)
}

fn ingest_clip(manifest: &DatasetManifest, rec: &ManifestRecord, opts: &IngestOptions) -> Result<ClipCorpus> {
    let kept: Vec<PathBuf> = stride_indices(rec.frames.len(), opts.stride)
        .into_iter()
        .map(|i| manifest.resolve(&rec.frames[i]))
        .collect();
    let mut coded: Vec<QuantizedPlanes> = Vec::with_capacity(kept.len());
    for path in &kept {
        let img = RgbImage::load(path)?;
        let img = prepare_frame(&img, opts)?;
        coded.push(blockdct::encode_image(&img, opts.config)?);
    }
    let absolute = match opts.representation {
        Representation::Residual => Vec::new(),
        _ => coded.iter().map(sparse::to_sparse).collect(),
    };
    let residual = match opts.representation {
        Representation::Absolute => Vec::new(),
        _ => coded
            .windows(2)
            .map(|w| sparse::residual_encode(&w[1], &w[0]).map(|r| r.sequence))
            .collect::<Result<_>>()?,
    };
    Ok(ClipCorpus {
        clip_id: rec.clip_id.clone(),
        frame_paths: kept,
        absolute,
        residual,
    })
}

/// Loads, strides, crops, resizes and encodes every clip; clips run in parallel.
pub fn ingest(manifest: &DatasetManifest, opts: &IngestOptions) -> Result<Vec<ClipCorpus>> {
    if opts.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    manifest
        .records
        .par_iter()
        .map(|rec| ingest_clip(manifest, rec, opts))
        .collect()
}

/// Recursively collects `*.dcts` files in sorted order.
pub fn find_sequence_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "dcts") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir.as_ref(), &mut out)?;
    out.sort();
    Ok(out)
}
