//! Orthonormal block DCT, JPEG quality-scaled quantization, zigzag ordering,
//! and plane-level encode/decode into the quantized coefficient domain.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::colorspace::{self, Plane, RgbImage, YuvPlanes};
use crate::{Error, Result};

/// Largest coefficient magnitude representable in the token vocabulary.
pub const MAX_COEFF: i32 = 1023;

/// JPEG Annex K luminance table, natural (row-major) order.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// JPEG Annex K chrominance table, natural (row-major) order.
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodecConfig {
    block: usize,
    quality: u8,
    chroma_downsampled: bool,
}

impl CodecConfig {
    pub fn new(block: usize, quality: u32, chroma_downsampled: bool) -> Result<Self> {
        check_block(block)?;
        if !(1..=100).contains(&quality) {
            return Err(Error::Quality(quality));
        }
        Ok(Self {
            block,
            quality: quality as u8,
            chroma_downsampled,
        })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn quality(&self) -> u32 {
        self.quality as u32
    }

    pub fn chroma_downsampled(&self) -> bool {
        self.chroma_downsampled
    }

    /// Frame sides must be multiples of this.
    pub fn frame_multiple(&self) -> usize {
        if self.chroma_downsampled {
            2 * self.block
        } else {
            self.block
        }
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        let m = self.frame_multiple();
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage { height, width });
        }
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::NotDivisible {
                height,
                width,
                multiple: m,
            });
        }
        Ok(())
    }
}

fn check_block(block: usize) -> Result<()> {
    match block {
        4 | 8 => Ok(()),
        other => Err(Error::BlockSize(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlaneId {
    Y,
    U,
    V,
}

impl PlaneId {
    pub const ALL: [PlaneId; 3] = [PlaneId::Y, PlaneId::U, PlaneId::V];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_chroma(self) -> bool {
        self != PlaneId::Y
    }
}

struct Basis {
    block: usize,
    /// `m[k * B + n] = a(k) cos(pi (2n + 1) k / 2B)`
    m: Vec<f64>,
}

fn basis(block: usize) -> &'static Basis {
    static B4: OnceLock<Basis> = OnceLock::new();
    static B8: OnceLock<Basis> = OnceLock::new();
    let cell = if block == 4 { &B4 } else { &B8 };
    cell.get_or_init(|| {
        let n = block as f64;
        let mut m = vec![0.0; block * block];
        for k in 0..block {
            let a = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for i in 0..block {
                m[k * block + i] = a * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        Basis { block, m }
    })
}

impl Basis {
    /// out = M x M^T
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let b = self.block;
        let mut tmp = vec![0.0; b * b];
        for r in 0..b {
            for k in 0..b {
                tmp[r * b + k] = (0..b).map(|c| self.m[k * b + c] * x[r * b + c]).sum();
            }
        }
        for k in 0..b {
            for l in 0..b {
                out[k * b + l] = (0..b).map(|r| self.m[k * b + r] * tmp[r * b + l]).sum();
            }
        }
    }

    /// out = M^T X M
    fn inverse(&self, coeffs: &[f64], out: &mut [f64]) {
        let b = self.block;
        let mut tmp = vec![0.0; b * b];
        for k in 0..b {
            for c in 0..b {
                tmp[k * b + c] = (0..b).map(|l| coeffs[k * b + l] * self.m[l * b + c]).sum();
            }
        }
        for r in 0..b {
            for c in 0..b {
                out[r * b + c] = (0..b).map(|k| self.m[k * b + r] * tmp[k * b + c]).sum();
            }
        }
    }
}

fn block_of_len(len: usize) -> Result<usize> {
    match len {
        16 => Ok(4),
        64 => Ok(8),
        other => Err(Error::InvalidArgument(format!(
            "block of {other} samples is not 4x4 or 8x8"
        ))),
    }
}

/// Level-shifts by -128 and applies the orthonormal 2-D DCT-II.
/// Input and output are row-major `B*B` slices.
pub fn dct2_forward(block: &[f64]) -> Result<Vec<f64>> {
    let b = block_of_len(block.len())?;
    let shifted: Vec<f64> = block.iter().map(|s| s - 128.0).collect();
    let mut out = vec![0.0; b * b];
    basis(b).forward(&shifted, &mut out);
    Ok(out)
}

/// Inverse of [`dct2_forward`], including the +128 level shift.
pub fn dct2_inverse(coeffs: &[f64]) -> Result<Vec<f64>> {
    let b = block_of_len(coeffs.len())?;
    let mut out = vec![0.0; b * b];
    basis(b).inverse(coeffs, &mut out);
    out.iter_mut().for_each(|s| *s += 128.0);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantMatrix {
    block: usize,
    entries: Vec<u16>,
}

impl QuantMatrix {
    pub fn block(&self) -> usize {
        self.block
    }

    /// Row-major step sizes.
    pub fn entries(&self) -> &[u16] {
        &self.entries
    }

    pub fn step(&self, row: usize, col: usize) -> u16 {
        self.entries[row * self.block + col]
    }
}

/// libjpeg quality scaling of the Annex K tables; 4x4 tables take the even
/// rows and columns of the scaled 8x8 table.
pub fn quant_matrix_for(quality: u32, block: usize, plane: PlaneId) -> Result<QuantMatrix> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Quality(quality));
    }
    check_block(block)?;
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    let base = if plane.is_chroma() { &CHROMA_BASE } else { &LUMA_BASE };
    let scaled: Vec<u16> = base
        .iter()
        .map(|&e| ((e as u32 * scale + 50) / 100).clamp(1, 255) as u16)
        .collect();
    let stride = 8 / block;
    let entries = (0..block)
        .flat_map(|r| (0..block).map(move |c| (r, c)))
        .map(|(r, c)| scaled[r * stride * 8 + c * stride])
        .collect();
    Ok(QuantMatrix { block, entries })
}

/// `round(c / step)` with halves rounded away from zero.
pub fn quantize(coeffs: &[f64], qm: &QuantMatrix) -> Result<Vec<i32>> {
    if coeffs.len() != qm.entries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a {}x{} matrix",
            coeffs.len(),
            qm.block,
            qm.block
        )));
    }
    Ok(coeffs
        .iter()
        .zip(&qm.entries)
        .map(|(c, &s)| (c / s as f64).round() as i32)
        .collect())
}

pub fn dequantize(qblock: &[i32], qm: &QuantMatrix) -> Result<Vec<f64>> {
    if qblock.len() != qm.entries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} levels for a {}x{} matrix",
            qblock.len(),
            qm.block,
            qm.block
        )));
    }
    Ok(qblock
        .iter()
        .zip(&qm.entries)
        .map(|(&q, &s)| q as f64 * s as f64)
        .collect())
}

struct Zigzag {
    /// order[k] = (row, col)
    order: Vec<(usize, usize)>,
    /// index[row * B + col] = k
    index: Vec<usize>,
}

fn zigzag(block: usize) -> &'static Zigzag {
    static Z4: OnceLock<Zigzag> = OnceLock::new();
    static Z8: OnceLock<Zigzag> = OnceLock::new();
    let cell = if block == 4 { &Z4 } else { &Z8 };
    cell.get_or_init(|| {
        let mut order = Vec::with_capacity(block * block);
        for s in 0..(2 * block - 1) {
            let lo = s.saturating_sub(block - 1);
            let hi = s.min(block - 1);
            // odd anti-diagonals run down-left, even ones up-right
            if s % 2 == 1 {
                order.extend((lo..=hi).map(|r| (r, s - r)));
            } else {
                order.extend((lo..=hi).rev().map(|r| (r, s - r)));
            }
        }
        let mut index = vec![0; block * block];
        for (k, &(r, c)) in order.iter().enumerate() {
            index[r * block + c] = k;
        }
        Zigzag { order, index }
    })
}

pub fn zigzag_index(row: usize, col: usize, block: usize) -> Result<usize> {
    check_block(block)?;
    if row >= block || col >= block {
        return Err(Error::ZigzagRange { row, col, block });
    }
    Ok(zigzag(block).index[row * block + col])
}

pub fn zigzag_coords(k: usize, block: usize) -> Result<(usize, usize)> {
    check_block(block)?;
    zigzag(block)
        .order
        .get(k)
        .copied()
        .ok_or(Error::ZigzagRange {
            row: k / block,
            col: k % block,
            block,
        })
}

/// Quantized coefficients of one plane, block-raster order; each block is
/// stored row-major (natural order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffPlane {
    pub blocks_high: usize,
    pub blocks_wide: usize,
    pub block: usize,
    pub coeffs: Vec<i32>,
}

impl CoeffPlane {
    pub fn zeros(blocks_high: usize, blocks_wide: usize, block: usize) -> Self {
        Self {
            blocks_high,
            blocks_wide,
            block,
            coeffs: vec![0; blocks_high * blocks_wide * block * block],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks_high * self.blocks_wide
    }

    pub fn block_coeffs(&self, index: usize) -> &[i32] {
        let n = self.block * self.block;
        &self.coeffs[index * n..(index + 1) * n]
    }

    /// Coefficient at raster block `position`, natural-order offset `offset`.
    #[inline]
    pub fn get(&self, position: usize, offset: usize) -> i32 {
        self.coeffs[position * self.block * self.block + offset]
    }

    #[inline]
    pub fn set(&mut self, position: usize, offset: usize, value: i32) {
        let n = self.block * self.block;
        self.coeffs[position * n + offset] = value;
    }
}

/// The lossless quantized domain that sparse and dense forms round-trip through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedPlanes {
    pub config: CodecConfig,
    pub height: usize,
    pub width: usize,
    pub planes: [CoeffPlane; 3],
}

impl QuantizedPlanes {
    /// All-zero coefficients, which decode to flat mid-gray.
    pub fn zeros(config: CodecConfig, height: usize, width: usize) -> Result<Self> {
        config.check_dims(height, width)?;
        let b = config.block();
        let (ch, cw) = YuvPlanes::chroma_dims(height, width, config.chroma_downsampled());
        let luma = CoeffPlane::zeros(height / b, width / b, b);
        let chroma = CoeffPlane::zeros(ch / b, cw / b, b);
        Ok(Self {
            config,
            height,
            width,
            planes: [luma, chroma.clone(), chroma],
        })
    }

    pub fn plane(&self, id: PlaneId) -> &CoeffPlane {
        &self.planes[id.index()]
    }

    pub fn nonzero_count(&self) -> usize {
        self.planes
            .iter()
            .map(|p| p.coeffs.iter().filter(|&&c| c != 0).count())
            .sum()
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.config == other.config && self.height == other.height && self.width == other.width
    }
}

/// Result of [`encode_planes_counted`].
#[derive(Debug, Clone)]
pub struct Encoded {
    pub planes: QuantizedPlanes,
    /// Coefficients clamped to `[-MAX_COEFF, MAX_COEFF]`.
    pub saturated: usize,
}

pub fn encode_planes(planes: &YuvPlanes, config: CodecConfig) -> Result<QuantizedPlanes> {
    encode_planes_counted(planes, config).map(|e| e.planes)
}

pub fn encode_planes_counted(planes: &YuvPlanes, config: CodecConfig) -> Result<Encoded> {
    if planes.chroma_downsampled != config.chroma_downsampled() {
        return Err(Error::ConfigMismatch(
            "chroma subsampling of planes differs from codec config".into(),
        ));
    }
    let mut out = QuantizedPlanes::zeros(config, planes.height(), planes.width())?;
    let b = config.block();
    let basis = basis(b);
    let mut saturated = 0;
    let mut samples = vec![0.0; b * b];
    let mut coeffs = vec![0.0; b * b];
    for (id, src) in PlaneId::ALL.into_iter().zip([&planes.y, &planes.u, &planes.v]) {
        let qm = quant_matrix_for(config.quality(), b, id)?;
        let dst = &mut out.planes[id.index()];
        if src.height != dst.blocks_high * b || src.width != dst.blocks_wide * b {
            return Err(Error::DimensionMismatch(format!(
                "{id:?} plane is {}x{}",
                src.height, src.width
            )));
        }
        for by in 0..dst.blocks_high {
            for bx in 0..dst.blocks_wide {
                for r in 0..b {
                    for c in 0..b {
                        samples[r * b + c] = src.get(by * b + r, bx * b + c) as f64 - 128.0;
                    }
                }
                basis.forward(&samples, &mut coeffs);
                let pos = by * dst.blocks_wide + bx;
                for (off, (&x, &step)) in coeffs.iter().zip(qm.entries()).enumerate() {
                    let q = (x / step as f64).round() as i32;
                    if q.abs() > MAX_COEFF {
                        saturated += 1;
                    }
                    dst.set(pos, off, q.clamp(-MAX_COEFF, MAX_COEFF));
                }
            }
        }
    }
    Ok(Encoded {
        planes: out,
        saturated,
    })
}

pub fn decode_planes(qp: &QuantizedPlanes) -> Result<YuvPlanes> {
    let config = qp.config;
    config.check_dims(qp.height, qp.width)?;
    let b = config.block();
    let basis = basis(b);
    let mut coeffs = vec![0.0; b * b];
    let mut samples = vec![0.0; b * b];
    let mut out = Vec::with_capacity(3);
    for id in PlaneId::ALL {
        let qm = quant_matrix_for(config.quality(), b, id)?;
        let src = qp.plane(id);
        let (h, w) = (src.blocks_high * b, src.blocks_wide * b);
        let mut plane = Plane::filled(h, w, 0);
        for by in 0..src.blocks_high {
            for bx in 0..src.blocks_wide {
                let pos = by * src.blocks_wide + bx;
                for (off, c) in coeffs.iter_mut().enumerate() {
                    *c = src.get(pos, off) as f64 * qm.entries()[off] as f64;
                }
                basis.inverse(&coeffs, &mut samples);
                for r in 0..b {
                    for c in 0..b {
                        let v = (samples[r * b + c] + 128.0).round().clamp(0.0, 255.0) as u8;
                        plane.data[(by * b + r) * w + bx * b + c] = v;
                    }
                }
            }
        }
        out.push(plane);
    }
    let v = out.pop().unwrap();
    let u = out.pop().unwrap();
    let y = out.pop().unwrap();
    let planes = YuvPlanes {
        y,
        u,
        v,
        chroma_downsampled: config.chroma_downsampled(),
    };
    let (ch, cw) = YuvPlanes::chroma_dims(qp.height, qp.width, config.chroma_downsampled());
    if planes.y.height != qp.height || planes.u.height != ch || planes.u.width != cw {
        return Err(Error::DimensionMismatch("coefficient grids do not match frame size".into()));
    }
    Ok(planes)
}

/// RGB frame straight to the quantized domain.
pub fn encode_image(img: &RgbImage, config: CodecConfig) -> Result<QuantizedPlanes> {
    config.check_dims(img.height(), img.width())?;
    let planes = colorspace::rgb_to_yuv(img, config.chroma_downsampled())?;
    encode_planes(&planes, config)
}

pub fn decode_image(qp: &QuantizedPlanes) -> Result<RgbImage> {
    colorspace::yuv_to_rgb(&decode_planes(qp)?)
}
