//! The ordered sparse token list `[(channel, position, value)]`, residual
//! coding against a previous frame, and dense partial DCT images.
//!
//! Channels run frequency-major with the three planes interleaved:
//! `channel = 3 * zigzag + plane`. Channel `3B^2` is the end-of-sequence
//! symbol. Positions are raster block indices within the channel's own
//! plane grid.

use crate::blockdct::{self, CodecConfig, PlaneId, QuantizedPlanes, MAX_COEFF};
use crate::colorspace::YuvPlanes;
use crate::{Error, Result};

/// Frame geometry shared by every sequence of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub config: CodecConfig,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn new(config: CodecConfig, height: usize, width: usize) -> Result<Self> {
        config.check_dims(height, width)?;
        Ok(Self {
            config,
            height,
            width,
        })
    }

    pub fn of(qp: &QuantizedPlanes) -> Self {
        Self {
            config: qp.config,
            height: qp.height,
            width: qp.width,
        }
    }

    pub fn block(&self) -> usize {
        self.config.block()
    }

    /// Number of coefficient channels, excluding end-of-sequence.
    pub fn num_channels(&self) -> usize {
        3 * self.block() * self.block()
    }

    pub fn eos_channel(&self) -> u32 {
        self.num_channels() as u32
    }

    /// Size of the channel vocabulary including end-of-sequence.
    pub fn channel_vocab(&self) -> usize {
        self.num_channels() + 1
    }

    /// Block grid `(rows, cols)` of a plane.
    pub fn plane_grid(&self, plane: PlaneId) -> (usize, usize) {
        let b = self.block();
        if plane.is_chroma() {
            let (h, w) = YuvPlanes::chroma_dims(self.height, self.width, self.config.chroma_downsampled());
            (h / b, w / b)
        } else {
            (self.height / b, self.width / b)
        }
    }

    /// Number of positions in a channel; zero for end-of-sequence.
    pub fn grid_size(&self, channel: u32) -> usize {
        match channel_parts(channel, self.block()) {
            Some((plane, _)) => {
                let (r, c) = self.plane_grid(plane);
                r * c
            }
            None => 0,
        }
    }

    pub fn max_grid_size(&self) -> usize {
        let (r, c) = self.plane_grid(PlaneId::Y);
        r * c
    }
}

pub fn channel_of(plane: PlaneId, zigzag: usize) -> u32 {
    (3 * zigzag + plane.index()) as u32
}

/// Inverse of [`channel_of`]; `None` for end-of-sequence or beyond.
pub fn channel_parts(channel: u32, block: usize) -> Option<(PlaneId, usize)> {
    let c = channel as usize;
    if c >= 3 * block * block {
        return None;
    }
    Some((PlaneId::from_index(c % 3)?, c / 3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SparseElement {
    pub channel: u32,
    pub position: u32,
    pub value: i32,
}

impl SparseElement {
    pub fn new(channel: u32, position: u32, value: i32) -> Self {
        Self {
            channel,
            position,
            value,
        }
    }

    pub fn eos(geometry: &Geometry) -> Self {
        Self::new(geometry.eos_channel(), 0, 0)
    }

    pub fn is_eos(&self, geometry: &Geometry) -> bool {
        self.channel == geometry.eos_channel()
    }

    pub fn key(&self) -> (u32, u32) {
        (self.channel, self.position)
    }
}

fn check_body_element(el: &SparseElement, index: usize, geometry: &Geometry) -> Result<()> {
    let invalid = |reason: String| Error::InvalidElement { index, reason };
    if el.channel >= geometry.eos_channel() {
        return Err(invalid(format!("channel {} is not a coefficient channel", el.channel)));
    }
    let grid = geometry.grid_size(el.channel);
    if el.position as usize >= grid {
        return Err(invalid(format!("position {} outside grid of {grid}", el.position)));
    }
    if el.value == 0 || el.value.abs() > MAX_COEFF {
        return Err(invalid(format!("value {} outside ±[1, {MAX_COEFF}]", el.value)));
    }
    Ok(())
}

/// Checks that `elements` is a valid ordered prefix with no end-of-sequence.
pub fn check_prefix(elements: &[SparseElement], geometry: &Geometry) -> Result<()> {
    for (i, el) in elements.iter().enumerate() {
        check_body_element(el, i, geometry)?;
        if i > 0 {
            let prev = elements[i - 1].key();
            if prev == el.key() {
                return Err(Error::DuplicateSlot {
                    channel: el.channel,
                    position: el.position,
                });
            }
            if prev > el.key() {
                return Err(Error::Unordered { index: i });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseSequence {
    pub geometry: Geometry,
    pub residual: bool,
    pub elements: Vec<SparseElement>,
}

impl SparseSequence {
    /// Builds a sequence and checks every invariant.
    pub fn new(geometry: Geometry, residual: bool, elements: Vec<SparseElement>) -> Result<Self> {
        let seq = Self {
            geometry,
            residual,
            elements,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// The one-element `[EOS]` sequence.
    pub fn empty(geometry: Geometry, residual: bool) -> Self {
        Self {
            geometry,
            residual,
            elements: vec![SparseElement::eos(&geometry)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (last, body) = self.elements.split_last().ok_or(Error::EmptySequence)?;
        if *last != SparseElement::eos(&self.geometry) {
            return Err(Error::InvalidElement {
                index: self.elements.len() - 1,
                reason: "sequence does not end with end-of-sequence".into(),
            });
        }
        check_prefix(body, &self.geometry)
    }

    /// Length including the terminator.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Elements before the terminator.
    pub fn body(&self) -> &[SparseElement] {
        match self.elements.last() {
            Some(el) if el.is_eos(&self.geometry) => &self.elements[..self.elements.len() - 1],
            _ => &self.elements,
        }
    }
}

/// Natural-order offset within a block for channel `c`.
fn channel_offset(channel: u32, block: usize) -> Option<(PlaneId, usize)> {
    let (plane, k) = channel_parts(channel, block)?;
    let (r, c) = blockdct::zigzag_coords(k, block).ok()?;
    Some((plane, r * block + c))
}

fn emit(
    geometry: Geometry,
    residual: bool,
    mut value_at: impl FnMut(PlaneId, usize, usize) -> i32,
) -> (SparseSequence, usize) {
    let b = geometry.block();
    let mut elements = Vec::new();
    let mut saturated = 0;
    for c in 0..geometry.eos_channel() {
        let (plane, offset) = channel_offset(c, b).expect("coefficient channel");
        for p in 0..geometry.grid_size(c) {
            let v = value_at(plane, p, offset);
            if v != 0 {
                if v.abs() > MAX_COEFF {
                    saturated += 1;
                }
                elements.push(SparseElement::new(c, p as u32, v.clamp(-MAX_COEFF, MAX_COEFF)));
            }
        }
    }
    elements.push(SparseElement::eos(&geometry));
    (
        SparseSequence {
            geometry,
            residual,
            elements,
        },
        saturated,
    )
}

/// Every nonzero coefficient in `(channel, position)` order, then EOS.
pub fn to_sparse(qp: &QuantizedPlanes) -> SparseSequence {
    emit(Geometry::of(qp), false, |plane, p, off| qp.plane(plane).get(p, off)).0
}

/// Scatters a sequence back into coefficient planes. Residual sequences add
/// onto a copy of `previous`.
pub fn from_sparse(seq: &SparseSequence, previous: Option<&QuantizedPlanes>) -> Result<QuantizedPlanes> {
    let geometry = seq.geometry;
    let mut out = if seq.residual {
        let prev = previous.ok_or(Error::MissingPrevious)?;
        if Geometry::of(prev) != geometry {
            return Err(Error::ConfigMismatch(
                "previous frame geometry differs from the residual sequence".into(),
            ));
        }
        prev.clone()
    } else {
        QuantizedPlanes::zeros(geometry.config, geometry.height, geometry.width)?
    };
    let b = geometry.block();
    let mut seen = vec![false; geometry.num_channels() * geometry.max_grid_size()];
    let mut terminated = false;
    for (i, el) in seq.elements.iter().enumerate() {
        if terminated {
            return Err(Error::InvalidElement {
                index: i,
                reason: "element after end-of-sequence".into(),
            });
        }
        if el.is_eos(&geometry) {
            terminated = true;
            continue;
        }
        check_body_element(el, i, &geometry)?;
        let slot = el.channel as usize * geometry.max_grid_size() + el.position as usize;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::DuplicateSlot {
                channel: el.channel,
                position: el.position,
            });
        }
        let (plane, offset) = channel_offset(el.channel, b).expect("checked channel");
        let dst = &mut out.planes[plane.index()];
        let base = if seq.residual { dst.get(el.position as usize, offset) } else { 0 };
        dst.set(
            el.position as usize,
            offset,
            (base + el.value).clamp(-MAX_COEFF, MAX_COEFF),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Residual {
    pub sequence: SparseSequence,
    /// Differences clamped to `[-MAX_COEFF, MAX_COEFF]`.
    pub saturated: usize,
}

/// Co-located coefficient differences `current - previous`, in the same
/// order as [`to_sparse`].
pub fn residual_encode(current: &QuantizedPlanes, previous: &QuantizedPlanes) -> Result<Residual> {
    if !current.same_geometry(previous) {
        return Err(Error::ConfigMismatch(format!(
            "current {:?} {}x{} vs previous {:?} {}x{}",
            current.config, current.height, current.width, previous.config, previous.height, previous.width
        )));
    }
    let (sequence, saturated) = emit(Geometry::of(current), true, |plane, p, off| {
        current.plane(plane).get(p, off) - previous.plane(plane).get(p, off)
    });
    Ok(Residual {
        sequence,
        saturated,
    })
}

pub fn residual_decode(seq: &SparseSequence, previous: &QuantizedPlanes) -> Result<QuantizedPlanes> {
    from_sparse(seq, Some(previous))
}

/// Dense `(H/B) x (W/B) x 3B^2` array with an occupancy mask, built from a
/// (possibly partial) token prefix. Layout is row, column, channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DctImage {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub values: Vec<i32>,
    pub occupancy: Vec<u8>,
    geometry: Geometry,
    last_key: Option<(u32, u32)>,
}

impl DctImage {
    pub fn empty(geometry: Geometry) -> Self {
        let (rows, cols) = geometry.plane_grid(PlaneId::Y);
        let channels = geometry.num_channels();
        Self {
            rows,
            cols,
            channels,
            values: vec![0; rows * cols * channels],
            occupancy: vec![0; rows * cols * channels],
            geometry,
            last_key: None,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Flat index of `(channel, position)`; chroma grids of subsampled
    /// configurations sit in the top-left corner.
    pub fn slot(&self, channel: u32, position: u32) -> Option<usize> {
        let (plane, _) = channel_parts(channel, self.geometry.block())?;
        let (_, gw) = self.geometry.plane_grid(plane);
        if position as usize >= self.geometry.grid_size(channel) {
            return None;
        }
        let (r, c) = (position as usize / gw, position as usize % gw);
        Some((r * self.cols + c) * self.channels + channel as usize)
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> (i32, bool) {
        let i = (row * self.cols + col) * self.channels + channel;
        (self.values[i], self.occupancy[i] != 0)
    }

    /// Appends the next prefix element; keys must keep increasing.
    pub fn push(&mut self, el: &SparseElement, index: usize) -> Result<()> {
        check_body_element(el, index, &self.geometry)?;
        if let Some(last) = self.last_key {
            if last == el.key() {
                return Err(Error::DuplicateSlot {
                    channel: el.channel,
                    position: el.position,
                });
            }
            if last > el.key() {
                return Err(Error::Unordered { index });
            }
        }
        let slot = self.slot(el.channel, el.position).expect("checked element");
        self.values[slot] = el.value;
        self.occupancy[slot] = 1;
        self.last_key = Some(el.key());
        Ok(())
    }

    pub fn occupied(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o != 0).count()
    }
}

pub fn scatter_partial(prefix: &[SparseElement], geometry: Geometry) -> Result<DctImage> {
    let mut img = DctImage::empty(geometry);
    for (i, el) in prefix.iter().enumerate() {
        img.push(el, i)?;
    }
    Ok(img)
}
