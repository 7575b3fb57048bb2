//! Laplace-smoothed count model that fills the predictor seam without any
//! learned weights.
//!
//! * channel given the previous channel (bigram), backing off to the channel
//!   unigram when the previous channel was never seen;
//! * position given channel, as the raster step past the previous position
//!   in the same channel (taken modulo the grid so every position keeps mass);
//! * value given channel.

use std::path::Path;

use rayon::prelude::*;

use super::{value_bin, Predictor, Query, VALUE_BINS};
use crate::blockdct::MAX_COEFF;
use crate::sparse::{Geometry, SparseElement, SparseSequence};
use crate::store::{self, VarReader, VarWriter};
use crate::{Error, Result};

pub const PREDICTOR_MAGIC: &[u8; 4] = b"DCTP";
pub const PREDICTOR_VERSION: u8 = 1;

/// Raw count tables; merging is plain addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineCounts {
    geometry: Geometry,
    /// `(num_channels + 1) x channel_vocab`; the last row is the sequence start.
    channel_bigram: Vec<u64>,
    channel_unigram: Vec<u64>,
    positions: Vec<Vec<u64>>,
    values: Vec<Vec<u64>>,
}

impl BaselineCounts {
    pub fn new(geometry: Geometry) -> Self {
        let n = geometry.num_channels();
        let vocab = geometry.channel_vocab();
        Self {
            geometry,
            channel_bigram: vec![0; (n + 1) * vocab],
            channel_unigram: vec![0; vocab],
            positions: (0..n as u32).map(|c| vec![0; geometry.grid_size(c)]).collect(),
            values: vec![vec![0; VALUE_BINS]; n],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn start_row(&self) -> usize {
        self.geometry.num_channels()
    }

    pub fn observe(&mut self, seq: &SparseSequence) -> Result<()> {
        if seq.geometry != self.geometry {
            return Err(Error::ConfigMismatch(
                "corpus mixes frame geometries or codec settings".into(),
            ));
        }
        seq.validate()?;
        let vocab = self.geometry.channel_vocab();
        let mut row = self.start_row();
        let mut prev: Option<&SparseElement> = None;
        for el in &seq.elements {
            let c = el.channel as usize;
            self.channel_bigram[row * vocab + c] += 1;
            self.channel_unigram[c] += 1;
            if !el.is_eos(&self.geometry) {
                let delta = position_delta(prev, el.channel, el.position, self.geometry.grid_size(el.channel));
                self.positions[c][delta] += 1;
                self.values[c][value_bin(el.value)] += 1;
                row = c;
            }
            prev = Some(el);
        }
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if self.geometry != other.geometry {
            return Err(Error::ConfigMismatch("cannot merge counts of different geometries".into()));
        }
        add(&mut self.channel_bigram, &other.channel_bigram);
        add(&mut self.channel_unigram, &other.channel_unigram);
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            add(a, b);
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            add(a, b);
        }
        Ok(self)
    }

    fn tables(&self) -> impl Iterator<Item = &Vec<u64>> {
        [&self.channel_bigram, &self.channel_unigram]
            .into_iter()
            .chain(&self.positions)
            .chain(&self.values)
    }

    fn tables_mut(&mut self) -> impl Iterator<Item = &mut Vec<u64>> {
        [&mut self.channel_bigram, &mut self.channel_unigram]
            .into_iter()
            .chain(&mut self.positions)
            .chain(&mut self.values)
    }
}

fn add(a: &mut [u64], b: &[u64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Raster step from the previous position in the same channel, mod grid.
fn position_delta(prev: Option<&SparseElement>, channel: u32, position: u32, grid: usize) -> usize {
    let base = match prev {
        Some(p) if p.channel == channel => p.position as usize + 1,
        _ => 0,
    };
    (position as usize + grid - base % grid) % grid
}

#[derive(Debug, Clone)]
pub struct BaselinePredictor {
    counts: BaselineCounts,
    alpha: f64,
    bigram_totals: Vec<u64>,
    unigram_total: u64,
    position_totals: Vec<u64>,
    value_totals: Vec<u64>,
}

impl BaselinePredictor {
    pub fn from_counts(counts: BaselineCounts, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing alpha must be > 0, got {alpha}")));
        }
        let vocab = counts.geometry.channel_vocab();
        let bigram_totals = counts.channel_bigram.chunks(vocab).map(|r| r.iter().sum()).collect();
        let unigram_total = counts.channel_unigram.iter().sum();
        let position_totals = counts.positions.iter().map(|t| t.iter().sum()).collect();
        let value_totals = counts.values.iter().map(|t| t.iter().sum()).collect();
        Ok(Self {
            counts,
            alpha,
            bigram_totals,
            unigram_total,
            position_totals,
            value_totals,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn geometry(&self) -> &Geometry {
        &self.counts.geometry
    }

    pub fn counts(&self) -> &BaselineCounts {
        &self.counts
    }

    fn check(&self, query: &Query) {
        debug_assert_eq!(
            query.geometry(),
            &self.counts.geometry,
            "baseline queried with a foreign geometry"
        );
    }

    fn row(&self, prefix: &[SparseElement]) -> usize {
        match prefix.last() {
            Some(el) if (el.channel as usize) < self.counts.geometry.num_channels() => el.channel as usize,
            _ => self.counts.start_row(),
        }
    }

    fn channel_p(&self, row: usize, channel: usize) -> f64 {
        let vocab = self.counts.geometry.channel_vocab();
        let denom_extra = self.alpha * vocab as f64;
        if self.bigram_totals[row] > 0 {
            (self.counts.channel_bigram[row * vocab + channel] as f64 + self.alpha)
                / (self.bigram_totals[row] as f64 + denom_extra)
        } else {
            (self.counts.channel_unigram[channel] as f64 + self.alpha) / (self.unigram_total as f64 + denom_extra)
        }
    }

    fn position_p(&self, channel: usize, delta: usize) -> f64 {
        let grid = self.counts.positions[channel].len();
        (self.counts.positions[channel][delta] as f64 + self.alpha)
            / (self.position_totals[channel] as f64 + self.alpha * grid as f64)
    }

    fn value_p(&self, channel: usize, bin: usize) -> f64 {
        if bin == value_bin(0) {
            return 0.0;
        }
        (self.counts.values[channel][bin] as f64 + self.alpha)
            / (self.value_totals[channel] as f64 + self.alpha * (VALUE_BINS - 1) as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = VarWriter::new();
        w.bytes(PREDICTOR_MAGIC);
        w.bytes(&[PREDICTOR_VERSION]);
        store::write_geometry(&mut w, &self.counts.geometry, false)?;
        w.bytes(&self.alpha.to_le_bytes());
        for table in self.counts.tables() {
            let nnz = table.iter().filter(|&&c| c != 0).count();
            w.uvar(nnz as u64);
            let mut next = 0;
            for (i, &c) in table.iter().enumerate().filter(|(_, &c)| c != 0) {
                w.uvar((i - next) as u64);
                w.uvar(c);
                next = i + 1;
            }
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = VarReader::new(bytes);
        if r.take(4)? != PREDICTOR_MAGIC {
            return Err(Error::format("bad predictor magic"));
        }
        let version = r.u8()?;
        if version != PREDICTOR_VERSION {
            return Err(Error::format(format!("unsupported predictor version {version}")));
        }
        let (geometry, _) = store::read_geometry(&mut r)?;
        let alpha = r.f64_le()?;
        let mut counts = BaselineCounts::new(geometry);
        for table in counts.tables_mut() {
            let nnz = r.uvar()? as usize;
            if nnz > table.len() {
                return Err(Error::format("table holds more entries than slots"));
            }
            let mut next = 0usize;
            for _ in 0..nnz {
                let gap = usize::try_from(r.uvar()?).map_err(|_| Error::format("index gap overflow"))?;
                let i = next
                    .checked_add(gap)
                    .filter(|&i| i < table.len())
                    .ok_or_else(|| Error::format("table index out of range"))?;
                let c = r.uvar()?;
                if c == 0 {
                    return Err(Error::format("explicit zero count"));
                }
                table[i] = c;
                next = i + 1;
            }
        }
        r.finish()?;
        if counts.values.iter().any(|t| t[value_bin(0)] != 0) {
            return Err(Error::format("count recorded for value zero"));
        }
        Self::from_counts(counts, alpha)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        store::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

impl Predictor for BaselinePredictor {
    fn channel_probs(&self, query: &Query) -> Vec<f64> {
        self.check(query);
        let row = self.row(query.prefix);
        (0..self.counts.geometry.channel_vocab())
            .map(|c| self.channel_p(row, c))
            .collect()
    }

    fn position_probs(&self, query: &Query, channel: u32) -> Vec<f64> {
        self.check(query);
        let grid = self.counts.geometry.grid_size(channel);
        let prev = query.prefix.last();
        (0..grid as u32)
            .map(|p| self.position_p(channel as usize, position_delta(prev, channel, p, grid)))
            .collect()
    }

    fn value_probs(&self, query: &Query, channel: u32, _position: u32) -> Vec<f64> {
        self.check(query);
        (0..VALUE_BINS).map(|b| self.value_p(channel as usize, b)).collect()
    }

    fn channel_prob(&self, query: &Query, channel: u32) -> f64 {
        if channel as usize >= self.counts.geometry.channel_vocab() {
            return 0.0;
        }
        self.channel_p(self.row(query.prefix), channel as usize)
    }

    fn position_prob(&self, query: &Query, channel: u32, position: u32) -> f64 {
        let grid = self.counts.geometry.grid_size(channel);
        if position as usize >= grid {
            return 0.0;
        }
        let delta = position_delta(query.prefix.last(), channel, position, grid);
        self.position_p(channel as usize, delta)
    }

    fn value_prob(&self, _query: &Query, channel: u32, _position: u32, value: i32) -> f64 {
        if channel as usize >= self.counts.geometry.num_channels() || value.abs() > MAX_COEFF {
            return 0.0;
        }
        self.value_p(channel as usize, value_bin(value))
    }
}

/// Counts a corpus in parallel and merges the tables.
pub fn train_baseline(corpus: &[SparseSequence], alpha: f64) -> Result<BaselinePredictor> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing alpha must be > 0, got {alpha}")));
    }
    let geometry = corpus.first().ok_or(Error::EmptySequence)?.geometry;
    let counts = corpus
        .par_iter()
        .try_fold(
            || BaselineCounts::new(geometry),
            |mut acc, seq| {
                acc.observe(seq)?;
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(|| BaselineCounts::new(geometry), |a, b| a.merge(&b))?;
    BaselinePredictor::from_counts(counts, alpha)
}
