//! Autoregressive likelihood and sampling over sparse token sequences.
//!
//! Each element factorizes as `p(c | d<l) p(p | c, d<l) p(v | c, p, d<l)`.
//! Anything that can produce those three categoricals implements
//! [`Predictor`]; [`nll`] scores a sequence chunk by chunk with the true
//! prefix and [`sample_sequence`] draws ancestral samples with ordering
//! constraints enforced by masking.

mod baseline;

pub use baseline::{train_baseline, BaselineCounts, BaselinePredictor};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blockdct::MAX_COEFF;
use crate::sparse::{DctImage, Geometry, SparseElement, SparseSequence};
use crate::tasks::Annotation;
use crate::{Error, Result};

/// Value vocabulary `-MAX_COEFF..=MAX_COEFF`; the zero bin never carries mass.
pub const VALUE_BINS: usize = 2 * MAX_COEFF as usize + 1;

/// Default target chunk length.
pub const DEFAULT_CHUNK: usize = 256;

#[inline]
pub fn value_bin(value: i32) -> usize {
    (value + MAX_COEFF) as usize
}

#[inline]
pub fn bin_value(bin: usize) -> i32 {
    bin as i32 - MAX_COEFF
}

/// A conditioning frame handed to the predictor.
#[derive(Debug, Clone)]
pub struct ContextFrame {
    pub image: DctImage,
    pub annotation: Annotation,
    pub padding: bool,
}

#[derive(Debug, Clone)]
pub struct PredictorContext {
    pub geometry: Geometry,
    /// Whether the target tokens are residuals.
    pub residual: bool,
    pub frames: Vec<ContextFrame>,
    pub target: Option<Annotation>,
}

impl PredictorContext {
    /// No context frames and no target annotation.
    pub fn unconditional(geometry: Geometry, residual: bool) -> Self {
        Self {
            geometry,
            residual,
            frames: Vec::new(),
            target: None,
        }
    }
}

/// Everything a predictor may condition on for the next element.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub context: &'a PredictorContext,
    /// All elements before the one being predicted.
    pub prefix: &'a [SparseElement],
    /// Dense image of the prefix observed by the encoder. During chunked
    /// scoring this covers only the elements before the current chunk.
    pub partial: &'a DctImage,
}

impl Query<'_> {
    pub fn geometry(&self) -> &Geometry {
        &self.context.geometry
    }
}

/// The three conditional categoricals for one element.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorDistributions {
    pub channel_probs: Vec<f64>,
    pub position_probs: Vec<f64>,
    pub value_probs: Vec<f64>,
}

impl PredictorDistributions {
    /// Shapes, non-negativity and unit mass within `1e-9`. Position and
    /// value heads are not checked for end-of-sequence.
    pub fn validate(&self, geometry: &Geometry, channel: u32) -> Result<()> {
        let mut heads = vec![("channel", &self.channel_probs, geometry.channel_vocab())];
        if channel != geometry.eos_channel() {
            heads.push(("position", &self.position_probs, geometry.grid_size(channel)));
            heads.push(("value", &self.value_probs, VALUE_BINS));
        }
        for (factor, probs, expected) in heads {
            check_distribution(probs, expected, factor)?;
        }
        if channel != geometry.eos_channel() && self.value_probs[value_bin(0)] != 0.0 {
            return Err(Error::InvalidArgument("value head puts mass on zero".into()));
        }
        Ok(())
    }
}

fn check_distribution(probs: &[f64], expected: usize, factor: &'static str) -> Result<()> {
    if probs.len() != expected {
        return Err(Error::DistributionShape {
            factor,
            expected,
            actual: probs.len(),
        });
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(format!("{factor} head has a negative or non-finite entry")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{factor} head sums to {total}")));
    }
    Ok(())
}

/// Source of the three factor distributions.
///
/// The point-probability methods default to indexing the full vectors;
/// implementations with cheap closed forms should override them, since
/// [`nll`] only calls those.
pub trait Predictor: Sync {
    /// Over `geometry.channel_vocab()` symbols, end-of-sequence last.
    fn channel_probs(&self, query: &Query) -> Vec<f64>;

    /// Over the channel's grid positions.
    fn position_probs(&self, query: &Query, channel: u32) -> Vec<f64>;

    /// Over [`VALUE_BINS`] value bins; see [`value_bin`].
    fn value_probs(&self, query: &Query, channel: u32, position: u32) -> Vec<f64>;

    fn channel_prob(&self, query: &Query, channel: u32) -> f64 {
        self.channel_probs(query).get(channel as usize).copied().unwrap_or(0.0)
    }

    fn position_prob(&self, query: &Query, channel: u32, position: u32) -> f64 {
        self.position_probs(query, channel)
            .get(position as usize)
            .copied()
            .unwrap_or(0.0)
    }

    fn value_prob(&self, query: &Query, channel: u32, position: u32, value: i32) -> f64 {
        if value.abs() > MAX_COEFF {
            return 0.0;
        }
        self.value_probs(query, channel, position)[value_bin(value)]
    }

    fn distributions(&self, query: &Query, channel: u32, position: u32) -> PredictorDistributions {
        let eos = channel == query.geometry().eos_channel();
        PredictorDistributions {
            channel_probs: self.channel_probs(query),
            position_probs: if eos { Vec::new() } else { self.position_probs(query, channel) },
            value_probs: if eos { Vec::new() } else { self.value_probs(query, channel, position) },
        }
    }
}

/// Uniform over every symbol; the value head is uniform over nonzero values.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPredictor;

impl Predictor for UniformPredictor {
    fn channel_probs(&self, query: &Query) -> Vec<f64> {
        let n = query.geometry().channel_vocab();
        vec![1.0 / n as f64; n]
    }

    fn position_probs(&self, query: &Query, channel: u32) -> Vec<f64> {
        let n = query.geometry().grid_size(channel);
        vec![1.0 / n as f64; n]
    }

    fn value_probs(&self, _query: &Query, _channel: u32, _position: u32) -> Vec<f64> {
        let mut v = vec![1.0 / (VALUE_BINS - 1) as f64; VALUE_BINS];
        v[value_bin(0)] = 0.0;
        v
    }

    fn channel_prob(&self, query: &Query, channel: u32) -> f64 {
        if (channel as usize) < query.geometry().channel_vocab() {
            1.0 / query.geometry().channel_vocab() as f64
        } else {
            0.0
        }
    }

    fn position_prob(&self, query: &Query, channel: u32, position: u32) -> f64 {
        let n = query.geometry().grid_size(channel);
        if (position as usize) < n {
            1.0 / n as f64
        } else {
            0.0
        }
    }

    fn value_prob(&self, _query: &Query, _channel: u32, _position: u32, value: i32) -> f64 {
        if value == 0 || value.abs() > MAX_COEFF {
            0.0
        } else {
            1.0 / (VALUE_BINS - 1) as f64
        }
    }
}

/// A target slice `[start, start + len)`; the prefix `[0, start)` conditions it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub elements: Vec<SparseElement>,
}

/// Picks a training chunk uniformly; overruns are padded with end-of-sequence.
pub fn select_chunk(seq: &SparseSequence, chunk_len: usize, seed: u64) -> Result<Chunk> {
    if chunk_len == 0 {
        return Err(Error::InvalidArgument("chunk length must be at least 1".into()));
    }
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let l = seq.len();
    let starts = (l + 1).saturating_sub(chunk_len).max(1);
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..starts);
    let eos = SparseElement::eos(&seq.geometry);
    let elements = (start..start + chunk_len)
        .map(|i| seq.elements.get(i).copied().unwrap_or(eos))
        .collect();
    Ok(Chunk { start, elements })
}

/// Negative log-likelihood in nats, split by factor.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllReport {
    pub channel: f64,
    pub position: f64,
    pub value: f64,
    pub elements: usize,
}

impl NllReport {
    pub fn total(&self) -> f64 {
        self.channel + self.position + self.value
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            channel: self.channel + other.channel,
            position: self.position + other.position,
            value: self.value + other.value,
            elements: self.elements + other.elements,
        }
    }
}

fn neg_log(p: f64, index: usize, factor: &'static str) -> Result<f64> {
    if p > 0.0 && p.is_finite() {
        Ok(-p.ln())
    } else {
        Err(Error::ZeroProbability { index, factor })
    }
}

/// Scores a whole sequence, chunk by chunk with the true prefix.
/// End-of-sequence contributes only its channel term.
pub fn nll(
    seq: &SparseSequence,
    predictor: &dyn Predictor,
    context: &PredictorContext,
    chunk_len: usize,
) -> Result<NllReport> {
    if chunk_len == 0 {
        return Err(Error::InvalidArgument("chunk length must be at least 1".into()));
    }
    if context.geometry != seq.geometry {
        return Err(Error::ConfigMismatch("context geometry differs from the sequence".into()));
    }
    let geometry = seq.geometry;
    let els = &seq.elements;
    let mut partial = DctImage::empty(geometry);
    let mut report = NllReport::default();
    for start in (0..els.len()).step_by(chunk_len) {
        let end = (start + chunk_len).min(els.len());
        let mut chunk = NllReport::default();
        for (l, el) in els.iter().enumerate().take(end).skip(start) {
            let q = Query {
                context,
                prefix: &els[..l],
                partial: &partial,
            };
            chunk.channel += neg_log(predictor.channel_prob(&q, el.channel), l, "channel")?;
            if !el.is_eos(&geometry) {
                chunk.position += neg_log(predictor.position_prob(&q, el.channel, el.position), l, "position")?;
                chunk.value += neg_log(predictor.value_prob(&q, el.channel, el.position, el.value), l, "value")?;
            }
            chunk.elements += 1;
        }
        report = report.merge(chunk);
        for (i, el) in els[start..end].iter().enumerate() {
            if !el.is_eos(&geometry) {
                partial.push(el, start + i)?;
            }
        }
    }
    Ok(report)
}

/// Total NLL in bits divided by `height * width * 3`.
pub fn bits_per_dimension(total_nats: f64, height: usize, width: usize) -> f64 {
    total_nats / std::f64::consts::LN_2 / (height * width * 3) as f64
}

/// Sampling controls. A temperature of zero selects greedy decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub temperature: f64,
    /// Upper bound on the sequence length, terminator included.
    pub max_len: usize,
    pub seed: u64,
}

/// Zeroes out channels that would break the `(channel, position)` order or
/// have no free position left.
fn mask_channels(probs: &mut [f64], prefix: &[SparseElement], geometry: &Geometry) {
    let Some(last) = prefix.last() else { return };
    for (c, p) in probs.iter_mut().enumerate().take(geometry.num_channels()) {
        let c = c as u32;
        let blocked = c < last.channel
            || (c == last.channel && last.position as usize + 1 >= geometry.grid_size(c));
        if blocked {
            *p = 0.0;
        }
    }
}

fn mask_positions(probs: &mut [f64], prefix: &[SparseElement], channel: u32) {
    if let Some(last) = prefix.last().filter(|l| l.channel == channel) {
        let upto = (last.position as usize + 1).min(probs.len());
        probs[..upto].iter_mut().for_each(|p| *p = 0.0);
    }
}

/// Applies the temperature and renormalizes; `None` when no mass remains.
fn tempered(probs: &[f64], temperature: f64) -> Option<Vec<f64>> {
    let max = probs.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return None;
    }
    let w: Vec<f64> = if temperature == 1.0 {
        probs.to_vec()
    } else {
        let lmax = max.ln();
        probs
            .iter()
            .map(|&p| if p > 0.0 { ((p.ln() - lmax) / temperature).exp() } else { 0.0 })
            .collect()
    };
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|x| x / total).collect())
}

fn draw(
    probs: &[f64],
    temperature: f64,
    rng: &mut ChaCha8Rng,
    step: usize,
    factor: &'static str,
) -> Result<usize> {
    if temperature == 0.0 {
        // first maximum wins ties
        let mut best: Option<(usize, f64)> = None;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        return best.map(|(i, _)| i).ok_or(Error::EmptyMass { step, factor });
    }
    let w = tempered(probs, temperature).ok_or(Error::EmptyMass { step, factor })?;
    let dist = WeightedIndex::new(&w).map_err(|_| Error::EmptyMass { step, factor })?;
    Ok(dist.sample(rng))
}

fn checked(probs: Vec<f64>, expected: usize, factor: &'static str) -> Result<Vec<f64>> {
    if probs.len() != expected {
        return Err(Error::DistributionShape {
            factor,
            expected,
            actual: probs.len(),
        });
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{factor} head has a negative or non-finite entry"
        )));
    }
    Ok(probs)
}

/// Masked conditionals for the next element given `prefix`.
struct Masked;

impl Masked {
    fn channel(p: &dyn Predictor, q: &Query) -> Result<Vec<f64>> {
        let g = q.geometry();
        let mut probs = checked(p.channel_probs(q), g.channel_vocab(), "channel")?;
        mask_channels(&mut probs, q.prefix, g);
        Ok(probs)
    }

    fn position(p: &dyn Predictor, q: &Query, channel: u32) -> Result<Vec<f64>> {
        let mut probs = checked(p.position_probs(q, channel), q.geometry().grid_size(channel), "position")?;
        mask_positions(&mut probs, q.prefix, channel);
        Ok(probs)
    }

    fn value(p: &dyn Predictor, q: &Query, channel: u32, position: u32) -> Result<Vec<f64>> {
        let mut probs = checked(p.value_probs(q, channel, position), VALUE_BINS, "value")?;
        probs[value_bin(0)] = 0.0;
        Ok(probs)
    }
}

/// Ancestral sampling channel, then position, then value. Every partial
/// output is a valid ordered prefix, so the result always decodes.
pub fn sample_sequence(
    predictor: &dyn Predictor,
    context: &PredictorContext,
    opts: &SampleOptions,
) -> Result<SparseSequence> {
    if !(opts.temperature >= 0.0 && opts.temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {} must be >= 0", opts.temperature)));
    }
    if opts.max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let geometry = context.geometry;
    let eos = SparseElement::eos(&geometry);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut elements: Vec<SparseElement> = Vec::new();
    let mut partial = DctImage::empty(geometry);
    while elements.len() + 1 < opts.max_len {
        let step = elements.len();
        let q = Query {
            context,
            prefix: &elements,
            partial: &partial,
        };
        let channel = draw(&Masked::channel(predictor, &q)?, opts.temperature, &mut rng, step, "channel")? as u32;
        if channel == geometry.eos_channel() {
            break;
        }
        let position = draw(&Masked::position(predictor, &q, channel)?, opts.temperature, &mut rng, step, "position")? as u32;
        let bin = draw(&Masked::value(predictor, &q, channel, position)?, opts.temperature, &mut rng, step, "value")?;
        let el = SparseElement::new(channel, position, bin_value(bin));
        partial.push(&el, step)?;
        elements.push(el);
    }
    elements.push(eos);
    SparseSequence::new(geometry, context.residual, elements)
}

/// Log-probability that [`sample_sequence`] (with `temperature > 0`)
/// produces `seq`; a terminator forced by `max_len` costs nothing.
pub fn sample_log_prob(
    predictor: &dyn Predictor,
    context: &PredictorContext,
    seq: &SparseSequence,
    temperature: f64,
    max_len: usize,
) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument("sample_log_prob needs temperature > 0".into()));
    }
    let geometry = seq.geometry;
    let mut partial = DctImage::empty(geometry);
    let mut total = 0.0;
    let ln = |probs: &[f64], i: usize| match tempered(probs, temperature) {
        Some(w) if w[i] > 0.0 => w[i].ln(),
        _ => f64::NEG_INFINITY,
    };
    for (l, el) in seq.elements.iter().enumerate() {
        if l + 1 >= max_len {
            return Ok(if el.is_eos(&geometry) && l + 1 == seq.len() { total } else { f64::NEG_INFINITY });
        }
        let q = Query {
            context,
            prefix: &seq.elements[..l],
            partial: &partial,
        };
        total += ln(&Masked::channel(predictor, &q)?, el.channel as usize);
        if el.is_eos(&geometry) {
            return Ok(if l + 1 == seq.len() { total } else { f64::NEG_INFINITY });
        }
        total += ln(&Masked::position(predictor, &q, el.channel)?, el.position as usize);
        if el.value.abs() > MAX_COEFF {
            return Ok(f64::NEG_INFINITY);
        }
        total += ln(&Masked::value(predictor, &q, el.channel, el.position)?, value_bin(el.value));
        partial.push(el, l)?;
    }
    Ok(f64::NEG_INFINITY)
}
