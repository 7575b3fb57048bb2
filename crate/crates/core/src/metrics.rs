//! Reconstruction quality and sparsity statistics.

use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};
use rayon::prelude::*;

use crate::blockdct::{decode_image, encode_image, CodecConfig, PlaneId};
use crate::colorspace::RgbImage;
use crate::sparse::{channel_parts, residual_encode, to_sparse, Geometry, SparseSequence};
use crate::store;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// PSNR over all three channels; identical images give `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Unrounded full-range luma.
pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filtering: output is `(h-10) x (w-10)`.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every full 11x11 window of the luma plane.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs both sides >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let (ya, yb) = (luma(a), luma(b));
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&ya, h, w, &taps);
    let mu_b = filter_valid(&yb, h, w, &taps);
    let e_aa = filter_valid(&prod(&ya, &ya), h, w, &taps);
    let e_bb = filter_valid(&prod(&yb, &yb), h, w, &taps);
    let e_ab = filter_valid(&prod(&ya, &yb), h, w, &taps);
    let total: f64 = (0..mu_a.len())
        .map(|i| ssim_term(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i]))
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Local SSIM from window moments.
pub fn ssim_term(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Ssim,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(Self::Psnr),
            "ssim" => Ok(Self::Ssim),
            _ => Err(Error::Unknown {
                kind: "metric",
                name: s.to_string(),
            }),
        }
    }

    pub fn score(self, a: &RgbImage, b: &RgbImage) -> Result<f64> {
        match self {
            Self::Psnr => psnr(a, b),
            Self::Ssim => ssim(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestOfN {
    pub index: usize,
    pub score: f64,
    pub psnr: f64,
    /// `None` when the frame is too small for SSIM.
    pub ssim: Option<f64>,
}

/// Highest-scoring candidate, lowest index on ties.
pub fn best_of_n(metric: Metric, truth: &RgbImage, candidates: &[RgbImage]) -> Result<BestOfN> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("best-of-n needs at least one candidate".into()));
    }
    let scores = candidates
        .par_iter()
        .map(|c| metric.score(truth, c))
        .collect::<Result<Vec<_>>>()?;
    let mut index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[index] {
            index = i;
        }
    }
    let best = &candidates[index];
    let ssim = match ssim(truth, best) {
        Ok(s) => Some(s),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BestOfN {
        index,
        score: scores[index],
        psnr: psnr(truth, best)?,
        ssim,
    })
}

/// Mean of the finite values and the number of non-finite ones skipped.
pub fn mean_finite(values: &[f64]) -> (Option<f64>, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let skipped = values.len() - finite.len();
    if finite.is_empty() {
        (None, skipped)
    } else {
        (Some(finite.iter().sum::<f64>() / finite.len() as f64), skipped)
    }
}

/// Nonzero counts over the luma block grid. Chroma tokens count toward
/// every luma block they cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u64>,
}

impl Heatmap {
    fn new(g: &Geometry) -> Self {
        let (rows, cols) = g.plane_grid(PlaneId::Y);
        Self {
            rows,
            cols,
            counts: vec![0; rows * cols],
        }
    }

    fn add(&mut self, g: &Geometry, seq: &SparseSequence) {
        let b = g.block();
        for el in seq.body() {
            let (plane, _) = channel_parts(el.channel, b).expect("valid channel");
            let (_, pc) = g.plane_grid(plane);
            let (r, c) = (el.position as usize / pc, el.position as usize % pc);
            let f = if plane.is_chroma() && g.config.chroma_downsampled() { 2 } else { 1 };
            for rr in r * f..((r + 1) * f).min(self.rows) {
                for cc in c * f..((c + 1) * f).min(self.cols) {
                    self.counts[rr * self.cols + cc] += 1;
                }
            }
        }
    }

    /// 16-bit grayscale, scaled so the largest count is white.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let px: Vec<u16> = self
            .counts
            .iter()
            .map(|&c| ((c as f64 / max as f64) * 65535.0).round() as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.cols as u32, self.rows as u32, px).expect("buffer matches dims");
        img.save(path.as_ref())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStats {
    pub frame_index: usize,
    /// Codec reconstruction quality of this frame.
    pub psnr_db: f64,
    pub ssim: Option<f64>,
    pub l_abs: usize,
    /// The first frame has no predecessor and reuses its absolute length.
    pub l_resid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub frames: Vec<FrameStats>,
    /// Mean residual length over mean absolute length, frames 1 onward.
    pub ratio: f64,
    pub abs_channel_fraction: Vec<f64>,
    pub resid_channel_fraction: Vec<f64>,
    pub abs_heatmap: Heatmap,
    pub resid_heatmap: Heatmap,
}

pub fn sparsity_report(frames: &[RgbImage], config: CodecConfig) -> Result<SparsityReport> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sparsity report needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    for f in &frames[1..] {
        same_dims(&frames[0], f)?;
    }
    let quantized = frames
        .par_iter()
        .map(|f| encode_image(f, config))
        .collect::<Result<Vec<_>>>()?;
    let g = Geometry::of(&quantized[0]);
    let absolute: Vec<SparseSequence> = quantized.par_iter().map(to_sparse).collect();
    let residual: Vec<SparseSequence> = quantized
        .par_windows(2)
        .map(|w| residual_encode(&w[1], &w[0]).map(|r| r.sequence))
        .collect::<Result<_>>()?;
    let quality = frames
        .par_iter()
        .zip(&quantized)
        .map(|(f, q)| {
            let rec = decode_image(q)?;
            let s = if f.height().min(f.width()) >= SSIM_WINDOW { Some(ssim(f, &rec)?) } else { None };
            Ok((psnr(f, &rec)?, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let stats: Vec<FrameStats> = (0..frames.len())
        .map(|i| FrameStats {
            frame_index: i,
            psnr_db: quality[i].0,
            ssim: quality[i].1,
            l_abs: absolute[i].len(),
            l_resid: if i == 0 { absolute[0].len() } else { residual[i - 1].len() },
        })
        .collect();
    let tail = &stats[1..];
    let mean = |f: fn(&FrameStats) -> usize| tail.iter().map(f).sum::<usize>() as f64 / tail.len() as f64;
    let ratio = mean(|s| s.l_resid) / mean(|s| s.l_abs);

    let fraction = |seqs: &[SparseSequence]| -> Vec<f64> {
        let mut counts = vec![0u64; g.num_channels()];
        for s in seqs {
            for el in s.body() {
                counts[el.channel as usize] += 1;
            }
        }
        counts
            .iter()
            .enumerate()
            .map(|(c, &n)| n as f64 / (seqs.len() * g.grid_size(c as u32)) as f64)
            .collect()
    };
    let heat = |seqs: &[SparseSequence]| {
        let mut h = Heatmap::new(&g);
        seqs.iter().for_each(|s| h.add(&g, s));
        h
    };
    Ok(SparsityReport {
        frames: stats,
        ratio,
        abs_channel_fraction: fraction(&absolute[1..]),
        resid_channel_fraction: fraction(&residual),
        abs_heatmap: heat(&absolute[1..]),
        resid_heatmap: heat(&residual),
    })
}

pub const CSV_HEADER: &str = "frame_index,psnr_db,ssim,L_abs,L_resid,ratio";

fn fmt_real(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl SparsityReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for s in &self.frames {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6}",
                s.frame_index,
                fmt_real(s.psnr_db),
                s.ssim.map(fmt_real).unwrap_or_default(),
                s.l_abs,
                s.l_resid,
                s.l_resid as f64 / s.l_abs as f64
            );
        }
        out
    }

    /// Writes `<stem>.csv`, `<stem>_abs.png` and `<stem>_resid.png` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        store::write_atomic(dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        self.abs_heatmap.save_png(dir.join(format!("{stem}_abs.png")))?;
        self.resid_heatmap.save_png(dir.join(format!("{stem}_resid.png")))?;
        Ok(())
    }
}
