//! Annotated context sets and generation plans.
//!
//! A plan is a list of steps over a shared frame timeline. Frames are named
//! by integer ids; `given` frames must be supplied by the caller and every
//! step produces one new frame. In parallel mode each step sees only the
//! given frames, in sequential mode earlier outputs join later contexts.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::Range;

use rayon::prelude::*;

use crate::blockdct::QuantizedPlanes;
use crate::sequence::{sample_sequence, ContextFrame, Predictor, PredictorContext, SampleOptions};
use crate::sparse::{from_sparse, scatter_partial, to_sparse, Geometry};
use crate::{Error, Result};

/// Registered target formats for translation tasks.
pub const FORMATS: [&str; 8] = [
    "rgb",
    "depth",
    "optical_flow",
    "semantic_segmentation",
    "instance_segmentation",
    "detection",
    "classification",
    "next_frame",
];

/// Context cap for the low frame rate stage of a two-stage plan.
pub const ANCHOR_CONTEXT_CAP: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    /// Offset of the frame relative to the target, as a one-hot vector of
    /// length `2 * span + 1` hot at `offset + span`.
    Timestamp { offset: i64, span: usize },
    /// Row-major 3x3 camera matrix.
    Camera([f64; 9]),
    /// Index into [`FORMATS`].
    Format(usize),
    Action([f64; 5]),
}

impl Annotation {
    pub fn timestamp(offset: i64, span: usize) -> Result<Self> {
        if offset.unsigned_abs() as usize > span {
            return Err(Error::InvalidArgument(format!("timestamp offset {offset} exceeds span {span}")));
        }
        Ok(Self::Timestamp { offset, span })
    }

    pub fn format(name: &str) -> Result<Self> {
        FORMATS
            .iter()
            .position(|f| *f == name)
            .map(Self::Format)
            .ok_or_else(|| Error::Unknown {
                kind: "format",
                name: name.to_string(),
            })
    }

    /// Dense annotation vector.
    pub fn vector(&self) -> Vec<f64> {
        match self {
            Self::Timestamp { offset, span } => {
                let mut v = vec![0.0; 2 * span + 1];
                v[(offset + *span as i64) as usize] = 1.0;
                v
            }
            Self::Camera(m) => m.to_vec(),
            Self::Format(id) => {
                let mut v = vec![0.0; FORMATS.len()];
                v[*id] = 1.0;
                v
            }
            Self::Action(a) => a.to_vec(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Plan(format!("bad annotation {text:?}"));
        let (kind, body) = text.split_once(':').ok_or_else(bad)?;
        let reals = |n: usize| -> Result<Vec<f64>> {
            let v = body
                .split(';')
                .map(|s| s.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                return Err(bad());
            }
            Ok(v)
        };
        match kind {
            "t" => {
                let (o, s) = body.split_once('/').ok_or_else(bad)?;
                Self::timestamp(o.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?)
            }
            "cam" => Ok(Self::Camera(reals(9)?.try_into().expect("length checked"))),
            "act" => Ok(Self::Action(reals(5)?.try_into().expect("length checked"))),
            "fmt" => Self::format(body),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        match self {
            Self::Timestamp { offset, span } => write!(f, "t:{offset}/{span}"),
            Self::Camera(m) => write!(f, "cam:{}", join(m)),
            Self::Format(id) => write!(f, "fmt:{}", FORMATS[*id]),
            Self::Action(a) => write!(f, "act:{}", join(a)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub frame: usize,
    pub annotation: Annotation,
    /// Replicated to reach the minimum context size.
    pub padding: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    /// Frame id this step produces.
    pub id: usize,
    pub target: Annotation,
    /// Oldest first.
    pub context: Vec<ContextEntry>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Parallel,
    Sequential,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Parallel => "parallel",
            Self::Sequential => "sequential",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Self::Parallel),
            "sequential" => Ok(Self::Sequential),
            _ => Err(Error::Unknown {
                kind: "mode",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextLimits {
    pub min: usize,
    pub max: usize,
}

impl ContextLimits {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if max == 0 || min > max {
            return Err(Error::InvalidArgument(format!("context limits {min}..={max} are empty")));
        }
        Ok(Self { min, max })
    }

    pub fn unbounded() -> Self {
        Self { min: 0, max: usize::MAX }
    }

    /// Evicts the oldest entries past `max`, then pads below `min` by
    /// replicating the earliest remaining entry.
    pub fn fit(&self, mut entries: Vec<ContextEntry>) -> Vec<ContextEntry> {
        if entries.len() > self.max {
            entries.drain(..entries.len() - self.max);
        }
        if let Some(first) = entries.first().cloned() {
            let pad = ContextEntry { padding: true, ..first };
            while entries.len() < self.min {
                entries.insert(0, pad.clone());
            }
        }
        entries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlan {
    pub mode: Mode,
    /// Frames supplied by the caller.
    pub given: Vec<usize>,
    pub steps: Vec<PlanStep>,
    pub limits: ContextLimits,
}

impl GenerationPlan {
    /// Every context frame must be given or, in sequential mode, produced by
    /// an earlier step. Step ids are unique and never given.
    pub fn validate(&self) -> Result<()> {
        let given: HashSet<usize> = self.given.iter().copied().collect();
        if given.len() != self.given.len() {
            return Err(Error::Plan("duplicate given frame".into()));
        }
        let mut produced = HashSet::new();
        for (k, step) in self.steps.iter().enumerate() {
            for e in &step.context {
                let ok = given.contains(&e.frame) || (self.mode == Mode::Sequential && produced.contains(&e.frame));
                if !ok {
                    return Err(Error::Plan(format!("step {k} references unavailable frame {}", e.frame)));
                }
            }
            if step.context.len() > self.limits.max {
                return Err(Error::Plan(format!("step {k} exceeds the context limit")));
            }
            if given.contains(&step.id) || !produced.insert(step.id) {
                return Err(Error::Plan(format!("frame {} produced twice", step.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn stamp(frame: usize, target: usize, span: usize) -> ContextEntry {
    ContextEntry {
        frame,
        annotation: Annotation::Timestamp {
            offset: frame as i64 - target as i64,
            span,
        },
        padding: false,
    }
}

fn target_stamp(span: usize) -> Annotation {
    Annotation::Timestamp { offset: 0, span }
}

/// Next-frame prediction. Frames `0..n_context` are given and step `k`
/// targets frame `n_context + k`.
pub fn build_video_plan(n_context: usize, n_generate: usize, mode: Mode, limits: ContextLimits) -> Result<GenerationPlan> {
    if n_context == 0 {
        return Err(Error::InvalidArgument("video plans need at least one context frame".into()));
    }
    let span = n_context + n_generate;
    let steps = (0..n_generate)
        .map(|k| {
            let target = n_context + k;
            let visible = match mode {
                Mode::Parallel => n_context,
                Mode::Sequential => target,
            };
            PlanStep {
                id: target,
                target: target_stamp(span),
                context: limits.fit((0..visible).map(|f| stamp(f, target, span)).collect()),
                seed: k as u64,
            }
        })
        .collect();
    let plan = GenerationPlan {
        mode,
        given: (0..n_context).collect(),
        steps,
        limits,
    };
    plan.validate()?;
    Ok(plan)
}

/// Fills `targets` given frames `t0..targets.start` and a future frame at
/// `anchor`. Each step sees the frames preceding its target plus the anchor,
/// which is never evicted.
pub fn build_interpolation_plan(
    t0: usize,
    targets: Range<usize>,
    anchor: usize,
    limits: ContextLimits,
) -> Result<GenerationPlan> {
    if targets.is_empty() || t0 >= targets.start || targets.end > anchor {
        return Err(Error::InvalidArgument(format!(
            "need t0 < targets < anchor, got {t0}, {targets:?}, {anchor}"
        )));
    }
    if limits.max < 2 {
        return Err(Error::InvalidArgument("interpolation needs room for two context frames".into()));
    }
    let span = anchor - t0;
    let preceding = ContextLimits {
        min: limits.min.saturating_sub(1),
        max: limits.max - 1,
    };
    let steps = targets
        .clone()
        .enumerate()
        .map(|(k, t)| {
            let mut context = preceding.fit((t0..t).map(|f| stamp(f, t, span)).collect());
            context.push(stamp(anchor, t, span));
            PlanStep {
                id: t,
                target: target_stamp(span),
                context,
                seed: k as u64,
            }
        })
        .collect();
    let mut given: Vec<usize> = (t0..targets.start).collect();
    given.push(anchor);
    let plan = GenerationPlan {
        mode: Mode::Sequential,
        given,
        steps,
        limits,
    };
    plan.validate()?;
    Ok(plan)
}

/// Novel views. Inputs take ids `0..n`, targets follow.
pub fn build_view_plan(
    context_views: &[[f64; 9]],
    target_views: &[[f64; 9]],
    mode: Mode,
    limits: ContextLimits,
) -> Result<GenerationPlan> {
    if target_views.is_empty() {
        return Err(Error::InvalidArgument("view plan needs at least one target view".into()));
    }
    if context_views.is_empty() {
        return Err(Error::InvalidArgument("view plan needs at least one input view".into()));
    }
    let n = context_views.len();
    let camera_of = |id: usize| {
        if id < n {
            context_views[id]
        } else {
            target_views[id - n]
        }
    };
    let steps = target_views
        .iter()
        .enumerate()
        .map(|(k, cam)| {
            let visible = match mode {
                Mode::Parallel => n,
                Mode::Sequential => n + k,
            };
            let context = (0..visible)
                .map(|f| ContextEntry {
                    frame: f,
                    annotation: Annotation::Camera(camera_of(f)),
                    padding: false,
                })
                .collect();
            PlanStep {
                id: n + k,
                target: Annotation::Camera(*cam),
                context: limits.fit(context),
                seed: k as u64,
            }
        })
        .collect();
    let plan = GenerationPlan {
        mode,
        given: (0..n).collect(),
        steps,
        limits,
    };
    plan.validate()?;
    Ok(plan)
}

/// Single-step format translation of frame 0 into frame 1.
pub fn build_translation_plan(format: &str) -> Result<GenerationPlan> {
    let target = Annotation::format(format)?;
    Ok(GenerationPlan {
        mode: Mode::Parallel,
        given: vec![0],
        steps: vec![PlanStep {
            id: 1,
            target,
            context: vec![ContextEntry {
                frame: 0,
                annotation: Annotation::format("rgb")?,
                padding: false,
            }],
            seed: 0,
        }],
        limits: ContextLimits { min: 1, max: 1 },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStagePlan {
    pub anchors: GenerationPlan,
    /// Absent when both rates agree.
    pub fill: Option<GenerationPlan>,
}

impl TwoStagePlan {
    pub fn stages(&self) -> Vec<&GenerationPlan> {
        std::iter::once(&self.anchors).chain(self.fill.as_ref()).collect()
    }

    /// Given frames plus every generated frame.
    pub fn total_frames(&self) -> usize {
        self.anchors.given.len() + self.stages().iter().map(|s| s.len()).sum::<usize>()
    }
}

/// Long video from one frame: anchors at the low rate (frame ids are
/// multiples of `high / low`), then every remaining high-rate frame from the
/// frame before it and the next anchor. Frames after the last anchor
/// continue from the two preceding frames.
pub fn build_two_stage_plan(n_seconds: usize, low_fps: usize, high_fps: usize) -> Result<TwoStagePlan> {
    if n_seconds == 0 || low_fps == 0 || high_fps == 0 {
        return Err(Error::InvalidArgument("duration and rates must be positive".into()));
    }
    if !high_fps.is_multiple_of(low_fps) {
        return Err(Error::InvalidArgument(format!(
            "high rate {high_fps} is not a multiple of low rate {low_fps}"
        )));
    }
    let ratio = high_fps / low_fps;
    let n_anchors = n_seconds * low_fps;
    let limits = ContextLimits::new(1, ANCHOR_CONTEXT_CAP)?;
    let span = n_anchors;
    let anchor_steps = (1..n_anchors)
        .map(|k| PlanStep {
            id: k * ratio,
            target: target_stamp(span),
            context: limits.fit(
                (0..k)
                    .map(|j| ContextEntry {
                        frame: j * ratio,
                        annotation: Annotation::Timestamp {
                            offset: j as i64 - k as i64,
                            span,
                        },
                        padding: false,
                    })
                    .collect(),
            ),
            seed: (k - 1) as u64,
        })
        .collect();
    let anchors = GenerationPlan {
        mode: Mode::Sequential,
        given: vec![0],
        steps: anchor_steps,
        limits,
    };
    anchors.validate()?;
    if ratio == 1 {
        return Ok(TwoStagePlan { anchors, fill: None });
    }

    let fill_limits = ContextLimits::new(2, 2)?;
    let last_anchor = (n_anchors - 1) * ratio;
    let total = n_seconds * high_fps;
    let mut steps = Vec::new();
    for t in 1..total {
        if t % ratio == 0 {
            continue;
        }
        let next_anchor = (t / ratio + 1) * ratio;
        let context = if t < last_anchor {
            vec![stamp(t - 1, t, ratio), stamp(next_anchor, t, ratio)]
        } else {
            fill_limits.fit((t.saturating_sub(2)..t).map(|f| stamp(f, t, ratio)).collect())
        };
        steps.push(PlanStep {
            id: t,
            target: target_stamp(ratio),
            context,
            seed: steps.len() as u64,
        });
    }
    let fill = GenerationPlan {
        mode: Mode::Sequential,
        given: (0..n_anchors).map(|k| k * ratio).collect(),
        steps,
        limits: fill_limits,
    };
    fill.validate()?;
    Ok(TwoStagePlan {
        anchors,
        fill: Some(fill),
    })
}

/// Per-step seed from the run seed and the step's own seed.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ step.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecuteOptions {
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Sample residual tokens and add them onto a context frame.
    pub residual: bool,
}

/// Residual reference: the latest context frame before the target, else
/// the last context entry.
fn reference_frame(step: &PlanStep) -> Option<usize> {
    step.context
        .iter()
        .filter(|e| e.frame < step.id)
        .map(|e| e.frame)
        .max()
        .or_else(|| step.context.last().map(|e| e.frame))
}

fn run_step(
    step: &PlanStep,
    predictor: &dyn Predictor,
    frames: &BTreeMap<usize, QuantizedPlanes>,
    geometry: Geometry,
    opts: &ExecuteOptions,
) -> Result<QuantizedPlanes> {
    let lookup = |id: usize| {
        frames
            .get(&id)
            .ok_or_else(|| Error::Plan(format!("frame {id} is not available")))
    };
    let mut context_frames = Vec::with_capacity(step.context.len());
    for e in &step.context {
        let seq = to_sparse(lookup(e.frame)?);
        context_frames.push(ContextFrame {
            image: scatter_partial(seq.body(), geometry)?,
            annotation: e.annotation.clone(),
            padding: e.padding,
        });
    }
    let ctx = PredictorContext {
        geometry,
        residual: opts.residual,
        frames: context_frames,
        target: Some(step.target.clone()),
    };
    let sample = SampleOptions {
        temperature: opts.temperature,
        max_len: opts.max_len,
        seed: step_seed(opts.seed, step.seed),
    };
    let seq = sample_sequence(predictor, &ctx, &sample)?;
    if opts.residual {
        let reference = reference_frame(step)
            .ok_or_else(|| Error::Plan(format!("residual step {} has no context frame", step.id)))?;
        from_sparse(&seq, Some(lookup(reference)?))
    } else {
        from_sparse(&seq, None)
    }
}

/// Runs every step and inserts its output into `frames`. Returns the new
/// frames in step order.
pub fn execute_plan(
    plan: &GenerationPlan,
    predictor: &dyn Predictor,
    frames: &mut BTreeMap<usize, QuantizedPlanes>,
    opts: &ExecuteOptions,
) -> Result<Vec<(usize, QuantizedPlanes)>> {
    plan.validate()?;
    if plan.steps.is_empty() {
        return Ok(Vec::new());
    }
    let mut geometry = None;
    for id in &plan.given {
        let qp = frames
            .get(id)
            .ok_or_else(|| Error::Plan(format!("given frame {id} was not supplied")))?;
        let g = Geometry::of(qp);
        if geometry.is_some_and(|prev| prev != g) {
            return Err(Error::ConfigMismatch("given frames differ in geometry".into()));
        }
        geometry = Some(g);
    }
    let geometry = geometry.ok_or_else(|| Error::Plan("plan has no given frames".into()))?;

    let outputs = match plan.mode {
        Mode::Parallel => {
            let shared = &*frames;
            plan.steps
                .par_iter()
                .map(|s| Ok((s.id, run_step(s, predictor, shared, geometry, opts)?)))
                .collect::<Result<Vec<_>>>()?
        }
        Mode::Sequential => {
            let mut out = Vec::with_capacity(plan.steps.len());
            for s in &plan.steps {
                let qp = run_step(s, predictor, frames, geometry, opts)?;
                frames.insert(s.id, qp.clone());
                out.push((s.id, qp));
            }
            out
        }
    };
    for (id, qp) in &outputs {
        frames.insert(*id, qp.clone());
    }
    Ok(outputs)
}

pub const PLAN_HEADER: &str = "dctf-plan 1";

/// Text manifest for one or more stages executed in order.
pub fn plans_to_text(stages: &[&GenerationPlan]) -> String {
    let mut out = String::from(PLAN_HEADER);
    out.push('\n');
    for plan in stages {
        let max = if plan.limits.max == usize::MAX { "inf".to_string() } else { plan.limits.max.to_string() };
        out.push_str(&format!("stage {} {} {}\n", plan.mode.name(), plan.limits.min, max));
        let given: Vec<String> = plan.given.iter().map(|g| g.to_string()).collect();
        out.push_str(format!("given {}\n", given.join(" ")).trim_end());
        out.push('\n');
        for s in &plan.steps {
            let ctx: Vec<String> = s
                .context
                .iter()
                .map(|e| format!("{}={}{}", e.frame, e.annotation, if e.padding { "+pad" } else { "" }))
                .collect();
            out.push_str(&format!("step\t{}\t{}\t{}\t{}\n", s.id, s.target, ctx.join(" "), s.seed));
        }
    }
    out
}

pub fn plans_from_text(text: &str) -> Result<Vec<GenerationPlan>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == PLAN_HEADER => {}
        _ => return Err(Error::Plan("missing plan header".into())),
    }
    let mut plans: Vec<GenerationPlan> = Vec::new();
    for (n, line) in lines {
        let bad = |what: &str| Error::Plan(format!("line {}: {what}", n + 1));
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
        if let Some(rest) = line.strip_prefix("stage ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            let [mode, min, max] = f[..] else { return Err(bad("stage needs mode, min and max")) };
            let max = if max == "inf" { usize::MAX } else { num(max)? };
            plans.push(GenerationPlan {
                mode: Mode::parse(mode)?,
                given: Vec::new(),
                steps: Vec::new(),
                limits: ContextLimits::new(num(min)?, max)?,
            });
            continue;
        }
        let plan = plans.last_mut().ok_or_else(|| bad("entry before any stage"))?;
        if line == "given" || line.starts_with("given ") {
            plan.given = line[5..].split_whitespace().map(num).collect::<Result<_>>()?;
        } else if let Some(rest) = line.strip_prefix("step\t") {
            let f: Vec<&str> = rest.split('\t').collect();
            let [id, target, ctx, seed] = f[..] else { return Err(bad("step needs four fields")) };
            let context = ctx
                .split_whitespace()
                .map(|e| {
                    let (frame, ann) = e.split_once('=').ok_or_else(|| bad("context entry needs '='"))?;
                    let (ann, padding) = match ann.strip_suffix("+pad") {
                        Some(a) => (a, true),
                        None => (ann, false),
                    };
                    Ok(ContextEntry {
                        frame: num(frame)?,
                        annotation: Annotation::parse(ann)?,
                        padding,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            plan.steps.push(PlanStep {
                id: num(id)?,
                target: Annotation::parse(target)?,
                context,
                seed: seed.parse().map_err(|_| bad("bad seed"))?,
            });
        } else {
            return Err(bad("unrecognized line"));
        }
    }
    if plans.is_empty() {
        return Err(Error::Plan("manifest has no stages".into()));
    }
    for p in &plans {
        p.validate()?;
    }
    Ok(plans)
}
