use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dctf_core::blockdct::{decode_image, encode_image, encode_planes_counted, CodecConfig, QuantizedPlanes};
use dctf_core::colorspace::{rgb_to_yuv, RgbImage};
use dctf_core::metrics::{self, Metric};
use dctf_core::presets::{preset_by_name, Preset};
use dctf_core::sequence::{bits_per_dimension, nll, train_baseline, BaselinePredictor, PredictorContext};
use dctf_core::sparse::{from_sparse, residual_encode, to_sparse, Geometry, SparseSequence};
use dctf_core::store::{self, DatasetManifest, IngestOptions, Representation};
use dctf_core::tasks::{self, ContextLimits, ExecuteOptions, Mode};

mod config;

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "dctf", version, about = "Sparse DCT frame codec and sequence toolkit")]
struct Cli {
    /// TOML file with default values for flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode an image into a sequence file.
    Encode {
        image: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        /// Encode the difference against this earlier frame.
        #[arg(long)]
        residual_against: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode a sequence file into an image.
    Decode {
        sequence: PathBuf,
        /// Previous frame for residual sequences (image or .dcts).
        #[arg(long)]
        previous: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Absolute vs residual sparsity of a frame sequence.
    Stats {
        #[arg(required = true, num_args = 2..)]
        frames: Vec<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "sparsity")]
        stem: String,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Predictor(PredictorCommand),
    /// Write a generation plan manifest.
    Plan {
        #[command(subcommand)]
        kind: PlanKind,
        #[arg(short, long, global = true)]
        output: Option<PathBuf>,
    },
    /// Execute a plan with a trained model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Images for the first stage's given frames, in order.
        #[arg(long, num_args = 1.., required = true)]
        context: Vec<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Longest sampled sequence, terminator included.
        #[arg(long)]
        max_len: Option<usize>,
        /// Sample residuals against the latest earlier context frame.
        #[arg(long)]
        residual: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Ingest a JSON-lines manifest into sequence files.
    Build {
        manifest: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long)]
        stride: Option<usize>,
        /// Square side after cropping; defaults to the preset resolution.
        #[arg(long)]
        resize: Option<usize>,
        #[arg(long)]
        no_crop: bool,
        #[arg(long, value_enum, default_value_t = Repr::Both)]
        representation: Repr,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Repr {
    Absolute,
    Residual,
    Both,
}

#[derive(Subcommand, Debug)]
enum PredictorCommand {
    /// Fit the count baseline on every .dcts file under a directory.
    Train {
        dir: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Negative log-likelihood and bits per dimension.
    Eval {
        model: PathBuf,
        dir: PathBuf,
        #[arg(long)]
        chunk: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum PlanKind {
    Video {
        #[arg(long)]
        context: usize,
        #[arg(long)]
        generate: usize,
        #[arg(long, value_enum, default_value_t = PlanMode::Sequential)]
        mode: PlanMode,
        #[command(flatten)]
        limits: LimitArgs,
    },
    Interpolate {
        #[arg(long)]
        t0: usize,
        /// First target frame.
        #[arg(long)]
        from: usize,
        /// One past the last target frame.
        #[arg(long)]
        to: usize,
        #[arg(long)]
        anchor: usize,
        #[command(flatten)]
        limits: LimitArgs,
    },
    View {
        /// One camera per line, 9 numbers row-major.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_enum, default_value_t = PlanMode::Parallel)]
        mode: PlanMode,
        #[command(flatten)]
        limits: LimitArgs,
    },
    Translate {
        #[arg(long)]
        format: String,
    },
    TwoStage {
        #[arg(long)]
        seconds: usize,
        #[arg(long)]
        low: usize,
        #[arg(long)]
        high: usize,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PlanMode {
    Parallel,
    Sequential,
}

impl From<PlanMode> for Mode {
    fn from(m: PlanMode) -> Self {
        match m {
            PlanMode::Parallel => Mode::Parallel,
            PlanMode::Sequential => Mode::Sequential,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct LimitArgs {
    /// Take context limits from a preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    min_context: Option<usize>,
    #[arg(long)]
    max_context: Option<usize>,
}

impl LimitArgs {
    fn resolve(&self) -> Result<ContextLimits> {
        let base = match &self.preset {
            Some(name) => {
                let p = preset_by_name(name)?;
                ContextLimits::new(p.min_context, p.max_context)?
            }
            None => ContextLimits::unbounded(),
        };
        Ok(ContextLimits::new(
            self.min_context.unwrap_or(base.min),
            self.max_context.unwrap_or(base.max),
        )?)
    }
}

#[derive(Subcommand, Debug)]
enum MetricsCommand {
    Psnr(MetricArgs),
    Ssim(MetricArgs),
    /// Best prediction by the chosen metric.
    BestOfN {
        #[command(flatten)]
        args: MetricArgs,
        #[arg(long, default_value = "psnr")]
        metric: String,
    },
}

#[derive(Args, Debug)]
struct MetricArgs {
    truth: PathBuf,
    #[arg(required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct CodecArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    quality: Option<u32>,
    #[arg(long)]
    block: Option<usize>,
    /// Downsample chroma by 2 in each direction.
    #[arg(long)]
    chroma: bool,
}

impl CodecArgs {
    fn resolve(&self, file: &FileConfig) -> Result<(CodecConfig, Option<Preset>)> {
        let preset = self
            .preset
            .as_deref()
            .or(file.preset.as_deref())
            .map(preset_by_name)
            .transpose()?;
        let quality = self.quality.or(file.quality).or(preset.map(|p| p.quality)).unwrap_or(95);
        let block = self.block.or(file.block).or(preset.map(|p| p.block)).unwrap_or(4);
        let chroma = self.chroma
            || file.chroma.unwrap_or(false)
            || preset.is_some_and(|p| p.chroma_downsampled);
        Ok((CodecConfig::new(block, quality, chroma)?, preset))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_threads(file: &FileConfig) -> Result<()> {
    let env = std::env::var("DCTF_THREADS").ok();
    let n = match env {
        Some(v) => Some(v.parse::<usize>().with_context(|| format!("DCTF_THREADS={v:?}"))?),
        None => file.threads,
    };
    if let Some(n) = n.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    init_threads(&file)?;
    match cli.command {
        Command::Encode {
            image,
            codec,
            residual_against,
            output,
        } => encode(&image, &codec, residual_against.as_deref(), &output, &file),
        Command::Decode {
            sequence,
            previous,
            output,
        } => decode(&sequence, previous.as_deref(), &output),
        Command::Stats {
            frames,
            codec,
            output,
            stem,
        } => stats(&frames, &codec, &output, &stem, &file),
        Command::Dataset(DatasetCommand::Build {
            manifest,
            codec,
            stride,
            resize,
            no_crop,
            representation,
            output,
        }) => {
            let (config, preset) = codec.resolve(&file)?;
            let opts = IngestOptions {
                config,
                stride: stride.or(file.stride).unwrap_or(1),
                center_crop: !no_crop,
                resize: resize.or(preset.map(|p| p.resolution)),
                representation: match representation {
                    Repr::Absolute => Representation::Absolute,
                    Repr::Residual => Representation::Residual,
                    Repr::Both => Representation::Both,
                },
            };
            dataset_build(&manifest, &opts, &output)
        }
        Command::Predictor(PredictorCommand::Train { dir, alpha, output }) => {
            let alpha = alpha.or(file.alpha).unwrap_or(1.0);
            let corpus = read_corpus(&dir)?;
            let model = train_baseline(&corpus, alpha)?;
            model.save(&output)?;
            println!(
                "trained on {} sequences ({} tokens), alpha={alpha}",
                corpus.len(),
                corpus.iter().map(|s| s.len()).sum::<usize>()
            );
            Ok(())
        }
        Command::Predictor(PredictorCommand::Eval { model, dir, chunk }) => {
            let chunk = chunk.or(file.chunk).unwrap_or(dctf_core::sequence::DEFAULT_CHUNK);
            predictor_eval(&model, &dir, chunk)
        }
        Command::Plan { kind, output } => plan(kind, output.as_deref()),
        Command::Sample {
            model,
            plan,
            context,
            temperature,
            seed,
            max_len,
            residual,
            output,
        } => {
            let opts = ExecuteOptions {
                temperature: temperature.or(file.temperature).unwrap_or(1.0),
                max_len: max_len.or(file.max_len).unwrap_or(4096),
                seed: seed.or(file.seed).unwrap_or(0),
                residual,
            };
            sample(&model, &plan, &context, &opts, &output)
        }
        Command::Metrics(cmd) => metrics_cmd(cmd),
    }
}

fn load_image(path: &Path) -> Result<RgbImage> {
    RgbImage::load(path).with_context(|| format!("loading {}", path.display()))
}

fn encode(image: &Path, codec: &CodecArgs, prev: Option<&Path>, out: &Path, file: &FileConfig) -> Result<()> {
    let (config, _) = codec.resolve(file)?;
    let img = load_image(image)?;
    let enc = encode_planes_counted(&rgb_to_yuv(&img, config.chroma_downsampled())?, config)?;
    let (seq, saturated) = match prev {
        Some(p) => {
            let prev = encode_image(&load_image(p)?, config)?;
            let r = residual_encode(&enc.planes, &prev)?;
            (r.sequence, enc.saturated + r.saturated)
        }
        None => (to_sparse(&enc.planes), enc.saturated),
    };
    let bytes = store::encode_sequence(&seq)?;
    store::write_atomic(out, &bytes)?;
    println!("L={} bytes={}", seq.len(), bytes.len());
    if saturated > 0 {
        eprintln!("warning: {saturated} coefficients clamped to the value range");
    }
    Ok(())
}

/// Quantized planes of a previous frame given as an image or sequence file.
fn previous_planes(path: &Path, geometry: &Geometry) -> Result<QuantizedPlanes> {
    let qp = if path.extension().is_some_and(|e| e == "dcts") {
        let seq = store::read_sequence(path)?;
        ensure!(!seq.residual, "previous frame {} is itself a residual", path.display());
        from_sparse(&seq, None)?
    } else {
        encode_image(&load_image(path)?, geometry.config)?
    };
    ensure!(Geometry::of(&qp) == *geometry, "previous frame does not match the sequence geometry");
    Ok(qp)
}

fn decode(seq_path: &Path, previous: Option<&Path>, out: &Path) -> Result<()> {
    let seq = store::read_sequence(seq_path)?;
    let qp = match (seq.residual, previous) {
        (true, None) => bail!("{} is a residual sequence; pass --previous", seq_path.display()),
        (true, Some(p)) => from_sparse(&seq, Some(&previous_planes(p, &seq.geometry)?))?,
        (false, _) => from_sparse(&seq, None)?,
    };
    decode_image(&qp)?.save(out)?;
    println!("decoded {}x{} from L={}", seq.geometry.height, seq.geometry.width, seq.len());
    Ok(())
}

fn stats(frames: &[PathBuf], codec: &CodecArgs, out: &Path, stem: &str, file: &FileConfig) -> Result<()> {
    let (config, _) = codec.resolve(file)?;
    let imgs = frames.par_iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let report = metrics::sparsity_report(&imgs, config)?;
    report.write(out, stem)?;
    let psnrs: Vec<f64> = report.frames.iter().map(|f| f.psnr_db).collect();
    let (mean, skipped) = metrics::mean_finite(&psnrs);
    println!("frames={} residual/absolute ratio={:.4}", report.frames.len(), report.ratio);
    match mean {
        Some(m) => println!("mean codec PSNR {m:.2} dB ({skipped} lossless frames skipped)"),
        None => println!("all frames lossless"),
    }
    Ok(())
}

fn dataset_build(manifest: &Path, opts: &IngestOptions, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(manifest)?;
    let clips = store::ingest(&manifest, opts)?;
    let mut files = 0;
    for clip in &clips {
        ensure!(
            !clip.clip_id.is_empty() && !clip.clip_id.contains(['/', '\\']) && clip.clip_id != ".." && clip.clip_id != ".",
            "clip id {:?} cannot be used as a directory name",
            clip.clip_id
        );
        let dir = out.join(&clip.clip_id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, seq) in clip.absolute.iter().enumerate() {
            store::write_sequence(dir.join(format!("abs_{i:05}.dcts")), seq)?;
            files += 1;
        }
        for (i, seq) in clip.residual.iter().enumerate() {
            store::write_sequence(dir.join(format!("resid_{:05}.dcts", i + 1)), seq)?;
            files += 1;
        }
    }
    println!("{} clips, {files} sequence files", clips.len());
    Ok(())
}

fn read_corpus(dir: &Path) -> Result<Vec<SparseSequence>> {
    let paths = store::find_sequence_files(dir)?;
    ensure!(!paths.is_empty(), "no .dcts files under {}", dir.display());
    paths
        .par_iter()
        .map(|p| store::read_sequence(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn predictor_eval(model: &Path, dir: &Path, chunk: usize) -> Result<()> {
    let model = BaselinePredictor::load(model)?;
    let corpus = read_corpus(dir)?;
    let g = *model.geometry();
    let totals = corpus
        .par_iter()
        .map(|seq| {
            ensure!(seq.geometry == g, "sequence geometry differs from the model");
            let ctx = PredictorContext::unconditional(g, seq.residual);
            let m = nll(seq, &model, &ctx, chunk)?.total();
            let u = nll(seq, &dctf_core::sequence::UniformPredictor, &ctx, chunk)?.total();
            Ok((m, u))
        })
        .collect::<Result<Vec<_>>>()?;
    let (m, u) = totals.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = corpus.len();
    println!("sequences={n} nll_nats={m:.6}");
    println!("bpd={:.6} uniform_bpd={:.6}", bits_per_dimension(m, g.height * n, g.width), bits_per_dimension(u, g.height * n, g.width));
    Ok(())
}

fn read_cameras(path: &Path) -> Result<Vec<[f64; 9]>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let v = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{} camera {}", path.display(), i + 1))?;
            v.try_into()
                .map_err(|v: Vec<f64>| anyhow!("camera {} has {} numbers, expected 9", i + 1, v.len()))
        })
        .collect()
}

fn plan(kind: PlanKind, output: Option<&Path>) -> Result<()> {
    let plans = match kind {
        PlanKind::Video {
            context,
            generate,
            mode,
            limits,
        } => vec![tasks::build_video_plan(context, generate, mode.into(), limits.resolve()?)?],
        PlanKind::Interpolate {
            t0,
            from,
            to,
            anchor,
            limits,
        } => vec![tasks::build_interpolation_plan(t0, from..to, anchor, limits.resolve()?)?],
        PlanKind::View {
            inputs,
            targets,
            mode,
            limits,
        } => vec![tasks::build_view_plan(
            &read_cameras(&inputs)?,
            &read_cameras(&targets)?,
            mode.into(),
            limits.resolve()?,
        )?],
        PlanKind::Translate { format } => vec![tasks::build_translation_plan(&format)?],
        PlanKind::TwoStage { seconds, low, high } => {
            let p = tasks::build_two_stage_plan(seconds, low, high)?;
            std::iter::once(p.anchors).chain(p.fill).collect()
        }
    };
    let refs: Vec<_> = plans.iter().collect();
    let text = tasks::plans_to_text(&refs);
    let steps: usize = plans.iter().map(|p| p.len()).sum();
    match output {
        Some(path) => {
            store::write_atomic(path, text.as_bytes())?;
            println!("{} stage(s), {steps} steps", plans.len());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn sample(model: &Path, plan: &Path, context: &[PathBuf], opts: &ExecuteOptions, out: &Path) -> Result<()> {
    let model = BaselinePredictor::load(model)?;
    let text = fs::read_to_string(plan).with_context(|| format!("reading {}", plan.display()))?;
    let stages = tasks::plans_from_text(&text)?;
    let g = *model.geometry();
    let given = &stages[0].given;
    ensure!(
        given.len() == context.len(),
        "plan expects {} context images, got {}",
        given.len(),
        context.len()
    );
    let mut frames = BTreeMap::new();
    for (&id, path) in given.iter().zip(context) {
        let img = load_image(path)?;
        ensure!(
            (img.height(), img.width()) == (g.height, g.width),
            "{} is {}x{}, the model expects {}x{}",
            path.display(),
            img.height(),
            img.width(),
            g.height,
            g.width
        );
        frames.insert(id, encode_image(&img, g.config)?);
    }
    let mut generated = 0;
    for stage in &stages {
        generated += tasks::execute_plan(stage, &model, &mut frames, opts)?.len();
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    frames
        .par_iter()
        .map(|(id, qp)| {
            decode_image(qp)?.save(out.join(format!("frame_{id:05}.png")))?;
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    println!("{generated} generated, {} frames written", frames.len());
    Ok(())
}

fn metrics_cmd(cmd: MetricsCommand) -> Result<()> {
    let (args, metric, best) = match cmd {
        MetricsCommand::Psnr(a) => (a, Metric::Psnr, false),
        MetricsCommand::Ssim(a) => (a, Metric::Ssim, false),
        MetricsCommand::BestOfN { args, metric } => (args, Metric::parse(&metric)?, true),
    };
    let truth = load_image(&args.truth)?;
    let preds = args.predictions.par_iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let fmt = |v: f64| if v == f64::INFINITY { "inf".to_string() } else { format!("{v:.6}") };
    let mut csv = String::new();
    if best {
        let r = metrics::best_of_n(metric, &truth, &preds)?;
        let ssim = r.ssim.map(fmt).unwrap_or_default();
        println!(
            "best={} path={} psnr_db={} ssim={ssim}",
            r.index,
            args.predictions[r.index].display(),
            fmt(r.psnr)
        );
        csv.push_str("index,path,psnr_db,ssim\n");
        csv.push_str(&format!("{},{},{},{ssim}\n", r.index, args.predictions[r.index].display(), fmt(r.psnr)));
    } else {
        let name = if metric == Metric::Psnr { "psnr_db" } else { "ssim" };
        let scores = preds.par_iter().map(|p| metric.score(&truth, p)).collect::<Result<Vec<_>, _>>()?;
        csv.push_str(&format!("index,path,{name}\n"));
        for (i, (s, p)) in scores.iter().zip(&args.predictions).enumerate() {
            println!("{} {name}={}", p.display(), fmt(*s));
            csv.push_str(&format!("{i},{},{}\n", p.display(), fmt(*s)));
        }
        let (mean, skipped) = metrics::mean_finite(&scores);
        if let Some(m) = mean {
            println!("mean {name}={m:.6} ({skipped} infinite skipped)");
        }
    }
    if let Some(path) = args.csv {
        store::write_atomic(&path, csv.as_bytes())?;
    }
    Ok(())
}
