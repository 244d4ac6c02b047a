//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 when a processing stage fails, 2 on a usage error.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::datasets::{self, Annotation, ManifestRow, Split};
use crate::eval;
use crate::gridcodec::{self, BBox, GridSpec};
use crate::inference::{self, Detection};
use crate::network::{self, NetConfig};
use crate::raster::{self, Image};
use crate::saliency::{self, ModulationCfg, SaliencyMap, SaliencyMode, SaliencySettings};
use crate::training::{self, Sample};

#[derive(Debug, Parser)]
#[command(name = "vishud", version, about = "Saliency-modulated human detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a saliency map and optionally the modulated image.
    Saliency(SaliencyArgs),
    /// Print the label grid of an annotation file.
    Encode(EncodeArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Train a detector on the train split of a manifest.
    Train(TrainArgs),
    /// Run a checkpoint over one split of a manifest.
    Detect(DetectArgs),
    /// Score a detections file against a manifest split.
    Eval(EvalArgs),
    /// Write the 14 flip/rotation variants of an image and its boxes.
    Augment(AugmentArgs),
}

#[derive(Debug, Args)]
struct SaliencyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mvsi: Option<PathBuf>,
    #[arg(long, default_value_t = ModulationCfg::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = saliency::DEFAULT_SIGMA)]
    sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum AnnFormat {
    Auto,
    Pennfudan,
    Idl,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, value_enum, default_value_t = AnnFormat::Auto)]
    format: AnnFormat,
    #[arg(long, default_value_t = 16)]
    stride: usize,
    /// Image size as WxH.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// `key = value` config file; built-in desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed (default 42).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum SaliencyChoice {
    Off,
    Builtin,
    External(PathBuf),
}

fn parse_saliency(s: &str) -> Result<SaliencyChoice, String> {
    match s {
        "off" => Ok(SaliencyChoice::Off),
        "builtin" => Ok(SaliencyChoice::Builtin),
        _ => match s.strip_prefix("external:") {
            Some(dir) if !dir.is_empty() => Ok(SaliencyChoice::External(dir.into())),
            _ => Err("expected builtin, off or external:<dir>".into()),
        },
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// builtin, off or external:<dir>; defaults to the config's mode.
    #[arg(long, value_parser = parse_saliency)]
    saliency: Option<SaliencyChoice>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace path; defaults to `<out>.trace`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Iterations per epoch.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_saliency)]
    saliency: Option<SaliencyChoice>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = eval::DEFAULT_IOU)]
    iou: f64,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    /// Curve path; defaults to `<out>.curve`.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, value_enum, default_value_t = AnnFormat::Auto)]
    format: AnnFormat,
    #[arg(long)]
    out: PathBuf,
}

impl clap::builder::ValueParserFactory for Split {
    type Parser = fn(&str) -> Result<Split, String>;

    fn value_parser() -> Self::Parser {
        |s| s.parse()
    }
}

/// A failed processing stage.
#[derive(Debug)]
struct Failure {
    stage: &'static str,
    msg: String,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            msg: e.to_string(),
        })
    }
}

fn fail<T>(stage: &'static str, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        stage,
        msg: msg.into(),
    })
}

fn read(path: &Path, stage: &'static str) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure {
        stage,
        msg: format!("{}: {e}", path.display()),
    })
}

fn read_text(path: &Path, stage: &'static str) -> Result<String, Failure> {
    String::from_utf8(read(path, stage)?).map_err(|e| Failure {
        stage,
        msg: format!("{}: {e}", path.display()),
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>, stage: &'static str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).stage(stage)?;
    }
    fs::write(path, bytes).map_err(|e| Failure {
        stage,
        msg: format!("{}: {e}", path.display()),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = match std::env::var("VSHD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("error: VSHD_THREADS must be a non-negative integer, got {v:?}");
                return 2;
            }
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}: {}", f.stage, f.msg);
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Saliency(a) => cmd_saliency(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Augment(a) => cmd_augment(a),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::parse(&read_text(path, "config")?).stage("config")?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn load_image(path: &Path) -> Result<Image, Failure> {
    raster::load_pnm(&read(path, "load image")?).map_err(|e| Failure {
        stage: "load image",
        msg: format!("{}: {e}", path.display()),
    })
}

fn cmd_saliency(a: SaliencyArgs) -> Result<(), Failure> {
    let img = load_image(&a.input)?;
    let modulation = ModulationCfg::new(a.alpha).stage("saliency")?;
    if !(a.sigma > 0.0) {
        return fail("saliency", format!("sigma {} must be positive", a.sigma));
    }
    let map = saliency::frequency_tuned_saliency(&img, a.sigma);
    write(&a.out, raster::save_pnm(&map.to_image()), "write map")?;
    if let Some(path) = &a.mvsi {
        let mvsi = saliency::modulate(&img, &map, modulation).stage("saliency")?;
        write(path, raster::save_pnm(&mvsi), "write mvsi")?;
    }
    Ok(())
}

fn resolve_format(format: AnnFormat, text: &str) -> AnnFormat {
    match format {
        AnnFormat::Auto if text.trim_start().starts_with('"') => AnnFormat::Idl,
        AnnFormat::Auto => AnnFormat::Pennfudan,
        f => f,
    }
}

fn parse_annotations(text: &str, format: AnnFormat) -> Result<Vec<Annotation>, Failure> {
    match resolve_format(format, text) {
        AnnFormat::Idl => datasets::parse_idl(text).stage("parse annotations"),
        _ => Ok(vec![datasets::parse_pennfudan(text).stage("parse annotations")?]),
    }
}

/// Boxes for `image_path` in an annotation file. IDL files may list many
/// images; the record is chosen by path, then by file name, and a file with
/// a single record applies to any image.
fn annotation_for(path: &Path, image_path: &str, format: AnnFormat) -> Result<Vec<BBox>, Failure> {
    let anns = parse_annotations(&read_text(path, "load annotations")?, format).map_err(|f| {
        Failure {
            msg: format!("{}: {}", path.display(), f.msg),
            ..f
        }
    })?;
    let name = |p: &str| Path::new(p).file_name().map(|n| n.to_owned());
    let found = anns
        .iter()
        .find(|a| a.image_path == image_path)
        .or_else(|| anns.iter().find(|a| name(&a.image_path) == name(image_path)))
        .or_else(|| (anns.len() == 1).then(|| &anns[0]));
    match found {
        Some(a) => Ok(a.boxes.clone()),
        None => fail(
            "load annotations",
            format!("{}: no record for {image_path}", path.display()),
        ),
    }
}

fn cmd_encode(a: EncodeArgs) -> Result<(), Failure> {
    let anns = parse_annotations(&read_text(&a.ann, "load annotations")?, a.format)?;
    let grid = GridSpec::for_image(a.size.0, a.size.1, a.stride).stage("encode")?;
    let many = anns.len() > 1;
    let mut out = String::new();
    for ann in &anns {
        if many {
            out.push_str(&format!("# {}\n", ann.image_path));
        }
        out.push_str(&gridcodec::encode(&ann.boxes, grid).stage("encode")?.dump());
    }
    print!("{out}");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common)?;
    let mut synth = cfg.synth_cfg();
    if let Some(count) = a.count {
        synth.count = count;
    }
    let scenes = datasets::synth_generate(&synth).stage("synth")?;
    let splits = datasets::split_manifest(scenes.len(), cfg.split, synth.seed).stage("split")?;
    let mut split_of = vec![Split::Train; scenes.len()];
    for m in &splits {
        for &i in &m.entries {
            split_of[i] = m.split;
        }
    }
    let files: Vec<(String, String, Vec<u8>, String)> = scenes
        .par_iter()
        .map(|(img, ann)| {
            let stem = ann.image_path.trim_end_matches(".ppm");
            let image_rel = format!("images/{stem}.ppm");
            let ann_rel = format!("annotations/{stem}.txt");
            let rel = Annotation {
                image_path: image_rel.clone(),
                ..ann.clone()
            };
            let text = datasets::serialize_pennfudan(&rel, img.width(), img.height(), img.channels());
            (image_rel, ann_rel, raster::save_pnm(img), text)
        })
        .collect();
    let mut rows = Vec::with_capacity(files.len());
    for ((image_rel, ann_rel, bytes, text), split) in files.into_iter().zip(split_of) {
        write(&a.out.join(&image_rel), bytes, "write synth")?;
        write(&a.out.join(&ann_rel), text, "write synth")?;
        rows.push(ManifestRow {
            image_path: image_rel,
            annotation_path: ann_rel,
            split,
        });
    }
    write(&a.out.join("manifest.tsv"), datasets::format_manifest(&rows), "write synth")?;
    Ok(())
}

/// One manifest entry loaded at network resolution.
struct Entry {
    id: String,
    sample: Sample,
    /// Original size divided by network size, per axis.
    scale: (f64, f64),
}

fn manifest_rows(manifest: &Path, split: Split) -> Result<(PathBuf, Vec<ManifestRow>), Failure> {
    let rows = datasets::parse_manifest(&read_text(manifest, "load manifest")?).stage("load manifest")?;
    let base = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    Ok((base, rows.into_iter().filter(|r| r.split == split).collect()))
}

fn scale_box(b: &BBox, sx: f64, sy: f64) -> Option<BBox> {
    BBox::new(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy).ok()
}

fn load_entries(
    manifest: &Path,
    split: Split,
    net: &NetConfig,
    external: Option<&Path>,
) -> Result<Vec<Entry>, Failure> {
    let (base, rows) = manifest_rows(manifest, split)?;
    rows.par_iter()
        .map(|row| {
            let img = load_image(&base.join(&row.image_path))?;
            if img.channels() != net.input_channels {
                return fail(
                    "load image",
                    format!(
                        "{}: {} channels, network expects {}",
                        row.image_path,
                        img.channels(),
                        net.input_channels
                    ),
                );
            }
            let boxes = annotation_for(&base.join(&row.annotation_path), &row.image_path, AnnFormat::Auto)?;
            let sx = img.width() as f64 / net.input_w as f64;
            let sy = img.height() as f64 / net.input_h as f64;
            let resized = if (img.width(), img.height()) == (net.input_w, net.input_h) {
                img
            } else {
                raster::resize_bilinear(&img, net.input_w, net.input_h)
            };
            let scaled = boxes.iter().filter_map(|b| scale_box(b, 1.0 / sx, 1.0 / sy)).collect();
            let mut sample = Sample::new(resized, scaled);
            if let Some(dir) = external {
                sample.saliency = Some(load_map(dir, &row.image_path, net)?);
            }
            Ok(Entry {
                id: row.image_path.clone(),
                sample,
                scale: (sx, sy),
            })
        })
        .collect()
}

/// External maps live at `<dir>/<image stem>.pgm`.
fn load_map(dir: &Path, image_path: &str, net: &NetConfig) -> Result<SaliencyMap, Failure> {
    let stem = Path::new(image_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let path = dir.join(format!("{stem}.pgm"));
    saliency::load_external_map(&read(&path, "load saliency map")?, net.input_w, net.input_h).map_err(
        |e| Failure {
            stage: "load saliency map",
            msg: format!("{}: {e}", path.display()),
        },
    )
}

fn saliency_settings(
    cfg: &RunConfig,
    choice: Option<&SaliencyChoice>,
) -> Result<(SaliencySettings, Option<PathBuf>), Failure> {
    let mut settings = cfg.saliency_settings().stage("config")?;
    let dir = match choice {
        Some(SaliencyChoice::Off) => {
            settings.mode = SaliencyMode::Off;
            None
        }
        Some(SaliencyChoice::Builtin) => {
            settings.mode = SaliencyMode::Builtin;
            None
        }
        Some(SaliencyChoice::External(dir)) => {
            settings.mode = SaliencyMode::External;
            Some(dir.clone())
        }
        None if settings.mode == SaliencyMode::External => {
            return fail("saliency", "external saliency needs --saliency external:<dir>");
        }
        None => None,
    };
    Ok((settings, dir))
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
        cfg.train.lr_decay_start_epoch = cfg.train.lr_decay_start_epoch.min(e);
    }
    if let Some(i) = a.iterations {
        cfg.train.iterations_per_epoch = i;
    }
    let (sal, dir) = saliency_settings(&cfg, a.saliency.as_ref())?;
    let train_set = load_entries(&a.manifest, Split::Train, &cfg.net, dir.as_deref())?;
    let val_set = load_entries(&a.manifest, Split::Val, &cfg.net, dir.as_deref())?;
    let samples: Vec<Sample> = train_set.into_iter().map(|e| e.sample).collect();
    let val: Vec<Sample> = val_set.into_iter().map(|e| e.sample).collect();
    let outcome =
        training::train_with_validation(&samples, &val, &cfg.train, &cfg.net, cfg.weights, &sal)
            .stage("train")?;
    write(&a.out, network::save_checkpoint(&outcome.params, &cfg.net), "write checkpoint")?;
    let trace_path = a.trace.unwrap_or_else(|| with_suffix(&a.out, ".trace"));
    write(&trace_path, training::format_trace(&outcome.trace), "write trace")?;
    if let (Some(first), Some(last)) = (
        outcome.epoch_mean_loss(0),
        outcome.epoch_mean_loss(cfg.train.epochs.saturating_sub(1)),
    ) {
        println!("epoch loss {first:.4} -> {last:.4}");
    }
    if let Some(acc) = outcome.val_accuracy.last() {
        println!("val accuracy {acc:.4}");
    }
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common)?;
    let params = network::load_checkpoint(&read(&a.ckpt, "load checkpoint")?, &cfg.net)
        .stage("load checkpoint")?;
    let (sal, dir) = saliency_settings(&cfg, a.saliency.as_ref())?;
    let entries = load_entries(&a.manifest, a.split, &cfg.net, dir.as_deref())?;
    let results: Vec<Vec<Detection>> = entries
        .par_iter()
        .map(|e| {
            let dets = inference::detect(
                &params,
                &cfg.net,
                &e.sample.image,
                &sal,
                e.sample.saliency.as_ref(),
                &cfg.cluster,
            )
            .stage("detect")?;
            let (sx, sy) = e.scale;
            Ok(dets
                .into_iter()
                .filter_map(|d| {
                    Some(Detection {
                        bbox: scale_box(&d.bbox, sx, sy)?,
                        ..d
                    })
                })
                .collect())
        })
        .collect::<Result<_, Failure>>()?;
    let text = inference::format_detections(
        entries.iter().zip(&results).map(|(e, d)| (e.id.as_str(), d.as_slice())),
    );
    write(&a.out, text, "write detections")
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.iou) || a.iou == 0.0 {
        return fail("eval", format!("iou {} outside (0,1]", a.iou));
    }
    let rows = inference::parse_detections(&read_text(&a.dets, "load detections")?)
        .stage("load detections")?;
    let (base, manifest) = manifest_rows(&a.manifest, a.split)?;
    let gts = manifest
        .par_iter()
        .map(|r| annotation_for(&base.join(&r.annotation_path), &r.image_path, AnnFormat::Auto))
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_image: Vec<eval::ImageResult> =
        gts.into_iter().map(|g| (Vec::new(), g)).collect();
    for (id, det) in rows {
        match manifest.iter().position(|r| r.image_path == id) {
            Some(k) => per_image[k].0.push(det),
            None => return fail("eval", format!("detection for {id}, which is not in the {} split", a.split.as_str())),
        }
    }
    let report = eval::evaluate(&per_image, a.iou).stage("eval")?;
    write(&a.out, report.to_text(), "write report")?;
    let curve_path = a.curve.unwrap_or_else(|| with_suffix(&a.out, ".curve"));
    write(&curve_path, eval::format_curve(&report.curve), "write curve")?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<(), Failure> {
    let img = load_image(&a.input)?;
    let image_path = a.input.to_string_lossy().into_owned();
    let boxes = annotation_for(&a.ann, &image_path, a.format)?;
    let variants = training::augment(&img, &boxes);
    let mut anns = Vec::with_capacity(variants.len());
    for (k, (vimg, vboxes)) in variants.iter().enumerate() {
        let name = format!("aug_{k:02}.ppm");
        write(&a.out.join(&name), raster::save_pnm(vimg), "write augment")?;
        anns.push(Annotation {
            image_path: name,
            boxes: vboxes.clone(),
            source: datasets::Source::Idl,
        });
    }
    write(&a.out.join("annotations.idl"), datasets::serialize_idl(&anns), "write augment")
}
