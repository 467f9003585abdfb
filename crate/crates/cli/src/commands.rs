use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use handctx::annotation::{derive_dataset, read_annotations, write_annotations, DeriveConfig};
use handctx::checks::{attention_gradients, detector_gradients, orientation_gradients, GradientReport};
use handctx::detector::{
    self, context_matrix, data_volume_matrix, evaluate_scenes, generate_scenes, generate_val_scenes, prepare,
    read_checkpoint, write_checkpoint, DetectorConfig, EpochLog, PreparedScene,
};
use handctx::evaluation::{
    emit_pr_curve, evaluate, format_detections, format_metrics, read_detections, read_pr_csv, render_svg, EvalConfig,
    Evaluation, GroundTruthBox, Interpolation,
};
use handctx::tensor::Fault;

use crate::settings::{apply, flags, write_resolved, Pairs, SettingArgs};
use crate::Outcome;

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn config_error(msg: String) -> anyhow::Error {
    handctx::Error::Config(msg).into()
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    settings: SettingArgs,
    /// Feature-map height
    #[arg(long)]
    h: Option<usize>,
    /// Feature-map width
    #[arg(long)]
    w: Option<usize>,
    /// Channels
    #[arg(long)]
    m: Option<usize>,
    /// Part categories
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also check the end-to-end toy detector loss
    #[arg(long)]
    detector: bool,
    /// Directory for the resolved config and report
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corrupt a backward rule to confirm the check can fail
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

#[derive(Debug, PartialEq)]
struct GradcheckConfig {
    h: usize,
    w: usize,
    m: usize,
    k: usize,
    seed: u64,
    detector: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 4,
            w: 4,
            m: 4,
            k: 3,
            seed: 0,
            detector: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> handctx::Result<T> {
    value
        .parse()
        .map_err(|_| handctx::Error::Config(format!("`{value}` is not a valid value for `{key}`")))
}

impl GradcheckConfig {
    fn set(&mut self, key: &str, value: &str) -> handctx::Result<()> {
        match key {
            "h" => self.h = parse(key, value)?,
            "w" => self.w = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "k" | "parts" => self.k = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "detector" => self.detector = parse(key, value)?,
            _ => return Err(handctx::Error::Config(format!("unknown gradcheck setting `{key}`"))),
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        format!(
            "h={}\nw={}\nm={}\nk={}\nseed={}\ndetector={}\n",
            self.h, self.w, self.m, self.k, self.seed, self.detector
        )
    }
}

pub fn gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let pairs = a.settings.resolve(flags([
        ("h", a.h.map(|v| v.to_string())),
        ("w", a.w.map(|v| v.to_string())),
        ("m", a.m.map(|v| v.to_string())),
        ("k", a.k.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("detector", a.detector.then(|| "true".to_string())),
    ]))?;
    let mut cfg = GradcheckConfig::default();
    apply(&mut cfg, &pairs, GradcheckConfig::set)?;
    let fault = a.corrupt_backward.then_some(Fault::MatmulBackward);

    let mut report: GradientReport = attention_gradients(cfg.h, cfg.w, cfg.m, cfg.k, cfg.seed, fault)?;
    report.extend(orientation_gradients(cfg.seed, 64, fault));
    if cfg.detector {
        report.extend(detector_gradients(cfg.seed)?);
    }
    let text = report.to_text();
    print!("{text}");
    println!("max relative error {:.3e}", report.max_error());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_resolved(out, &cfg.to_kv())?;
        write(&out.join("gradcheck.txt"), &text)?;
    }
    Ok(if report.passed() { Outcome::Done } else { Outcome::CheckFailed })
}

// ------------------------------------------------------------------- derive

#[derive(Args, Debug)]
pub struct DeriveArgs {
    #[command(flatten)]
    settings: SettingArgs,
    /// Keypoint detections file
    #[arg(long)]
    detections: PathBuf,
    /// Annotated person keypoints file
    #[arg(long)]
    keypoints: PathBuf,
    /// Directory of `<image_id>.ppm` images
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Padding added to every side of an emitted rectangle, in pixels
    #[arg(long)]
    padding: Option<f64>,
}

pub fn derive(a: DeriveArgs) -> Result<Outcome> {
    let pairs = a.settings.resolve(flags([("padding", a.padding.map(|v| v.to_string()))]))?;
    let mut cfg = DeriveConfig::default();
    apply(&mut cfg, &pairs, |c, k, v| match k {
        "padding" => {
            c.padding = parse(k, v)?;
            Ok(())
        }
        _ => Err(handctx::Error::Config(format!("unknown derive setting `{k}`"))),
    })?;
    cfg.validate()?;
    for p in [&a.detections, &a.keypoints] {
        if !p.is_file() {
            return Err(handctx::Error::Usage(format!("input file {} does not exist", p.display())).into());
        }
    }
    create_dir(&a.out)?;
    write_resolved(&a.out, &format!("padding={}\n", cfg.padding))?;
    let report = derive_dataset(&a.detections, &a.keypoints, &a.images, &a.out, &cfg)?;
    println!(
        "detections {} kept {} rejected {} degenerate {} images_written {} images_discarded {}",
        report.detections, report.kept, report.rejected, report.degenerate, report.images_written, report.images_discarded
    );
    Ok(Outcome::Done)
}

// --------------------------------------------------------- detector configs

#[derive(Args, Debug)]
pub struct DetectorFlags {
    #[command(flatten)]
    settings: SettingArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Orientation loss weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Part categories
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    val_scenes: Option<usize>,
}

impl DetectorFlags {
    fn resolve(&self) -> Result<DetectorConfig> {
        let pairs: Pairs = self.settings.resolve(flags([
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("parts", self.k.map(|v| v.to_string())),
            ("train_scenes", self.train_scenes.map(|v| v.to_string())),
            ("val_scenes", self.val_scenes.map(|v| v.to_string())),
        ]))?;
        let mut cfg = DetectorConfig::default();
        apply(&mut cfg, &pairs, DetectorConfig::set)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn prepared(scenes: Vec<detector::SyntheticScene>, cfg: &DetectorConfig) -> Vec<PreparedScene> {
    scenes.iter().map(|s| prepare(s, cfg)).collect()
}

// -------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    detector: DetectorFlags,
    #[arg(long)]
    out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<Outcome> {
    let cfg = a.detector.resolve()?;
    create_dir(&a.out)?;
    write_resolved(&a.out, &cfg.to_kv())?;
    let train_set = prepared(generate_scenes(cfg.train_scenes, cfg.seed, &cfg.scene)?, &cfg);
    let val_set = prepared(generate_val_scenes(cfg.val_scenes, cfg.seed, &cfg.scene)?, &cfg);
    let out = detector::train(&cfg, &train_set, &val_set, |_| {})?;
    for l in &out.log {
        println!("epoch {:>3} lr {:.0e} loss {:.6} val_ap {:.4}", l.epoch, l.learning_rate, l.train_loss, l.val_ap);
    }
    write(&a.out.join("metrics.csv"), EpochLog::csv(&out.log))?;
    write_checkpoint(&a.out.join("checkpoint.bin"), &cfg, &out.params)?;
    if let Some(e) = out.divergence_error() {
        return Err(e.into());
    }
    Ok(Outcome::Done)
}

// --------------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    settings: SettingArgs,
    /// Detections, one `image_id x_min y_min x_max y_max score [theta]` per line
    #[arg(long, conflicts_with = "checkpoint", requires = "ground_truth")]
    detections: Option<PathBuf>,
    /// Hand annotations to score against
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Evaluate a trained detector on its validation scenes instead
    #[arg(long, required_unless_present = "detections")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iou: Option<f64>,
    /// Use 11-point interpolated AP
    #[arg(long)]
    eleven_point: bool,
}

fn set_eval(c: &mut EvalConfig, k: &str, v: &str) -> handctx::Result<()> {
    match k {
        "iou_threshold" | "iou" => c.iou_threshold = parse(k, v)?,
        "interpolation" => {
            c.interpolation = match v {
                "all" => Interpolation::AllPoints,
                "11" | "eleven" => Interpolation::ElevenPoint,
                _ => return Err(handctx::Error::Config(format!("interpolation must be `all` or `11`, got `{v}`"))),
            }
        }
        "orientation_thresholds" => {
            c.orientation_thresholds_deg = v.split(',').map(|t| parse(k, t.trim())).collect::<handctx::Result<_>>()?
        }
        _ => return Err(handctx::Error::Config(format!("unknown eval setting `{k}`"))),
    }
    Ok(())
}

fn eval_kv(c: &EvalConfig) -> String {
    let thresholds: Vec<String> = c.orientation_thresholds_deg.iter().map(f64::to_string).collect();
    let interp = match c.interpolation {
        Interpolation::AllPoints => "all",
        Interpolation::ElevenPoint => "11",
    };
    format!(
        "iou_threshold={}\ninterpolation={interp}\norientation_thresholds={}\n",
        c.iou_threshold,
        thresholds.join(",")
    )
}

fn write_evaluation(out: &Path, e: &Evaluation<f64>, cfg: &EvalConfig) -> Result<()> {
    let metrics = format_metrics(e, &cfg.orientation_thresholds_deg);
    print!("{metrics}");
    write(&out.join("metrics.txt"), metrics)?;
    emit_pr_curve(&e.curve, &out.join("pr"), "precision / recall")?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<Outcome> {
    let pairs = a.settings.resolve(flags([
        ("iou_threshold", a.iou.map(|v| v.to_string())),
        ("interpolation", a.eleven_point.then(|| "11".to_string())),
    ]))?;
    let mut cfg = EvalConfig::default();
    apply(&mut cfg, &pairs, set_eval)?;
    cfg.validate()?;
    create_dir(&a.out)?;

    if let Some(ckpt) = &a.checkpoint {
        let (dcfg, params) = read_checkpoint(ckpt)?;
        let val_set = prepared(generate_val_scenes(dcfg.val_scenes, dcfg.seed, &dcfg.scene)?, &dcfg);
        let mut dets = Vec::new();
        for s in &val_set {
            for p in detector::infer(&params, &s.input, &dcfg)? {
                let id = dets.len();
                dets.push(p.into_result(id, &s.id));
            }
        }
        let mut gts = Vec::new();
        for s in &val_set {
            gts.extend(s.scene.annotations());
        }
        write(&a.out.join("detections.txt"), format_detections(&dets))?;
        write_annotations(&gts, &a.out.join("ground_truth.txt"))?;
        write_resolved(&a.out, &format!("{}{}", eval_kv(&cfg), dcfg.to_kv()))?;
        let e = if cfg == EvalConfig::default() {
            evaluate_scenes(&params, &val_set, &dcfg)?
        } else {
            let boxes = gts
                .iter()
                .map(|g| GroundTruthBox::from_quad(g.image_id.clone(), &g.quad, g.wrist_side))
                .collect::<handctx::Result<Vec<_>>>()?;
            evaluate(&dets, &boxes, &cfg)?
        };
        write_evaluation(&a.out, &e, &cfg)?;
        return Ok(Outcome::Done);
    }

    let (Some(det_path), Some(gt_path)) = (&a.detections, &a.ground_truth) else {
        bail!(handctx::Error::Usage("eval needs --detections with --ground-truth, or --checkpoint".into()));
    };
    let dets = read_detections(det_path)?;
    let gts = read_annotations(gt_path)?
        .iter()
        .map(|g| GroundTruthBox::from_quad(g.image_id.clone(), &g.quad, g.wrist_side))
        .collect::<handctx::Result<Vec<_>>>()?;
    write_resolved(&a.out, &eval_kv(&cfg))?;
    let e = evaluate(&dets, &gts, &cfg)?;
    write_evaluation(&a.out, &e, &cfg)?;
    Ok(Outcome::Done)
}

// ------------------------------------------------------------------- ablate

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Matrix {
    /// Full, similarity-only, semantic-only and no context
    Context,
    /// Training-set sizes at a fixed number of scene visits
    Data,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    detector: DetectorFlags,
    #[arg(long, value_enum, default_value_t = Matrix::Context)]
    matrix: Matrix,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Comma-separated training-set sizes for `--matrix data`
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600")]
    sizes: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn ablate(a: AblateArgs) -> Result<Outcome> {
    let base = a.detector.resolve()?;
    let configs = match a.matrix {
        Matrix::Context => context_matrix(&base),
        Matrix::Data => data_volume_matrix(&base, &a.sizes)?,
    };
    create_dir(&a.out)?;
    let mut resolved = base.to_kv();
    let seeds: Vec<String> = a.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(resolved, "matrix={:?}", a.matrix);
    let _ = writeln!(resolved, "seeds={}", seeds.join(","));
    if a.matrix == Matrix::Data {
        let sizes: Vec<String> = a.sizes.iter().map(usize::to_string).collect();
        let _ = writeln!(resolved, "sizes={}", sizes.join(","));
    }
    write_resolved(&a.out, &resolved)?;
    let table = detector::ablate(&configs, &a.seeds, |name, run| match &run.result {
        Ok(ap) => eprintln!("{name} seed {} ap {ap:.4}", run.seed),
        Err(e) => eprintln!("{name} seed {} failed: {e}", run.seed),
    })?;
    let text = table.to_text();
    print!("{text}");
    write(&a.out.join("ablation.txt"), &text)?;
    write(&a.out.join("ablation.csv"), table.to_csv())?;
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------- gen

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    detector: DetectorFlags,
    /// Number of scenes
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

pub fn gen(a: GenArgs) -> Result<Outcome> {
    let cfg = a.detector.resolve()?;
    let scenes = match a.split {
        Split::Train => generate_scenes(a.n, cfg.seed, &cfg.scene)?,
        Split::Val => generate_val_scenes(a.n, cfg.seed, &cfg.scene)?,
    };
    let images = a.out.join("images");
    create_dir(&images)?;
    write_resolved(&a.out, &format!("{}count={}\nsplit={:?}\n", cfg.to_kv(), a.n, a.split))?;
    let mut annotations = Vec::new();
    for s in &scenes {
        s.image.write(&images.join(format!("{}.ppm", s.id)))?;
        annotations.extend(s.annotations());
    }
    write_annotations(&annotations, &a.out.join("annotations.txt"))?;
    println!("{} scenes, {} hands", scenes.len(), annotations.len());
    Ok(Outcome::Done)
}

// --------------------------------------------------------------------- plot

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// `recall,precision` CSV
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "precision / recall")]
    title: String,
}

pub fn plot(a: PlotArgs) -> Result<Outcome> {
    let curve = read_pr_csv::<f64>(&a.input)?;
    curve.validate().map_err(|e| config_error(format!("{}: {e}", a.input.display())))?;
    create_dir(&a.out)?;
    write_resolved(&a.out, &format!("input={}\ntitle={}\n", a.input.display(), a.title))?;
    write(&a.out.join("pr.svg"), render_svg(&curve, &a.title))?;
    println!("{} points", curve.points.len());
    Ok(Outcome::Done)
}
