//! The `cigan` command line: train, enhance, degrade, evaluate and ablate.
//!
//! Exit codes are stable: 0 on success, 2 for usage or configuration problems (the
//! offending key or file is named), 3 when work that had started fails.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cigan_core::config::VARIANTS;
use cigan_core::data::{build_unpaired_dataset, list_images};
use cigan_core::generators::{degrade, enhance};
use cigan_core::imaging::{load_image, resize_nearest, save_image, to_rgb};
use cigan_core::metrics::{default_gamma_grid, evaluate_dir, MetricRow};
use cigan_core::training::{fit, load_checkpoint, FitPaths, Model, TrainState};
use cigan_core::{CiganError, ImageTensor, Rng, RunConfig};
use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Relative output paths resolve against this directory when it is set; a run without an
/// explicit output directory goes to `$CIGAN_OUTPUT_ROOT/<config stem>`.
pub const OUTPUT_ROOT_ENV: &str = "CIGAN_OUTPUT_ROOT";

/// Resolved configuration written by `train` and by every `ablate` run.
pub const SNAPSHOT: &str = "config.toml";
/// Resolved invocation written by `enhance` and `degrade` next to their images.
pub const COMMAND_SNAPSHOT: &str = "cigan-run.toml";
pub const ABLATION_CSV: &str = "ablation.csv";

#[derive(Debug, Parser)]
#[command(name = "cigan", version, about = "Unpaired low-light enhancement and degradation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both generators and discriminators from a run file.
    Train(TrainArgs),
    /// Enhance every image of a directory with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Synthesize low-light versions of a directory, guided by low-light references.
    Degrade(DegradeArgs),
    /// Score predictions against same-named ground truth; writes the report CSV.
    Evaluate(EvaluateArgs),
    /// Retrain with components switched off and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` from the run file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory (or manifest) of low-light reference images.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the random feature perturbation.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Ground truth.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Run file supplying the gamma sweep; the default sweep otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated; defaults to every variant.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train the variants concurrently instead of one after another.
    #[arg(long)]
    pub parallel: bool,
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: CiganError,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

trait Stage<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T> Stage<T> for cigan_core::Result<T> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|error| Failure { code: EXIT_USAGE, error })
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|error| Failure { code: EXIT_RUNTIME, error })
    }
}

fn usage_error<T>(message: String) -> Result<T, Failure> {
    Err(Failure {
        code: EXIT_USAGE,
        error: CiganError::Config(message),
    })
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Degrade(a) => cmd_degrade(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Applies the output-root override to an explicit path.
pub fn resolve_out(path: &Path) -> PathBuf {
    match output_root() {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_owned(),
    }
}

/// Output directory of a run: `--out`, else the output root, else the run file's
/// `out_dir`, else `runs/<stem>` next to the run file.
pub fn run_dir(explicit: Option<&Path>, configured: Option<&Path>, config: &Path) -> PathBuf {
    let stem = config.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    if let Some(p) = explicit {
        return resolve_out(p);
    }
    if let Some(root) = output_root() {
        return root.join(stem);
    }
    if let Some(p) = configured {
        return p.to_owned();
    }
    config.parent().unwrap_or(Path::new(".")).join("runs").join(stem)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CiganError::io(dir, e)).runtime()?;
    }
    fs::write(path, text).map_err(|e| CiganError::io(path, e)).runtime()
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut rc = RunConfig::load(path).usage()?;
    if let Some(s) = seed {
        rc.train.seed = s;
        rc.train.validate().usage()?;
    }
    Ok(rc)
}

fn dataset_dirs(rc: &RunConfig, config: &Path) -> Result<(PathBuf, PathBuf), Failure> {
    let need = |v: &Option<PathBuf>, key: &str| match v {
        Some(p) => Ok(p.clone()),
        None => usage_error(format!("{}: {key} is required", config.display())),
    };
    Ok((need(&rc.paths.normal_dir, "normal_dir")?, need(&rc.paths.low_dir, "low_dir")?))
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let mut rc = load_run_config(&a.config, a.seed)?;
    let (normal, low) = dataset_dirs(&rc, &a.config)?;
    let out = run_dir(a.out.as_deref(), rc.paths.out_dir.as_deref(), &a.config);
    rc.paths.out_dir = Some(out.clone());
    write_text(&out.join(SNAPSHOT), &rc.to_toml())?;
    if let Some(c) = &a.checkpoint {
        if !c.is_file() {
            return usage_error(format!("checkpoint {} does not exist", c.display()));
        }
    }
    let mut ds = build_unpaired_dataset(&normal, &low, rc.train.crop).usage()?;
    let last = fit(&rc.train, &mut ds, &out, a.checkpoint.as_deref()).runtime()?;
    log::info!("training done; last checkpoint {}", last.display());
    if let (Some(el), Some(eg)) = (&rc.paths.eval_low_dir, &rc.paths.eval_gt_dir) {
        let row = evaluate_checkpoint(&last, el, eg, &out.join("eval"), &rc)?;
        log::info!("eval: psnr {:.3} psnr_gc {:.3} ssim {:.4} ssim_gc {:.4}", row.psnr, row.psnr_gc, row.ssim, row.ssim_gc);
    }
    Ok(())
}

fn load_model(checkpoint: &Path) -> Result<(Model, TrainState), Failure> {
    if !checkpoint.is_file() {
        return usage_error(format!("checkpoint {} does not exist", checkpoint.display()));
    }
    load_checkpoint(checkpoint).runtime()
}

fn input_images(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let paths = list_images(dir).usage()?;
    if paths.is_empty() {
        return usage_error(format!("no images in {}", dir.display()));
    }
    Ok(paths)
}

fn output_name(input: &Path) -> PathBuf {
    let stem = input.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from(format!("{stem}.png"))
}

/// Snapshot of a checkpoint-driven command: its arguments plus the stored configuration.
fn command_snapshot(command: &str, args: &[(&str, toml::Value)], model: &Model) -> String {
    let mut table = toml::Table::new();
    table.insert("command".into(), command.into());
    for (k, v) in args {
        table.insert((*k).into(), v.clone());
    }
    let train = RunConfig {
        train: model.cfg.clone(),
        ..RunConfig::default()
    };
    let train: toml::Table = train.to_toml().parse().expect("snapshot is valid toml");
    table.insert("train".into(), toml::Value::Table(train));
    toml::to_string(&table).expect("table serializes")
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

/// Applies `f` to every decodable image, writing `<stem>.png` into `out`. Images that fail
/// are skipped with a warning; the command fails only when nothing was written.
fn map_images(
    inputs: &[PathBuf],
    out: &Path,
    mut f: impl FnMut(usize, &ImageTensor) -> cigan_core::Result<ImageTensor>,
) -> Result<usize, Failure> {
    let mut written = 0;
    for (i, path) in inputs.iter().enumerate() {
        let result = load_image(path).and_then(|img| f(i, &to_rgb(&img)));
        match result {
            Ok(img) => {
                save_image(&img, &out.join(output_name(path))).runtime()?;
                written += 1;
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if written == 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            error: CiganError::Data(format!("none of the {} inputs could be processed", inputs.len())),
        });
    }
    Ok(written)
}

pub fn cmd_enhance(a: &EnhanceArgs) -> Result<(), Failure> {
    let inputs = input_images(&a.input)?;
    let out = resolve_out(&a.out);
    let (model, state) = load_model(&a.checkpoint)?;
    let snapshot = command_snapshot(
        "enhance",
        &[("checkpoint", path_value(&a.checkpoint)), ("in", path_value(&a.input)), ("out", path_value(&out))],
        &model,
    );
    write_text(&out.join(COMMAND_SNAPSHOT), &snapshot)?;
    let n = map_images(&inputs, &out, |_, img| enhance(&model.gens.enhance, &model.encoder, &state.gen, img))?;
    log::info!("enhanced {n} of {} images into {}", inputs.len(), out.display());
    Ok(())
}

pub fn cmd_degrade(a: &DegradeArgs) -> Result<(), Failure> {
    let inputs = input_images(&a.input)?;
    let refs = input_images(&a.reference)?;
    let out = resolve_out(&a.out);
    let (model, state) = load_model(&a.checkpoint)?;
    let snapshot = command_snapshot(
        "degrade",
        &[
            ("checkpoint", path_value(&a.checkpoint)),
            ("in", path_value(&a.input)),
            ("ref", path_value(&a.reference)),
            ("out", path_value(&out)),
            ("seed", toml::Value::Integer(a.seed as i64)),
            ("deterministic", toml::Value::Boolean(a.deterministic)),
        ],
        &model,
    );
    write_text(&out.join(COMMAND_SNAPSHOT), &snapshot)?;
    let mut rng = Rng::new(a.seed);
    let mut cache: HashMap<usize, ImageTensor> = HashMap::new();
    let n = map_images(&inputs, &out, |_, img| {
        let k = rng.below(refs.len());
        if !cache.contains_key(&k) {
            cache.insert(k, to_rgb(&load_image(&refs[k])?));
        }
        let s = img.shape();
        let reference = resize_nearest(&cache[&k], s.height(), s.width());
        degrade(&model.gens.degrade, &model.encoder, &state.gen, img, &reference, &mut rng, a.deterministic)
    })?;
    log::info!("degraded {n} of {} images into {}", inputs.len(), out.display());
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let grid = match &a.config {
        Some(c) => load_run_config(c, None)?.train.gamma_grid(),
        None => default_gamma_grid(),
    };
    let report = evaluate_dir(&a.input, &a.reference, &grid).map_err(|error| {
        let code = match error {
            CiganError::Data(_) | CiganError::Io { .. } => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    })?;
    let out = resolve_out(&a.out);
    write_text(&out, &report.to_csv().runtime()?)?;
    let m = &report.mean;
    log::info!(
        "{} images: psnr {:.3} psnr_gc {:.3} ssim {:.4} ssim_gc {:.4}",
        report.rows.len(),
        m.psnr,
        m.psnr_gc,
        m.ssim,
        m.ssim_gc
    );
    Ok(())
}

/// Enhances `low_dir` into `out` and scores it against `gt_dir`; returns the mean row.
fn evaluate_checkpoint(checkpoint: &Path, low_dir: &Path, gt_dir: &Path, out: &Path, rc: &RunConfig) -> Result<MetricRow, Failure> {
    cmd_enhance(&EnhanceArgs {
        checkpoint: checkpoint.to_owned(),
        input: low_dir.to_owned(),
        out: out.to_owned(),
    })?;
    let report = evaluate_dir(out, gt_dir, &rc.train.gamma_grid()).runtime()?;
    report.write_csv(&out.join("metrics.csv")).runtime()?;
    Ok(report.mean)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub toggles: [bool; 6],
    pub steps: usize,
    /// Means over the last epoch's logged steps: lg_total, ld_total, l_exp, l_con, l_per.
    pub losses: [f64; 5],
    pub metrics: Option<MetricRow>,
}

pub const ABLATION_HEADER: &str =
    "variant,lgt,frp,dam,mfpd,lip,exp_loss,steps,lg_total,ld_total,l_exp,l_con,l_per,psnr,psnr_gc,ssim,ssim_gc";

impl AblationRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = self.variant.clone();
        for t in self.toggles {
            s.push_str(if t { ",1" } else { ",0" });
        }
        s.push_str(&format!(",{}", self.steps));
        for v in self.losses {
            s.push_str(&format!(",{v}"));
        }
        match &self.metrics {
            Some(m) => s.push_str(&format!(",{},{},{},{}", m.psnr, m.psnr_gc, m.ssim, m.ssim_gc)),
            None => s.push_str(",,,,"),
        }
        s
    }
}

/// Last-epoch means of the logged losses and the number of steps.
fn summarize_losses(csv: &Path) -> cigan_core::Result<(usize, [f64; 5])> {
    let text = fs::read_to_string(csv).map_err(|e| CiganError::io(csv, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    let last = rows.last().ok_or_else(|| CiganError::Data(format!("{} has no rows", csv.display())))?;
    let epoch = last[1];
    let tail: Vec<&Vec<f64>> = rows.iter().filter(|r| r[1] == epoch).collect();
    // step,epoch,lg_adv_L,lg_adv_N,l_exp,l_con,l_per,lg_total,ld_L,ld_N,ld_total,lr
    let mean = |c: usize| tail.iter().map(|r| r[c]).sum::<f64>() / tail.len() as f64;
    Ok((last[0] as usize, [mean(7), mean(10), mean(4), mean(5), mean(6)]))
}

fn ablation_run(variant: &str, base: &RunConfig, config: &Path, root: &Path) -> Result<AblationRow, Failure> {
    let mut rc = base.clone();
    if variant != "full" {
        rc.train.disable(variant).usage()?;
    }
    let dir = root.join(variant);
    rc.paths.out_dir = Some(dir.clone());
    write_text(&dir.join(SNAPSHOT), &rc.to_toml())?;
    let (normal, low) = dataset_dirs(&rc, config)?;
    let mut ds = build_unpaired_dataset(&normal, &low, rc.train.crop).usage()?;
    log::info!("ablation variant {variant}: training into {}", dir.display());
    let last = fit(&rc.train, &mut ds, &dir, None).runtime()?;
    let (steps, losses) = summarize_losses(&FitPaths::new(&dir).losses_csv).runtime()?;
    let metrics = match (&rc.paths.eval_low_dir, &rc.paths.eval_gt_dir) {
        (Some(el), Some(eg)) => Some(evaluate_checkpoint(&last, el, eg, &dir.join("eval"), &rc)?),
        _ => None,
    };
    let t = &rc.train;
    Ok(AblationRow {
        variant: variant.to_owned(),
        toggles: [t.lgt, t.frp, t.dam, t.mfpd, t.lip, t.exp_loss],
        steps,
        losses,
        metrics,
    })
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<(), Failure> {
    let mut rc = load_run_config(&a.config, a.seed)?;
    let mut variants: Vec<String> = if a.variants.is_empty() {
        VARIANTS.iter().map(|v| v.to_string()).collect()
    } else {
        a.variants.iter().map(|v| v.trim().to_owned()).collect()
    };
    for v in &variants {
        if !VARIANTS.contains(&v.as_str()) {
            return usage_error(format!("unknown variant {v:?}; expected one of {VARIANTS:?}"));
        }
    }
    dataset_dirs(&rc, &a.config)?;
    let mut seen = std::collections::HashSet::new();
    variants.retain(|v| seen.insert(v.clone()));
    variants.insert(0, "full".into());
    let root = run_dir(a.out.as_deref(), rc.paths.out_dir.as_deref(), &a.config);
    rc.paths.out_dir = Some(root.clone());
    write_text(&root.join(SNAPSHOT), &rc.to_toml())?;

    let rows: Vec<Result<AblationRow, Failure>> = if a.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .map(|v| s.spawn(|| ablation_run(v, &rc, &a.config, &root)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("variant thread panicked")).collect()
        })
    } else {
        variants.iter().map(|v| ablation_run(v, &rc, &a.config, &root)).collect()
    };
    let mut csv = format!("{ABLATION_HEADER}\n");
    for row in rows {
        csv.push_str(&row?.to_csv_line());
        csv.push('\n');
    }
    write_text(&root.join(ABLATION_CSV), &csv)?;
    log::info!("ablation table written to {}", root.join(ABLATION_CSV).display());
    Ok(())
}
