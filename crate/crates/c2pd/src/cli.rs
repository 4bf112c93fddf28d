//! Command-line front end. Every command returns its process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use c2pd_core::guidance::{guidance_from_gt, guidance_from_rgb};
use c2pd_core::pipeline::{run_pipeline, PipelineParams};
use c2pd_core::resample::{bicubic_down, mad_cm, rmse_cm};
use c2pd_core::CapoParams;
use clap::{Args, Parser, Subcommand};

use crate::config::{GuidanceSource, RunConfig};
use crate::error::{Error, Result};
use crate::imageio::{self, DepthUnit};
use crate::selftest::{self, Hooks, GRAD_TOL};
use crate::train::{self, SceneGuidance, SceneSpec, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable capping worker threads.
pub const THREADS_VAR: &str = "C2PD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "c2pd",
    version,
    about = "Continuity-constrained depth super-resolution"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bicubic-downsample a ground-truth depth map.
    Degrade(DegradeArgs),
    /// Run the pipeline on a low-resolution depth map.
    Infer(InferArgs),
    /// Train both stages on synthetic scenes.
    Train(TrainArgs),
    /// Compare a prediction against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Run the invariant suite.
    Selftest,
}

fn parse_unit(s: &str) -> std::result::Result<DepthUnit, String> {
    DepthUnit::parse(s).ok_or_else(|| format!("expected m or cm, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub factor: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_unit, default_value = "cm")]
    pub unit: DepthUnit,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub lr: PathBuf,
    /// Precomputed guidance grid (PFM).
    #[arg(long, conflicts_with = "rgb")]
    pub guide: Option<PathBuf>,
    /// RGB image (PPM) whose luminance becomes the guidance.
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth; enables the error report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// CSV file receiving `file,rmse_cm,mad_cm` (requires --gt).
    #[arg(long, requires = "gt")]
    pub log: Option<PathBuf>,
    /// Optional 8-bit PGM visualization of the output.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Unit of the input depth files; overrides the config.
    #[arg(long, value_parser = parse_unit)]
    pub unit: Option<DepthUnit>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving iso.c2pd, pcgd.c2pd and infer.cfg.
    #[arg(long)]
    pub out_params: PathBuf,
    /// CSV training history `step,l1,rmse`.
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_parser = parse_unit, default_value = "cm")]
    pub unit: DepthUnit,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Reads the thread cap; `None` when the variable is unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(_) => Err(Error::Config(format!("{THREADS_VAR} is not valid UTF-8"))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Parses arguments, runs one command and returns the exit code.
pub fn main_with(cli: Cli, out: &mut impl Write) -> i32 {
    let result = threads_from_env().and_then(|threads| {
        if let Some(n) = threads {
            // Fails only if a pool already exists, e.g. in tests.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        match cli.command {
            Command::Degrade(a) => degrade(&a, out),
            Command::Infer(a) => infer(&a, out),
            Command::Train(a) => train(&a, out),
            Command::Eval(a) => eval(&a, out),
            Command::GradCheck(a) => grad_check(&a, out),
            Command::Selftest => Ok(selftest_with(&Hooks::default(), out)),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn degrade(a: &DegradeArgs, out: &mut impl Write) -> Result<i32> {
    let gt = imageio::read_depth(&a.gt, a.unit)?;
    let lr = bicubic_down(&gt, a.factor)?;
    imageio::write_pfm(&lr, &a.out)?;
    let _ = writeln!(
        out,
        "{}x{} -> {}x{} (factor {}) written to {}",
        gt.height(),
        gt.width(),
        lr.height(),
        lr.width(),
        a.factor,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn load_stage(path: Option<&Path>, key: &str, n: usize, window: &str) -> Result<CapoParams> {
    let path =
        path.ok_or_else(|| Error::Config(format!("{key} is required when the stage is enabled")))?;
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{key}: parameter file {} not found",
            path.display()
        )));
    }
    let params = imageio::read_params(path)?;
    if params.n() != n {
        return Err(Error::Config(format!(
            "{key}: {} holds parameters for {}-cell windows but the configured {window} window has {n}",
            path.display(),
            params.n()
        )));
    }
    Ok(params)
}

/// Loads the parameter files of all enabled stages; disabled stages get
/// zero networks, which are never evaluated.
pub fn load_pipeline_params(cfg: &RunConfig) -> Result<PipelineParams> {
    let p = &cfg.pipeline;
    let mut params = PipelineParams::zeros(p);
    if p.iso.enabled {
        params.iso = load_stage(
            cfg.iso_params.as_deref(),
            "iso.params_path",
            p.iso.shape.n(),
            p.iso.shape.name(),
        )?;
    }
    if p.pcgd.repeat > 0 {
        params.pcgd = load_stage(
            cfg.pcgd_params.as_deref(),
            "pcgd.params_path",
            p.pcgd.shape.n(),
            p.pcgd.shape.name(),
        )?;
    }
    Ok(params)
}

/// Reads a guidance grid stored as PFM (or PGM with range sidecar).
pub fn load_guidance(path: &Path) -> Result<c2pd_core::Grid> {
    imageio::read_depth(path, DepthUnit::Centimeters)
}

pub fn infer(a: &InferArgs, out: &mut impl Write) -> Result<i32> {
    let cfg = RunConfig::load(&a.config)?;
    let unit = a.unit.unwrap_or(cfg.unit);
    let lr = imageio::read_depth(&a.lr, unit)?;
    let gt =
        a.gt.as_deref()
            .map(|p| imageio::read_depth(p, unit))
            .transpose()?;
    let guide = if let Some(path) = &a.guide {
        load_guidance(path)?
    } else if let Some(path) = &a.rgb {
        guidance_from_rgb(&imageio::read_rgb(path)?)?
    } else {
        match cfg.guidance {
            GuidanceSource::File => {
                let path = cfg.guidance_path.as_deref().ok_or_else(|| {
                    Error::Config("guidance.source = file needs guidance.path or --guide".into())
                })?;
                load_guidance(path)?
            }
            GuidanceSource::GtOracle => {
                let gt = gt.as_ref().ok_or_else(|| {
                    Error::Config("guidance.source = gt-oracle needs --gt".into())
                })?;
                guidance_from_gt(gt)?
            }
            GuidanceSource::GrayscaleGradient => {
                return Err(Error::Config(
                    "guidance.source = grayscale-gradient needs --rgb".into(),
                ))
            }
        }
    };
    let params = load_pipeline_params(&cfg)?;
    let pred = run_pipeline(&lr, &guide, &cfg.pipeline, &params)?;
    imageio::write_depth(&pred, &a.out)?;
    if let Some(path) = &a.pgm {
        imageio::write_pgm(&pred, path, 255)?;
    }
    let _ = writeln!(
        out,
        "{}x{} prediction written to {}",
        pred.height(),
        pred.width(),
        a.out.display()
    );
    if let Some(gt) = &gt {
        report_errors(&pred, gt, &a.lr, a.log.as_deref(), out)?;
    }
    Ok(EXIT_OK)
}

fn report_errors(
    pred: &c2pd_core::Grid,
    gt: &c2pd_core::Grid,
    name: &Path,
    log: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    let rmse = rmse_cm(pred, gt)?;
    let mad = mad_cm(pred, gt)?;
    let _ = writeln!(out, "rmse_cm {rmse:.6} mad_cm {mad:.6}");
    if let Some(log) = log {
        let file = name.display().to_string().replace(',', "_");
        imageio::append_csv(log, "file,rmse_cm,mad_cm", &format!("{file},{rmse},{mad}"))?;
    }
    Ok(())
}

/// Builds the training setup from a run config.
pub fn train_config(cfg: &RunConfig, steps: usize, seed: u64) -> Result<TrainConfig> {
    let guidance = match cfg.guidance {
        GuidanceSource::GtOracle => SceneGuidance::GtOracle,
        GuidanceSource::GrayscaleGradient => SceneGuidance::Grayscale,
        GuidanceSource::File => {
            return Err(Error::Config(
                "guidance.source = file is not available for synthetic training".into(),
            ))
        }
    };
    Ok(TrainConfig {
        pipeline: cfg.pipeline,
        scene: SceneSpec {
            size: cfg.train.scene_size,
            guidance,
            augment: cfg.train.augment,
            ..SceneSpec::default()
        },
        adam: cfg.train.adam,
        steps,
        seed,
        accumulate: cfg.train.accumulate,
        pool: cfg.train.pool,
    })
}

pub fn train(a: &TrainArgs, out: &mut impl Write) -> Result<i32> {
    let cfg = RunConfig::load(&a.config)?;
    let tc = train_config(&cfg, a.steps, a.seed)?;
    std::fs::create_dir_all(&a.out_params).map_err(|e| Error::io(&a.out_params, e))?;
    let outcome = train::train_toy(&tc)?;
    let rows = outcome
        .history
        .iter()
        .map(|r| format!("{},{},{}", r.step, r.l1, r.rmse));
    imageio::write_csv(&a.log, "step,l1,rmse", rows)?;

    let iso = Path::new("iso.c2pd");
    let pcgd = Path::new("pcgd.c2pd");
    imageio::write_params(&outcome.params.iso, &a.out_params.join(iso))?;
    imageio::write_params(&outcome.params.pcgd, &a.out_params.join(pcgd))?;
    let infer_cfg = a.out_params.join("infer.cfg");
    std::fs::write(&infer_cfg, cfg.render_infer(Some(iso), Some(pcgd)))
        .map_err(|e| Error::io(&infer_cfg, e))?;

    let last = outcome.history.last().expect("steps >= 1");
    let heldout = train::heldout_set(&tc, train::HELDOUT_SCENES)?;
    let report = train::evaluate(&heldout, &tc.pipeline, &outcome.params)?;
    let _ = writeln!(
        out,
        "step {} l1 {:.6} rmse {:.6}",
        last.step, last.l1, last.rmse
    );
    let _ = writeln!(
        out,
        "held-out rmse_cm {:.4} bicubic {:.4} ratio {:.4}",
        report.model_rmse,
        report.bicubic_rmse,
        report.ratio()
    );
    let _ = writeln!(out, "parameters written to {}", a.out_params.display());
    Ok(EXIT_OK)
}

pub fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<i32> {
    let pred = imageio::read_depth(&a.pred, a.unit)?;
    let gt = imageio::read_depth(&a.gt, a.unit)?;
    report_errors(&pred, &gt, &a.pred, a.log.as_deref(), out)?;
    Ok(EXIT_OK)
}

pub fn grad_check(a: &GradCheckArgs, out: &mut impl Write) -> Result<i32> {
    let rows = selftest::grad_check_report(a.seed)?;
    let mut ok = true;
    for (name, err) in &rows {
        let pass = *err <= GRAD_TOL;
        ok &= pass;
        let _ = writeln!(
            out,
            "{} {name:<10} max relative error {err:.3e}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if ok { EXIT_OK } else { EXIT_NUMERIC })
}

/// Runs the suite with the given hooks and maps the verdict to an exit code.
pub fn selftest_with(hooks: &Hooks, out: &mut impl Write) -> i32 {
    if selftest::run_suite(hooks, out) {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}
