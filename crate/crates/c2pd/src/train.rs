//! Synthetic rectangle scenes and the toy training loop.

use c2pd_core::guidance::{guidance_from_gt, guidance_from_rgb, RgbImage};
use c2pd_core::optim::{adam_step, l1_loss, AdamConfig, LossReport, OptimState};
use c2pd_core::pipeline::{deform, deform_backward, PipelineConfig, PipelineParams};
use c2pd_core::resample::{bicubic_down, bicubic_up, rmse_cm};
use c2pd_core::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Depth range of scene surfaces, cm.
pub const DEPTH_RANGE: (f64, f64) = (20.0, 200.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneGuidance {
    /// Min-max normalized ground truth.
    GtOracle,
    /// Luminance of a synthetic RGB rendering with a random color per surface.
    Grayscale,
}

/// Parameters of the synthetic scene generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub min_rects: usize,
    pub max_rects: usize,
    pub guidance: SceneGuidance,
    /// Random 90 degree rotations and axis flips.
    pub augment: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            size: 48,
            min_rects: 2,
            max_rects: 5,
            guidance: SceneGuidance::GtOracle,
            augment: true,
        }
    }
}

/// One training or evaluation sample at high resolution.
#[derive(Debug, Clone)]
pub struct Scene {
    pub gt: Grid,
    pub guide: Grid,
}

impl Scene {
    pub fn generate(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = spec.size;
        let (lo, hi) = DEPTH_RANGE;
        let mut depth = vec![rng.gen_range(lo..hi); n * n];
        let background: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let mut color = vec![background; n * n];
        let count = rng.gen_range(spec.min_rects..=spec.max_rects);
        let min_side = (n / 8).max(2);
        for _ in 0..count {
            let h = rng.gen_range(min_side..=n / 2);
            let w = rng.gen_range(min_side..=n / 2);
            let y0 = rng.gen_range(0..=n - h);
            let x0 = rng.gen_range(0..=n - w);
            let d = rng.gen_range(lo..hi);
            let c: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    depth[y * n + x] = d;
                    color[y * n + x] = c;
                }
            }
        }
        let (depth, color) = if spec.augment {
            let rot = rng.gen_range(0..4);
            let flip = rng.gen_bool(0.5);
            (augment(&depth, n, rot, flip), augment(&color, n, rot, flip))
        } else {
            (depth, color)
        };
        let gt = Grid::from_vec(n, n, depth)?;
        let guide = match spec.guidance {
            SceneGuidance::GtOracle => guidance_from_gt(&gt)?,
            SceneGuidance::Grayscale => guidance_from_rgb(&RgbImage::new(n, n, color)?)?,
        };
        Ok(Self { gt, guide })
    }
}

/// Rotates a square raster by `rot` quarter turns, then optionally mirrors it.
fn augment<T: Copy>(src: &[T], n: usize, rot: u32, flip: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for y in 0..n {
        for x in 0..n {
            let x = if flip { n - 1 - x } else { x };
            let (sy, sx) = match rot {
                0 => (y, x),
                1 => (n - 1 - x, y),
                2 => (n - 1 - y, n - 1 - x),
                _ => (x, n - 1 - y),
            };
            out.push(src[sy * n + sx]);
        }
    }
    out
}

/// A scene prepared for one scale factor.
#[derive(Debug, Clone)]
pub struct Sample {
    pub gt: Grid,
    pub guide: Grid,
    pub lr: Grid,
    pub up: Grid,
}

impl Sample {
    pub fn new(scene: Scene, scale: usize) -> Result<Self> {
        let lr = bicubic_down(&scene.gt, scale)?;
        let up = bicubic_up(&lr, scale)?;
        Ok(Self {
            gt: scene.gt,
            guide: scene.guide,
            lr,
            up,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pipeline: PipelineConfig,
    pub scene: SceneSpec,
    pub adam: AdamConfig,
    pub steps: usize,
    pub seed: u64,
    /// Scenes whose gradients are averaged per update.
    pub accumulate: usize,
    /// When set, a fixed pool of this many scenes is generated up front and
    /// visited in order, cycling; otherwise every step draws fresh scenes.
    pub pool: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            scene: SceneSpec::default(),
            adam: AdamConfig::default(),
            steps: 2000,
            seed: 0,
            accumulate: 1,
            pool: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PipelineParams,
    pub history: Vec<LossReport>,
}

/// Held-out scenes used by `c2pd train` for its final report.
pub const HELDOUT_SCENES: usize = 8;

/// Seed of the held-out scene stream, disjoint from training seeds.
pub fn heldout_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0f_4e1d_0u64
}

/// `count` held-out scenes at the configured scale.
pub fn heldout_set(config: &TrainConfig, count: usize) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(heldout_seed(config.seed));
    let spec = SceneSpec {
        augment: false,
        ..config.scene
    };
    (0..count)
        .map(|_| Sample::new(Scene::generate(&spec, &mut rng)?, config.pipeline.scale))
        .collect()
}

/// Trains both stages jointly by backpropagating the L1 loss through the
/// deformation stages; upsampling has no parameters.
pub fn train_toy(config: &TrainConfig) -> Result<TrainOutcome> {
    train_toy_with(config, |_| {})
}

/// [`train_toy`] with a per-step callback.
pub fn train_toy_with(
    config: &TrainConfig,
    mut on_step: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    if config.steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    if config.accumulate == 0 {
        return Err(Error::Config("train.accumulate must be at least 1".into()));
    }
    config.pipeline.validate()?;
    if config.pool == Some(0) {
        return Err(Error::Config("train.pool must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = PipelineParams::init(&config.pipeline, rng.gen());
    let pool = match config.pool {
        Some(size) => (0..size)
            .map(|_| {
                Sample::new(
                    Scene::generate(&config.scene, &mut rng)?,
                    config.pipeline.scale,
                )
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let mut drawn = 0usize;
    let mut iso_state = OptimState::new(params.iso.param_count(), config.adam);
    let mut pcgd_state = OptimState::new(params.pcgd.param_count(), config.adam);
    let mut history = Vec::with_capacity(config.steps);
    let inv_k = 1.0 / config.accumulate as f64;

    for step in 1..=config.steps {
        let mut grads = params.zeros_like();
        let mut l1_sum = 0.0;
        let mut sq_sum = 0.0;
        for _ in 0..config.accumulate {
            let fresh;
            let sample = if pool.is_empty() {
                fresh = Sample::new(
                    Scene::generate(&config.scene, &mut rng)?,
                    config.pipeline.scale,
                )?;
                &fresh
            } else {
                &pool[drawn % pool.len()]
            };
            drawn += 1;
            let trace = deform(&sample.up, &sample.guide, &config.pipeline, &params)?;
            let (l1, d_out) = l1_loss(trace.output(), &sample.gt)?;
            let rmse = rmse_cm(trace.output(), &sample.gt)?;
            if !l1.is_finite() {
                return Err(Error::Divergence { step, loss: l1 });
            }
            let d_out = d_out.map(|g| g * inv_k)?;
            let g = deform_backward(&trace, &sample.guide, &config.pipeline, &params, &d_out)?;
            grads.iso.accumulate(&g.iso)?;
            grads.pcgd.accumulate(&g.pcgd)?;
            l1_sum += l1;
            sq_sum += rmse * rmse;
        }
        if config.pipeline.iso.enabled {
            adam_step(&mut params.iso, &grads.iso, &mut iso_state)
                .map_err(|e| diverged(step, e))?;
        }
        if config.pipeline.pcgd.repeat > 0 {
            adam_step(&mut params.pcgd, &grads.pcgd, &mut pcgd_state)
                .map_err(|e| diverged(step, e))?;
        }
        let report = LossReport {
            step,
            l1: l1_sum * inv_k,
            rmse: (sq_sum * inv_k).sqrt(),
        };
        on_step(&report);
        history.push(report);
    }
    Ok(TrainOutcome { params, history })
}

fn diverged(step: usize, err: c2pd_core::Error) -> Error {
    match err {
        c2pd_core::Error::NonFinite(_) => Error::Divergence {
            step,
            loss: f64::NAN,
        },
        other => other.into(),
    }
}

/// Pooled RMSE over a sample set for the model and the bicubic baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub model_rmse: f64,
    pub bicubic_rmse: f64,
}

impl EvalReport {
    pub fn ratio(&self) -> f64 {
        self.model_rmse / self.bicubic_rmse
    }
}

/// Samples are processed in parallel; the per-sample errors are summed in
/// sample order, so the result does not depend on the thread count.
pub fn evaluate(
    samples: &[Sample],
    pipeline: &PipelineConfig,
    params: &PipelineParams,
) -> Result<EvalReport> {
    let per_sample = samples
        .par_iter()
        .map(|s| -> Result<(f64, f64, usize)> {
            let out = deform(&s.up, &s.guide, pipeline, params)?;
            let n = s.gt.len() as f64;
            Ok((
                rmse_cm(out.output(), &s.gt)?.powi(2) * n,
                rmse_cm(&s.up, &s.gt)?.powi(2) * n,
                s.gt.len(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut model_sq, mut base_sq, mut cells) = (0.0, 0.0, 0usize);
    for (m, b, n) in per_sample {
        model_sq += m;
        base_sq += b;
        cells += n;
    }
    if cells == 0 {
        return Err(Error::Config("evaluation needs at least one sample".into()));
    }
    Ok(EvalReport {
        model_rmse: (model_sq / cells as f64).sqrt(),
        bicubic_rmse: (base_sq / cells as f64).sqrt(),
    })
}
