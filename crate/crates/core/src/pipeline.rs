//! Upsample, isovolumetric deformation, then gradient-domain deformation.

use alloc::vec::Vec;

use crate::capo::{capo_apply, capo_backward_accumulate, CapoParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, Padding, WindowShape, WindowSpec};
use crate::pcgd::{pcgd_apply, pcgd_backward_accumulate};
use crate::resample::{bicubic_up, rmse_cm};

/// Upper bound on chained gradient-domain stages.
pub const MAX_REPEAT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoStage {
    pub enabled: bool,
    pub shape: WindowShape,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgdStage {
    pub repeat: usize,
    /// Horizontal window; the vertical pass uses its transpose.
    pub shape: WindowShape,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub scale: usize,
    pub iso: IsoStage,
    pub pcgd: PcgdStage,
    pub padding: Padding,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            iso: IsoStage {
                enabled: true,
                shape: WindowShape::Row4,
            },
            pcgd: PcgdStage {
                repeat: 1,
                shape: WindowShape::Row4,
            },
            padding: Padding::Replicate,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 || !self.scale.is_power_of_two() {
            return Err(Error::Invalid("scale must be a power of two >= 2"));
        }
        if self.pcgd.repeat > MAX_REPEAT {
            return Err(Error::Invalid("pcgd repeat count exceeds the limit"));
        }
        Ok(())
    }

    pub fn iso_spec(&self) -> WindowSpec {
        WindowSpec::new(self.iso.shape, self.padding)
    }

    pub fn pcgd_specs(&self) -> (WindowSpec, WindowSpec) {
        let h = WindowSpec::new(self.pcgd.shape, self.padding);
        (h, h.transposed())
    }

    /// Checks that a parameter pair fits the configured windows.
    pub fn check_params(&self, params: &PipelineParams) -> Result<()> {
        if self.iso.enabled && params.iso.n() != self.iso.shape.n() {
            return Err(Error::Invalid("iso parameters do not match iso.window"));
        }
        if self.pcgd.repeat > 0 && params.pcgd.n() != self.pcgd.shape.n() {
            return Err(Error::Invalid("pcgd parameters do not match pcgd.window"));
        }
        Ok(())
    }
}

/// Separate parameter sets for the two stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub iso: CapoParams,
    pub pcgd: CapoParams,
}

impl PipelineParams {
    pub fn init(config: &PipelineConfig, seed: u64) -> Self {
        Self {
            iso: CapoParams::init_default(config.iso.shape.n(), seed),
            pcgd: CapoParams::init_default(config.pcgd.shape.n(), seed.wrapping_add(1)),
        }
    }

    pub fn zeros(config: &PipelineConfig) -> Self {
        use crate::capo::DEFAULT_HIDDEN;
        Self {
            iso: CapoParams::zeros(config.iso.shape.n(), &DEFAULT_HIDDEN),
            pcgd: CapoParams::zeros(config.pcgd.shape.n(), &DEFAULT_HIDDEN),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            iso: self.iso.zeros_like(),
            pcgd: self.pcgd.zeros_like(),
        }
    }
}

/// Inputs of every deformation stage plus the final output.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `stages[0]` is the upsampled depth; the last entry is the output.
    pub stages: Vec<Grid>,
}

impl Trace {
    pub fn output(&self) -> &Grid {
        self.stages.last().expect("trace always holds the input")
    }
}

/// Runs the deformation stages on an already upsampled depth grid.
pub fn deform(
    up: &Grid,
    guide: &Grid,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Trace> {
    config.validate()?;
    config.check_params(params)?;
    up.ensure_same_dims(guide)?;
    let mut stages = Vec::with_capacity(2 + config.pcgd.repeat);
    stages.push(up.clone());
    if config.iso.enabled {
        let next = capo_apply(up, guide, &params.iso, config.iso_spec())?;
        stages.push(next);
    }
    let (spec_h, spec_v) = config.pcgd_specs();
    for _ in 0..config.pcgd.repeat {
        let prev = stages.last().expect("non-empty");
        let next = pcgd_apply(prev, guide, &params.pcgd, spec_h, spec_v)?;
        stages.push(next);
    }
    Ok(Trace { stages })
}

/// Parameter gradients of a scalar objective through [`deform`].
pub fn deform_backward(
    trace: &Trace,
    guide: &Grid,
    config: &PipelineConfig,
    params: &PipelineParams,
    upstream: &Grid,
) -> Result<PipelineParams> {
    let mut grads = params.zeros_like();
    let (spec_h, spec_v) = config.pcgd_specs();
    let mut d = upstream.clone();
    let first_pcgd = usize::from(config.iso.enabled);
    for i in (0..config.pcgd.repeat).rev() {
        let input = &trace.stages[first_pcgd + i];
        let (d_in, _) = pcgd_backward_accumulate(
            input,
            guide,
            &params.pcgd,
            spec_h,
            spec_v,
            &d,
            &mut grads.pcgd,
        )?;
        d = d_in;
    }
    if config.iso.enabled {
        capo_backward_accumulate(
            &trace.stages[0],
            guide,
            &params.iso,
            config.iso_spec(),
            &d,
            &mut grads.iso,
        )?;
    }
    Ok(grads)
}

/// Upsamples `lr` by the configured scale and deforms it under `guide`.
pub fn run_pipeline(
    lr: &Grid,
    guide: &Grid,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Grid> {
    config.validate()?;
    let (h, w) = lr.dims();
    if (h * config.scale, w * config.scale) != guide.dims() {
        return Err(Error::Shape {
            expected: (h * config.scale, w * config.scale),
            found: guide.dims(),
        });
    }
    let up = bicubic_up(lr, config.scale)?;
    let trace = deform(&up, guide, config, params)?;
    Ok(trace.stages.into_iter().last().expect("non-empty"))
}

/// RMSE of a prediction against ground truth, in cm.
pub fn predict_residual_rmse(out: &Grid, gt: &Grid) -> Result<f64> {
    rmse_cm(out, gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> (Grid, Grid) {
        let lr = Grid::from_fn(3, 3, |y, x| 50.0 + 10.0 * ((y * 3 + x) % 4) as f64).unwrap();
        let guide = Grid::from_fn(12, 12, |y, x| ((y / 4 + x / 4) % 2) as f64).unwrap();
        (lr, guide)
    }

    #[test]
    fn disabled_stages_pass_through() {
        let (lr, guide) = inputs();
        let config = PipelineConfig {
            iso: IsoStage {
                enabled: false,
                shape: WindowShape::Row4,
            },
            pcgd: PcgdStage {
                repeat: 0,
                shape: WindowShape::Row4,
            },
            ..PipelineConfig::default()
        };
        let params = PipelineParams::init(&config, 1);
        let out = run_pipeline(&lr, &guide, &config, &params).unwrap();
        assert_eq!(out, bicubic_up(&lr, 4).unwrap());
    }

    #[test]
    fn zero_networks_pass_through() {
        let (lr, guide) = inputs();
        let config = PipelineConfig::default();
        let params = PipelineParams::zeros(&config);
        let out = run_pipeline(&lr, &guide, &config, &params).unwrap();
        assert!(out.max_abs_diff(&bicubic_up(&lr, 4).unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn rejects_bad_scale_and_shapes() {
        let (lr, guide) = inputs();
        let mut config = PipelineConfig::default();
        let params = PipelineParams::init(&config, 1);
        config.scale = 3;
        assert!(run_pipeline(&lr, &guide, &config, &params).is_err());
        config.scale = 8;
        assert!(matches!(
            run_pipeline(&lr, &guide, &config, &params),
            Err(Error::Shape { .. })
        ));
        config.scale = 4;
        config.pcgd.repeat = MAX_REPEAT + 1;
        assert!(run_pipeline(&lr, &guide, &config, &params).is_err());
    }

    #[test]
    fn residual_rmse() {
        let gt = Grid::from_fn(4, 4, |y, x| (y * x) as f64).unwrap();
        assert_eq!(predict_residual_rmse(&gt, &gt).unwrap(), 0.0);
        let off = gt.map(|v| v + 2.0).unwrap();
        assert!((predict_residual_rmse(&off, &gt).unwrap() - 2.0).abs() < 1e-12);
    }
}
