//! L1 objective, Adam, and finite-difference gradient verification.

use alloc::vec;
use alloc::vec::Vec;

use crate::capo::{capo_apply, capo_backward, CapoParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, WindowSpec};
use crate::pcgd::{pcgd_apply, pcgd_backward};

/// Mean absolute error and its subgradient `sign(out - gt) / N`, `sign(0) = 0`.
pub fn l1_loss(out: &Grid, gt: &Grid) -> Result<(f64, Grid)> {
    out.ensure_same_dims(gt)?;
    let count = out.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(out.len());
    for (&o, &g) in out.values().iter().zip(gt.values()) {
        let d = o - g;
        sum += libm::fabs(d);
        grad.push(if d > 0.0 {
            1.0 / count
        } else if d < 0.0 {
            -1.0 / count
        } else {
            0.0
        });
    }
    Ok((
        sum / count,
        Grid::from_vec(out.height(), out.width(), grad)?,
    ))
}

/// Losses of one training step, in centimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub l1: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Invalid(
                "parameter, gradient and moment lengths differ",
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradients"));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

/// Applies one Adam update to a parameter set.
pub fn adam_step(
    params: &mut CapoParams,
    grads: &CapoParams,
    state: &mut OptimState,
) -> Result<()> {
    if grads.param_count() != params.param_count() {
        return Err(Error::Invalid("gradient shape differs from parameters"));
    }
    let mut flat = params.to_flat();
    state.update(&mut flat, &grads.to_flat())?;
    params.set_flat(&flat)
}

/// A map from a flat input vector to a flat output with an exact
/// vector-Jacobian product.
pub trait Differentiable {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_index: Option<usize>,
}

impl GradCheck {
    /// Compares `backward` against central differences of
    /// `L(x) = <upstream, forward(x)>` at every input where `mask` is true.
    pub fn run(
        &self,
        op: &dyn Differentiable,
        x: &[f64],
        upstream: &[f64],
        mask: &[bool],
    ) -> Result<GradCheckReport> {
        if mask.len() != x.len() {
            return Err(Error::Invalid("mask length differs from input length"));
        }
        let analytic = op.backward(x, upstream)?;
        if analytic.len() != x.len() {
            return Err(Error::Invalid(
                "backward returned a gradient of the wrong length",
            ));
        }
        let objective = |probe: &[f64]| -> Result<f64> {
            let y = op.forward(probe)?;
            if y.len() != upstream.len() {
                return Err(Error::Invalid("upstream length differs from output length"));
            }
            Ok(y.iter().zip(upstream).fold(0.0, |acc, (a, b)| acc + a * b))
        };
        let mut probe = x.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            worst_index: None,
        };
        for i in 0..x.len() {
            if !mask[i] {
                continue;
            }
            probe[i] = x[i] + self.eps;
            let plus = objective(&probe)?;
            probe[i] = x[i] - self.eps;
            let minus = objective(&probe)?;
            probe[i] = x[i];
            let numeric = (plus - minus) / (2.0 * self.eps);
            let denom = libm::fabs(analytic[i])
                .max(libm::fabs(numeric))
                .max(self.floor);
            let rel = libm::fabs(analytic[i] - numeric) / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst_index = Some(i);
            }
        }
        Ok(report)
    }
}

/// `grad_check` with default step and floor.
pub fn grad_check(
    op: &dyn Differentiable,
    x: &[f64],
    upstream: &[f64],
    mask: &[bool],
) -> Result<f64> {
    Ok(GradCheck::default()
        .run(op, x, upstream, mask)?
        .max_rel_error)
}

fn split_problem_input<'a>(
    x: &'a [f64],
    cells: usize,
) -> Result<(&'a [f64], &'a [f64], &'a [f64])> {
    if x.len() < 2 * cells {
        return Err(Error::Invalid("input vector too short"));
    }
    let (stream, rest) = x.split_at(cells);
    let (guide, params) = rest.split_at(cells);
    Ok((stream, guide, params))
}

/// [`capo_apply`] viewed as a function of `stream || guide || params`.
pub struct CapoProblem {
    pub height: usize,
    pub width: usize,
    pub spec: WindowSpec,
    pub template: CapoParams,
}

impl CapoProblem {
    fn unpack(&self, x: &[f64]) -> Result<(Grid, Grid, CapoParams)> {
        let cells = self.height * self.width;
        let (s, g, p) = split_problem_input(x, cells)?;
        let mut params = self.template.clone();
        params.set_flat(p)?;
        Ok((
            Grid::from_vec(self.height, self.width, s.to_vec())?,
            Grid::from_vec(self.height, self.width, g.to_vec())?,
            params,
        ))
    }

    pub fn pack(stream: &Grid, guide: &Grid, params: &CapoParams) -> Vec<f64> {
        let mut x = stream.values().to_vec();
        x.extend_from_slice(guide.values());
        x.extend(params.iter());
        x
    }
}

impl Differentiable for CapoProblem {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (s, g, p) = self.unpack(x)?;
        Ok(capo_apply(&s, &g, &p, self.spec)?.into_values())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (s, g, p) = self.unpack(x)?;
        let up = Grid::from_vec(self.height, self.width, upstream.to_vec())?;
        let grads = capo_backward(&s, &g, &p, self.spec, &up)?;
        let mut out = grads.d_stream.into_values();
        out.extend_from_slice(grads.d_guide.values());
        out.extend(grads.d_params.iter());
        Ok(out)
    }
}

/// [`pcgd_apply`] viewed as a function of `depth || guide || params`.
pub struct PcgdProblem {
    pub height: usize,
    pub width: usize,
    pub spec_h: WindowSpec,
    pub spec_v: WindowSpec,
    pub template: CapoParams,
}

impl PcgdProblem {
    fn unpack(&self, x: &[f64]) -> Result<(Grid, Grid, CapoParams)> {
        let cells = self.height * self.width;
        let (s, g, p) = split_problem_input(x, cells)?;
        let mut params = self.template.clone();
        params.set_flat(p)?;
        Ok((
            Grid::from_vec(self.height, self.width, s.to_vec())?,
            Grid::from_vec(self.height, self.width, g.to_vec())?,
            params,
        ))
    }

    /// Mask excluding inputs within `margin` of a kink: depth cells whose
    /// forward differences are near zero (sign split) and guidance cells whose
    /// differences are near zero (absolute value).
    pub fn kink_mask(&self, x: &[f64], margin: f64) -> Vec<bool> {
        let cells = self.height * self.width;
        let (h, w) = (self.height, self.width);
        let mut mask = vec![true; x.len()];
        for (offset, values) in [(0, &x[..cells]), (cells, &x[cells..2 * cells])] {
            for y in 0..h {
                for c in 0..w {
                    let v = values[y * w + c];
                    let near = |ny: usize, nx: usize| libm::fabs(values[ny * w + nx] - v) <= margin;
                    let kink = (c + 1 < w && near(y, c + 1))
                        || (c > 0 && near(y, c - 1))
                        || (y + 1 < h && near(y + 1, c))
                        || (y > 0 && near(y - 1, c));
                    if kink {
                        mask[offset + y * w + c] = false;
                    }
                }
            }
        }
        mask
    }
}

impl Differentiable for PcgdProblem {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (s, g, p) = self.unpack(x)?;
        Ok(pcgd_apply(&s, &g, &p, self.spec_h, self.spec_v)?.into_values())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (s, g, p) = self.unpack(x)?;
        let up = Grid::from_vec(self.height, self.width, upstream.to_vec())?;
        let grads = pcgd_backward(&s, &g, &p, self.spec_h, self.spec_v, &up)?;
        let mut out = grads.d_depth.into_values();
        out.extend_from_slice(grads.d_guide.values());
        out.extend(grads.d_params.iter());
        Ok(out)
    }
}
