//! Pixelwise cross gradient deformation.
//!
//! Depth is differentiated along both axes, each gradient is split into its
//! positive part and the magnitude of its negative part, and both parts are
//! deformed by CAPO under the absolute guidance gradient with one shared set
//! of parameters. The processed gradients are integrated back from the
//! original first column (first row) and the two reconstructions averaged.

use alloc::vec;
use alloc::vec::Vec;

use crate::capo::{capo_apply, capo_backward_accumulate, CapoParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Along a row, left to right.
    Horizontal,
    /// Along a column, top to bottom.
    Vertical,
}

/// Sign-separated forward difference of a grid along one axis.
///
/// Grids keep the source shape; the last entry along the axis is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub axis: Axis,
    /// `max(g, 0)`.
    pub positive: Grid,
    /// `min(g, 0)`.
    pub negative: Grid,
    /// First column (horizontal) or first row (vertical) of the source.
    pub anchor: Vec<f64>,
}

impl GradientField {
    /// `positive + negative`, which is the raw forward difference.
    pub fn combined(&self) -> Grid {
        let values = self
            .positive
            .values()
            .iter()
            .zip(self.negative.values())
            .map(|(p, n)| p + n)
            .collect();
        Grid::raw(self.positive.height(), self.positive.width(), values)
    }
}

fn along_rows<F: FnOnce(&Grid) -> Grid>(grid: &Grid, axis: Axis, f: F) -> Grid {
    match axis {
        Axis::Horizontal => f(grid),
        Axis::Vertical => f(&grid.transpose()).transpose(),
    }
}

fn extent(grid: &Grid, axis: Axis) -> usize {
    match axis {
        Axis::Horizontal => grid.width(),
        Axis::Vertical => grid.height(),
    }
}

fn forward_diff_rows(grid: &Grid) -> Grid {
    let (h, w) = grid.dims();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = grid.row(y);
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..w - 1 {
            dst[x] = row[x + 1] - row[x];
        }
    }
    Grid::raw(h, w, out)
}

/// Raw forward difference along `axis`; the last entry along the axis is 0.
pub fn forward_difference(grid: &Grid, axis: Axis) -> Grid {
    along_rows(grid, axis, forward_diff_rows)
}

pub fn differentiate(grid: &Grid, axis: Axis) -> Result<GradientField> {
    if extent(grid, axis) < 2 {
        return Err(Error::Size {
            height: grid.height(),
            width: grid.width(),
            reason: "differentiation needs at least two samples along the axis",
        });
    }
    let diff = forward_difference(grid, axis);
    diff.ensure_finite("gradient")?;
    let (h, w) = diff.dims();
    let positive = Grid::raw(h, w, diff.values().iter().map(|&g| g.max(0.0)).collect());
    let negative = Grid::raw(h, w, diff.values().iter().map(|&g| g.min(0.0)).collect());
    let anchor = match axis {
        Axis::Horizontal => (0..h).map(|y| grid.get(y, 0)).collect(),
        Axis::Vertical => grid.row(0).to_vec(),
    };
    Ok(GradientField {
        axis,
        positive,
        negative,
        anchor,
    })
}

fn cumsum_rows(steps: &Grid, anchor: &[f64]) -> Grid {
    let (h, w) = steps.dims();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let s = steps.row(y);
        let dst = &mut out[y * w..(y + 1) * w];
        dst[0] = anchor[y];
        for x in 0..w - 1 {
            dst[x + 1] = dst[x] + s[x];
        }
    }
    Grid::raw(h, w, out)
}

/// Cumulative sum along `axis` of per-step increments, starting at `anchor`.
pub fn integrate_steps(steps: &Grid, anchor: &[f64], axis: Axis) -> Result<Grid> {
    let expected = match axis {
        Axis::Horizontal => steps.height(),
        Axis::Vertical => steps.width(),
    };
    if anchor.len() != expected {
        return Err(Error::Invalid("anchor length does not match the grid"));
    }
    let out = along_rows(steps, axis, |g| cumsum_rows(g, anchor));
    out.ensure_finite("integration")?;
    Ok(out)
}

/// Inverse of [`differentiate`].
pub fn integrate(field: &GradientField) -> Result<Grid> {
    field.positive.ensure_same_dims(&field.negative)?;
    integrate_steps(&field.combined(), &field.anchor, field.axis)
}

/// `|forward difference|` of the guidance along `axis`.
pub fn guidance_gradient(guide: &Grid, axis: Axis) -> Result<Grid> {
    if extent(guide, axis) < 2 {
        return Err(Error::Size {
            height: guide.height(),
            width: guide.width(),
            reason: "differentiation needs at least two samples along the axis",
        });
    }
    forward_difference(guide, axis).map(libm::fabs)
}

/// Adjoint of [`forward_diff_rows`]; the last column of `d_diff` is ignored.
fn forward_diff_rows_adjoint(d_diff: &Grid) -> Grid {
    let (h, w) = d_diff.dims();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let d = d_diff.row(y);
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..w - 1 {
            dst[x + 1] += d[x];
            dst[x] -= d[x];
        }
    }
    Grid::raw(h, w, out)
}

/// Adjoint of [`cumsum_rows`]: `(d_steps, d_anchor)`.
fn cumsum_rows_adjoint(d_out: &Grid) -> (Grid, Vec<f64>) {
    let (h, w) = d_out.dims();
    let mut d_steps = vec![0.0; h * w];
    let mut d_anchor = vec![0.0; h];
    for y in 0..h {
        let d = d_out.row(y);
        let dst = &mut d_steps[y * w..(y + 1) * w];
        let mut tail = 0.0;
        for x in (0..w - 1).rev() {
            tail += d[x + 1];
            dst[x] = tail;
        }
        d_anchor[y] = tail + d[0];
    }
    (Grid::raw(h, w, d_steps), d_anchor)
}

fn check_pcgd_inputs(
    depth: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec_h: &WindowSpec,
    spec_v: &WindowSpec,
) -> Result<()> {
    depth.ensure_same_dims(guide)?;
    if spec_h.n() != params.n() || spec_v.n() != params.n() {
        return Err(Error::Invalid(
            "network window cardinality differs from window spec",
        ));
    }
    if depth.height() < 2 || depth.width() < 2 {
        return Err(Error::Size {
            height: depth.height(),
            width: depth.width(),
            reason: "gradient deformation needs at least 2x2 cells",
        });
    }
    Ok(())
}

/// Intermediate values of one directional pass, kept for the reverse pass.
struct AxisPass {
    diff: Grid,
    positive: Grid,
    negative_mag: Grid,
    guide_diff: Grid,
    guide_mag: Grid,
}

impl AxisPass {
    fn new(depth: &Grid, guide: &Grid, axis: Axis) -> Self {
        let diff = forward_difference(depth, axis);
        let (h, w) = diff.dims();
        let positive = Grid::raw(h, w, diff.values().iter().map(|&g| g.max(0.0)).collect());
        let negative_mag = Grid::raw(h, w, diff.values().iter().map(|&g| -g.min(0.0)).collect());
        let guide_diff = forward_difference(guide, axis);
        let guide_mag = Grid::raw(
            h,
            w,
            guide_diff.values().iter().map(|&g| libm::fabs(g)).collect(),
        );
        Self {
            diff,
            positive,
            negative_mag,
            guide_diff,
            guide_mag,
        }
    }
}

fn anchor_of(depth: &Grid, axis: Axis) -> Vec<f64> {
    match axis {
        Axis::Horizontal => (0..depth.height()).map(|y| depth.get(y, 0)).collect(),
        Axis::Vertical => depth.row(0).to_vec(),
    }
}

/// Processed gradient of one directional pass: deformed positive part minus
/// the deformed magnitude of the negative part.
fn processed_gradient(pass: &AxisPass, params: &CapoParams, spec: WindowSpec) -> Result<Grid> {
    let pos = capo_apply(&pass.positive, &pass.guide_mag, params, spec)?;
    let neg = capo_apply(&pass.negative_mag, &pass.guide_mag, params, spec)?;
    pos.zip_map(&neg, |p, n| p - n)
}

fn reconstruct(
    depth: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec: WindowSpec,
    axis: Axis,
) -> Result<Grid> {
    let pass = AxisPass::new(depth, guide, axis);
    let processed = processed_gradient(&pass, params, spec)?;
    integrate_steps(&processed, &anchor_of(depth, axis), axis)
}

/// Gradient-domain deformation of `depth` under `guide`.
///
/// `spec_h` drives the horizontal pass and `spec_v` the vertical one; both
/// share `params`.
pub fn pcgd_apply(
    depth: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec_h: WindowSpec,
    spec_v: WindowSpec,
) -> Result<Grid> {
    check_pcgd_inputs(depth, guide, params, &spec_h, &spec_v)?;
    let horizontal = reconstruct(depth, guide, params, spec_h, Axis::Horizontal)?;
    let vertical = reconstruct(depth, guide, params, spec_v, Axis::Vertical)?;
    let out = horizontal.zip_map(&vertical, |a, b| 0.5 * (a + b))?;
    Ok(out)
}

/// Gradients of a scalar objective through [`pcgd_apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct PcgdGradients {
    pub d_depth: Grid,
    pub d_guide: Grid,
    pub d_params: CapoParams,
}

pub fn pcgd_backward(
    depth: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec_h: WindowSpec,
    spec_v: WindowSpec,
    upstream: &Grid,
) -> Result<PcgdGradients> {
    let mut d_params = params.zeros_like();
    let (d_depth, d_guide) = pcgd_backward_accumulate(
        depth,
        guide,
        params,
        spec_h,
        spec_v,
        upstream,
        &mut d_params,
    )?;
    Ok(PcgdGradients {
        d_depth,
        d_guide,
        d_params,
    })
}

/// Like [`pcgd_backward`] but adds parameter gradients into `d_params`.
pub fn pcgd_backward_accumulate(
    depth: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec_h: WindowSpec,
    spec_v: WindowSpec,
    upstream: &Grid,
    d_params: &mut CapoParams,
) -> Result<(Grid, Grid)> {
    check_pcgd_inputs(depth, guide, params, &spec_h, &spec_v)?;
    depth.ensure_same_dims(upstream)?;
    let (h, w) = depth.dims();
    let mut d_depth = vec![0.0; h * w];
    let mut d_guide = vec![0.0; h * w];
    let d_recon = upstream.map(|g| 0.5 * g)?;
    for (axis, spec) in [(Axis::Horizontal, spec_h), (Axis::Vertical, spec_v)] {
        let pass = AxisPass::new(depth, guide, axis);
        let (d_steps, d_anchor) = match axis {
            Axis::Horizontal => cumsum_rows_adjoint(&d_recon),
            Axis::Vertical => {
                let (s, a) = cumsum_rows_adjoint(&d_recon.transpose());
                (s.transpose(), a)
            }
        };
        let neg_up = d_steps.map(|g| -g)?;
        let (d_pos, d_gmag_pos) = capo_backward_accumulate(
            &pass.positive,
            &pass.guide_mag,
            params,
            spec,
            &d_steps,
            d_params,
        )?;
        let (d_negmag, d_gmag_neg) = capo_backward_accumulate(
            &pass.negative_mag,
            &pass.guide_mag,
            params,
            spec,
            &neg_up,
            d_params,
        )?;

        // Sign split: zero gradients flow through the positive branch.
        let d_diff: Vec<f64> = pass
            .diff
            .values()
            .iter()
            .zip(d_pos.values().iter().zip(d_negmag.values()))
            .map(|(&g, (&dp, &dn))| if g >= 0.0 { dp } else { -dn })
            .collect();
        let d_gdiff: Vec<f64> = pass
            .guide_diff
            .values()
            .iter()
            .zip(d_gmag_pos.values().iter().zip(d_gmag_neg.values()))
            .map(|(&g, (&a, &b))| {
                let d = a + b;
                if g > 0.0 {
                    d
                } else if g < 0.0 {
                    -d
                } else {
                    0.0
                }
            })
            .collect();
        let d_diff = Grid::raw(h, w, d_diff);
        let d_gdiff = Grid::raw(h, w, d_gdiff);
        let dd = along_rows(&d_diff, axis, forward_diff_rows_adjoint);
        let dg = along_rows(&d_gdiff, axis, forward_diff_rows_adjoint);
        for (acc, v) in d_depth.iter_mut().zip(dd.values()) {
            *acc += v;
        }
        for (acc, v) in d_guide.iter_mut().zip(dg.values()) {
            *acc += v;
        }
        match axis {
            Axis::Horizontal => {
                for (y, a) in d_anchor.iter().enumerate() {
                    d_depth[y * w] += a;
                }
            }
            Axis::Vertical => {
                for (x, a) in d_anchor.iter().enumerate() {
                    d_depth[x] += a;
                }
            }
        }
    }
    let d_depth = Grid::raw(h, w, d_depth);
    let d_guide = Grid::raw(h, w, d_guide);
    d_depth.ensure_finite("pcgd depth gradient")?;
    d_guide.ensure_finite("pcgd guide gradient")?;
    Ok((d_depth, d_guide))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capo::DEFAULT_HIDDEN;
    use crate::grid::{Padding, WindowShape};

    fn row(values: &[f64]) -> Grid {
        Grid::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn differentiate_row() {
        let f = differentiate(&row(&[1.0, 3.0, 6.0]), Axis::Horizontal).unwrap();
        assert_eq!(f.combined().values(), &[2.0, 3.0, 0.0]);
        assert_eq!(f.positive.values(), &[2.0, 3.0, 0.0]);
        assert_eq!(f.negative.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(f.anchor, vec![1.0]);

        let f = differentiate(&row(&[5.0, 2.0, 2.0, 4.0]), Axis::Horizontal).unwrap();
        assert_eq!(f.combined().values(), &[-3.0, 0.0, 2.0, 0.0]);
        assert_eq!(f.positive.values(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(f.negative.values(), &[-3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_grid_has_zero_field() {
        let g = Grid::new(3, 4, 7.5).unwrap();
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let f = differentiate(&g, axis).unwrap();
            assert!(f.combined().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn differentiate_needs_two_samples() {
        let g = Grid::new(1, 5, 1.0).unwrap();
        assert!(matches!(
            differentiate(&g, Axis::Vertical),
            Err(Error::Size { .. })
        ));
        assert!(differentiate(&g, Axis::Horizontal).is_ok());
    }

    #[test]
    fn integrate_round_trip_and_zero_field() {
        let r = row(&[1.0, 3.0, 6.0]);
        assert_eq!(
            integrate(&differentiate(&r, Axis::Horizontal).unwrap()).unwrap(),
            r
        );
        let zero = GradientField {
            axis: Axis::Horizontal,
            positive: Grid::zeros(1, 5).unwrap(),
            negative: Grid::zeros(1, 5).unwrap(),
            anchor: vec![7.0],
        };
        assert_eq!(integrate(&zero).unwrap().values(), &[7.0; 5]);
    }

    #[test]
    fn vertical_field_matches_transposed_horizontal() {
        let g = Grid::from_fn(5, 3, |y, x| (y * y) as f64 - 2.0 * x as f64).unwrap();
        let v = differentiate(&g, Axis::Vertical).unwrap();
        let h = differentiate(&g.transpose(), Axis::Horizontal).unwrap();
        assert_eq!(v.positive, h.positive.transpose());
        assert_eq!(v.negative, h.negative.transpose());
        assert_eq!(v.anchor, h.anchor);
    }

    #[test]
    fn guidance_gradient_non_negative() {
        let g = Grid::from_fn(4, 4, |y, x| ((y * 7 + x * 3) % 5) as f64 * 0.2).unwrap();
        for axis in [Axis::Horizontal, Axis::Vertical] {
            assert!(guidance_gradient(&g, axis)
                .unwrap()
                .values()
                .iter()
                .all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_network_is_identity() {
        let d = Grid::from_fn(6, 7, |y, x| 20.0 + ((y * 13 + x * 5) % 11) as f64).unwrap();
        let g = Grid::from_fn(6, 7, |y, x| ((y + 2 * x) % 3) as f64 / 3.0).unwrap();
        let p = CapoParams::zeros(4, &DEFAULT_HIDDEN);
        let sh = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
        let out = pcgd_apply(&d, &g, &p, sh, sh.transposed()).unwrap();
        assert!(out.max_abs_diff(&d).unwrap() <= 1e-12);
    }

    #[test]
    fn identity_network_backward_is_upstream() {
        let d = Grid::from_fn(5, 5, |y, x| (y * 5 + x) as f64 * 0.7).unwrap();
        let g = Grid::from_fn(5, 5, |y, x| ((x + y) % 2) as f64).unwrap();
        let mut p = CapoParams::init_default(4, 9);
        p.zero_output_layer();
        let sh = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
        let up = Grid::from_fn(5, 5, |y, x| 1.0 + (y * 3 + x) as f64 * 0.1).unwrap();
        let grads = pcgd_backward(&d, &g, &p, sh, sh.transposed(), &up).unwrap();
        assert!(grads.d_depth.max_abs_diff(&up).unwrap() < 1e-12);
    }

    #[test]
    fn cumsum_adjoint_matches_dot_product() {
        let steps = Grid::from_fn(2, 5, |y, x| (y * 5 + x) as f64 - 3.0).unwrap();
        let anchor = [1.5, -2.0];
        let d_out = Grid::from_fn(2, 5, |y, x| ((y + 1) * (x + 2)) as f64 * 0.3).unwrap();
        let out = cumsum_rows(&steps, &anchor);
        let lhs: f64 = out
            .values()
            .iter()
            .zip(d_out.values())
            .map(|(a, b)| a * b)
            .sum();
        let (ds, da) = cumsum_rows_adjoint(&d_out);
        let mut rhs: f64 = anchor.iter().zip(&da).map(|(a, b)| a * b).sum();
        for y in 0..2 {
            for x in 0..4 {
                rhs += steps.get(y, x) * ds.get(y, x);
            }
        }
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
