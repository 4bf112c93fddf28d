//! Dense row-major grids, window geometry and ordered accumulation.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Dense 2-D grid of `f64` samples stored row-major.
///
/// Grids are treated as values: operations return new grids rather than
/// mutating their inputs.
#[derive(Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

/// Depth samples in centimeters.
pub type DepthGrid = Grid;
/// Non-negative, unitless guidance magnitudes aligned with a depth grid.
pub type GuidanceGrid = Grid;

impl Grid {
    /// Grid of the given size with every cell set to `fill`.
    pub fn new(height: usize, width: usize, fill: f64) -> Result<Self> {
        check_dims(height, width)?;
        if !fill.is_finite() {
            return Err(Error::NonFinite("fill value"));
        }
        Ok(Self {
            height,
            width,
            values: alloc::vec![fill; height * width],
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 0.0)
    }

    /// Wraps row-major `values`. Fails on a length mismatch or a non-finite sample.
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::Size {
                height,
                width,
                reason: "value count does not match dimensions",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::from_vec(height, width, values)
    }

    /// Unchecked constructor for internal use where finiteness is verified later.
    pub(crate) fn raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    /// Returns a copy with cell `(y, x)` replaced.
    pub fn with_value(&self, y: usize, x: usize, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("cell value"));
        }
        let mut values = self.values.clone();
        values[y * self.width + x] = value;
        Ok(Self::raw(self.height, self.width, values))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_vec(
            self.height,
            self.width,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination of two grids of equal size.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_vec(self.height, self.width, values)
    }

    pub fn ensure_same_dims(&self, other: &Grid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// `(y, x) -> (x, y)`.
    pub fn transpose(&self) -> Self {
        let (h, w) = self.dims();
        let mut values = Vec::with_capacity(h * w);
        for x in 0..w {
            for y in 0..h {
                values.push(self.values[y * w + x]);
            }
        }
        Self::raw(w, h, values)
    }

    pub fn max_abs_diff(&self, other: &Grid) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max))
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid {}x{} ", self.height, self.width)?;
        f.debug_list().entries(self.values.iter()).finish()
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Size {
            height,
            width,
            reason: "dimensions must be positive",
        });
    }
    if height.checked_mul(width).is_none() {
        return Err(Error::Size {
            height,
            width,
            reason: "cell count overflows",
        });
    }
    Ok(())
}

/// Grid of the given size filled with `fill`.
pub fn make_grid(height: usize, width: usize, fill: f64) -> Result<DepthGrid> {
    Grid::new(height, width, fill)
}

pub fn transpose(grid: &Grid) -> Grid {
    grid.transpose()
}

/// Left-to-right sum in index order, `((a + b) + c) + ...`.
pub fn stable_sum(values: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite("summand"));
        }
        acc += v;
    }
    Ok(acc)
}

/// Boundary completion rule for windows that extend past the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Replicate,
    Circular,
}

impl Padding {
    /// Maps a possibly out-of-range index onto `0..len`.
    #[inline]
    pub fn resolve(self, index: isize, len: usize) -> usize {
        let len_i = len as isize;
        match self {
            Padding::Replicate => index.clamp(0, len_i - 1) as usize,
            Padding::Circular => index.rem_euclid(len_i) as usize,
        }
    }
}

/// Receptive-field shape of a windowed operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowShape {
    /// One row, four columns: `x_{t-3} ..= x_t`.
    Row4,
    /// Four rows, one column: `y_{t-3} ..= y_t`, scanned top to bottom.
    Col4,
    /// 3x3 centered on the anchor, slots in row-major order.
    Square3,
}

const ROW4: [(isize, isize); 4] = [(0, -3), (0, -2), (0, -1), (0, 0)];
const COL4: [(isize, isize); 4] = [(-3, 0), (-2, 0), (-1, 0), (0, 0)];
const SQUARE3: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl WindowShape {
    /// `(dy, dx)` of every slot relative to the anchor, in slot order.
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            WindowShape::Row4 => &ROW4,
            WindowShape::Col4 => &COL4,
            WindowShape::Square3 => &SQUARE3,
        }
    }

    /// `(rows, cols)` of the window.
    pub fn extent(self) -> (usize, usize) {
        match self {
            WindowShape::Row4 => (1, 4),
            WindowShape::Col4 => (4, 1),
            WindowShape::Square3 => (3, 3),
        }
    }

    pub fn n(self) -> usize {
        let (r, c) = self.extent();
        r * c
    }

    /// The shape obtained by swapping rows and columns.
    pub fn transposed(self) -> Self {
        match self {
            WindowShape::Row4 => WindowShape::Col4,
            WindowShape::Col4 => WindowShape::Row4,
            WindowShape::Square3 => WindowShape::Square3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowShape::Row4 => "1x4",
            WindowShape::Col4 => "4x1",
            WindowShape::Square3 => "3x3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1x4" => Some(WindowShape::Row4),
            "4x1" => Some(WindowShape::Col4),
            "3x3" => Some(WindowShape::Square3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub shape: WindowShape,
    pub padding: Padding,
}

impl WindowSpec {
    pub const fn new(shape: WindowShape, padding: Padding) -> Self {
        Self { shape, padding }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn transposed(&self) -> Self {
        Self::new(self.shape.transposed(), self.padding)
    }

    /// Grid coordinates of the window anchored at `(ay, ax)`.
    ///
    /// The anchor may lie outside the grid; every slot is resolved through
    /// the padding rule.
    #[inline]
    pub fn coords(
        &self,
        ay: isize,
        ax: isize,
        height: usize,
        width: usize,
    ) -> impl Iterator<Item = (usize, usize)> + '_ {
        let padding = self.padding;
        self.shape.offsets().iter().map(move |&(dy, dx)| {
            (
                padding.resolve(ay + dy, height),
                padding.resolve(ax + dx, width),
            )
        })
    }
}

/// Windows for every in-grid anchor, in row-major anchor order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub spec: WindowSpec,
    pub height: usize,
    pub width: usize,
    coords: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl WindowSet {
    pub fn anchor_count(&self) -> usize {
        self.height * self.width
    }

    /// Coordinates of the window anchored at `(y, x)`.
    pub fn coords(&self, y: usize, x: usize) -> &[(usize, usize)] {
        let n = self.spec.n();
        let a = y * self.width + x;
        &self.coords[a * n..(a + 1) * n]
    }

    /// The `2n` sampled values: stream values in slot order, then guidance
    /// values in the same order.
    pub fn values(&self, y: usize, x: usize) -> &[f64] {
        let n2 = 2 * self.spec.n();
        let a = y * self.width + x;
        &self.values[a * n2..(a + 1) * n2]
    }
}

pub fn extract_windows(stream: &Grid, guide: &Grid, spec: WindowSpec) -> Result<WindowSet> {
    stream.ensure_same_dims(guide)?;
    let (h, w) = stream.dims();
    let n = spec.n();
    let mut coords = Vec::with_capacity(h * w * n);
    let mut values = Vec::with_capacity(h * w * 2 * n);
    for y in 0..h {
        for x in 0..w {
            let start = coords.len();
            coords.extend(spec.coords(y as isize, x as isize, h, w));
            values.extend(coords[start..].iter().map(|&(cy, cx)| stream.get(cy, cx)));
            values.extend(coords[start..].iter().map(|&(cy, cx)| guide.get(cy, cx)));
        }
    }
    Ok(WindowSet {
        spec,
        height: h,
        width: w,
        coords,
        values,
    })
}
