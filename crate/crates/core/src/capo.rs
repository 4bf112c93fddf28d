//! Continuity-constrained asymmetrical pixelwise operation.
//!
//! Every window anchor produces `n` raw target variations from the `2n`
//! window values (stream then guidance). The variations are mean-centered so
//! each window moves mass without creating or destroying it, and every cell
//! then receives the average of the centered variations assigned to its slot
//! by the `n` windows that contain it.
//!
//! The window anchored at `a` contributes slot `k` to cell `a + offset_k`, so
//! cell `x` reads slot `k` of the window anchored at `x - offset_k`. Anchors
//! that fall outside the grid are completed by the padding rule: under
//! circular padding they wrap onto in-grid anchors, under replicate padding
//! they are virtual windows whose slots clamp to the border.

use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, WindowSpec};

/// Hidden widths of the default variation network.
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// Floor added to the mean square of the stream values before taking the
/// window scale, in squared stream units.
pub const SCALE_FLOOR: f64 = 1.0;

/// One fully connected layer, `out = weights * in + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Parameters of the variation network.
///
/// `tanh` follows every layer except the last. The network maps the `2n`
/// window values to `n` raw variations; the stream half of the input is
/// divided by the window scale `s = sqrt(mean(stream^2) + SCALE_FLOOR)` and
/// the output is multiplied by `s`, so the variations follow the magnitude of
/// the stream being deformed.
#[derive(Debug, Clone, PartialEq)]
pub struct CapoParams {
    n: usize,
    layers: Vec<Layer>,
}

impl CapoParams {
    pub fn new(n: usize, layers: Vec<Layer>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("window cardinality must be positive"));
        }
        let first = layers
            .first()
            .ok_or(Error::Invalid("network needs at least one layer"))?;
        if first.in_dim != 2 * n {
            return Err(Error::Invalid("first layer input width must be 2n"));
        }
        if layers.last().map(|l| l.out_dim) != Some(n) {
            return Err(Error::Invalid("last layer output width must be n"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Invalid("consecutive layer widths disagree"));
            }
        }
        for layer in &layers {
            if layer.out_dim == 0
                || layer.weights.len() != layer.out_dim * layer.in_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::Invalid(
                    "layer buffer sizes disagree with its dimensions",
                ));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self { n, layers })
    }

    /// All-zero network with the given hidden widths.
    pub fn zeros(n: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = 2 * n;
        for &h in hidden.iter().chain(core::iter::once(&n)) {
            layers.push(Layer::zeros(h, in_dim));
            in_dim = h;
        }
        Self { n, layers }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(n: usize, hidden: &[usize], seed: u64) -> Self {
        let mut params = Self::zeros(n, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let bound = 1.0 / libm::sqrt(layer.in_dim as f64);
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut layer.weights {
                *w = dist.sample(&mut rng);
            }
        }
        params
    }

    /// Default `2n -> 32 -> 32 -> n` network.
    pub fn init_default(n: usize, seed: u64) -> Self {
        Self::init(n, &DEFAULT_HIDDEN, seed)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            n: self.n,
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim, l.in_dim))
                .collect(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters in storage order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Invalid("flat parameter length mismatch"));
        }
        for (p, &v) in self.iter_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    /// Zeroes the final layer so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.iter_mut().for_each(|w| *w = 0.0);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim.max(l.in_dim))
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn ensure_matches(&self, spec: &WindowSpec) -> Result<()> {
        if self.n != spec.n() {
            return Err(Error::Invalid(
                "network window cardinality differs from window spec",
            ));
        }
        Ok(())
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &CapoParams) -> Result<()> {
        if self.param_count() != other.param_count() || self.n != other.n {
            return Err(Error::Invalid("parameter shapes differ"));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
        Ok(())
    }
}

/// Per-window activations kept between the forward and backward pass.
pub(crate) struct Scratch {
    /// Activations per layer boundary; `acts[0]` is the (scaled) network input.
    acts: Vec<Vec<f64>>,
    scale: f64,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(params: &CapoParams) -> Self {
        let mut acts = Vec::with_capacity(params.layers.len() + 1);
        acts.push(vec![0.0; 2 * params.n]);
        for l in &params.layers {
            acts.push(vec![0.0; l.out_dim]);
        }
        let w = params.max_width();
        Self {
            acts,
            scale: 1.0,
            delta: vec![0.0; w],
            delta_next: vec![0.0; w],
        }
    }
}

/// Runs the variation network on one window, writing `n` raw variations.
pub(crate) fn interaction_into(
    window: &[f64],
    params: &CapoParams,
    scratch: &mut Scratch,
    raw: &mut [f64],
) {
    let n = params.n;
    let (depth, guide) = window.split_at(n);
    let mean_sq = depth.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let scale = libm::sqrt(mean_sq + SCALE_FLOOR);
    scratch.scale = scale;
    {
        let input = &mut scratch.acts[0];
        for (dst, &d) in input[..n].iter_mut().zip(depth) {
            *dst = d / scale;
        }
        input[n..].copy_from_slice(guide);
    }
    let last = params.layers.len() - 1;
    for (li, layer) in params.layers.iter().enumerate() {
        let (before, after) = scratch.acts.split_at_mut(li + 1);
        let input = &before[li];
        let output = &mut after[0];
        for (o, out) in output.iter_mut().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut z = layer.bias[o];
            for (w, x) in row.iter().zip(input.iter()) {
                z += w * x;
            }
            *out = if li == last { z } else { libm::tanh(z) };
        }
    }
    let y = &scratch.acts[last + 1];
    for (r, &v) in raw.iter_mut().zip(y.iter()) {
        *r = scale * v;
    }
}

/// Reverse pass for one window. `interaction_into` must have just run on the
/// same window with the same scratch. Adds parameter gradients into `grads`
/// and writes the window-value gradient into `d_window`.
pub(crate) fn interaction_backward(
    window: &[f64],
    params: &CapoParams,
    scratch: &mut Scratch,
    d_raw: &[f64],
    d_window: &mut [f64],
    grads: &mut CapoParams,
) {
    let n = params.n;
    let scale = scratch.scale;
    let last = params.layers.len() - 1;
    let y = &scratch.acts[last + 1];
    let mut d_scale = 0.0;
    for k in 0..n {
        scratch.delta[k] = scale * d_raw[k];
        d_scale += y[k] * d_raw[k];
    }
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];
        let input = &scratch.acts[li];
        let output = &scratch.acts[li + 1];
        // delta currently holds dL/d(output activation); move it to dL/dz.
        if li != last {
            for o in 0..layer.out_dim {
                scratch.delta[o] *= 1.0 - output[o] * output[o];
            }
        }
        for v in scratch.delta_next[..layer.in_dim].iter_mut() {
            *v = 0.0;
        }
        for o in 0..layer.out_dim {
            let dz = scratch.delta[o];
            g.bias[o] += dz;
            let row = o * layer.in_dim;
            for i in 0..layer.in_dim {
                g.weights[row + i] += dz * input[i];
                scratch.delta_next[i] += dz * layer.weights[row + i];
            }
        }
        core::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
    }
    // delta now holds dL/d(network input).
    let d_in = &scratch.delta;
    let depth = &window[..n];
    let mut dot = 0.0;
    for k in 0..n {
        dot += d_in[k] * depth[k];
    }
    // s = sqrt(mean(d^2) + floor), ds/dd_k = d_k / (n s); input_k = d_k / s.
    let coupling = (d_scale - dot / (scale * scale)) / (n as f64 * scale);
    for k in 0..n {
        d_window[k] = d_in[k] / scale + coupling * depth[k];
        d_window[n + k] = d_in[n + k];
    }
}

/// Raw target variations for one window of `2n` values (stream then guidance).
pub fn interaction(window_values: &[f64], params: &CapoParams) -> Result<Vec<f64>> {
    if window_values.len() != 2 * params.n {
        return Err(Error::Invalid("window value count must be 2n"));
    }
    let mut scratch = Scratch::new(params);
    let mut raw = vec![0.0; params.n];
    interaction_into(window_values, params, &mut scratch, &mut raw);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw variations"));
    }
    Ok(raw)
}

/// Signature of the volume-conserving normalization used by [`capo_apply_with`].
pub type ConserveFn = fn(&[f64], &mut [f64]);

/// Subtracts the mean so the variations sum to zero.
pub fn conserve_into(raw: &[f64], out: &mut [f64]) {
    let mean = raw.iter().fold(0.0, |acc, v| acc + v) / raw.len() as f64;
    for (o, r) in out.iter_mut().zip(raw) {
        *o = r - mean;
    }
}

pub fn conserve(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw variations"));
    }
    let mut out = vec![0.0; raw.len()];
    conserve_into(raw, &mut out);
    Ok(out)
}

/// Raw and volume-conserving variations of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl VariationVector {
    pub fn compute(window_values: &[f64], params: &CapoParams) -> Result<Self> {
        let raw = interaction(window_values, params)?;
        let normalized = conserve(&raw)?;
        Ok(Self { raw, normalized })
    }
}

/// Set of anchors whose windows are needed to produce every output cell.
struct AnchorDomain {
    y0: isize,
    x0: isize,
    height: usize,
    width: usize,
    circular: bool,
    grid_h: usize,
    grid_w: usize,
}

impl AnchorDomain {
    fn new(spec: &WindowSpec, grid_h: usize, grid_w: usize) -> Self {
        let circular = spec.padding == crate::grid::Padding::Circular;
        if circular {
            return Self {
                y0: 0,
                x0: 0,
                height: grid_h,
                width: grid_w,
                circular,
                grid_h,
                grid_w,
            };
        }
        let offs = spec.shape.offsets();
        let (min_dy, max_dy) = bounds(offs.iter().map(|o| o.0));
        let (min_dx, max_dx) = bounds(offs.iter().map(|o| o.1));
        Self {
            y0: -max_dy,
            x0: -max_dx,
            height: (grid_h as isize - 1 - min_dy + max_dy + 1) as usize,
            width: (grid_w as isize - 1 - min_dx + max_dx + 1) as usize,
            circular,
            grid_h,
            grid_w,
        }
    }

    fn len(&self) -> usize {
        self.height * self.width
    }

    fn anchor(&self, index: usize) -> (isize, isize) {
        (
            self.y0 + (index / self.width) as isize,
            self.x0 + (index % self.width) as isize,
        )
    }

    #[inline]
    fn index(&self, ay: isize, ax: isize) -> usize {
        if self.circular {
            let y = ay.rem_euclid(self.grid_h as isize) as usize;
            let x = ax.rem_euclid(self.grid_w as isize) as usize;
            y * self.width + x
        } else {
            ((ay - self.y0) as usize) * self.width + (ax - self.x0) as usize
        }
    }
}

fn bounds(it: impl Iterator<Item = isize>) -> (isize, isize) {
    it.fold((isize::MAX, isize::MIN), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn gather_window(
    stream: &Grid,
    guide: &Grid,
    spec: &WindowSpec,
    ay: isize,
    ax: isize,
    buf: &mut [f64],
) {
    let (h, w) = stream.dims();
    let n = spec.n();
    for (k, (cy, cx)) in spec.coords(ay, ax, h, w).enumerate() {
        buf[k] = stream.get(cy, cx);
        buf[n + k] = guide.get(cy, cx);
    }
}

fn check_inputs(stream: &Grid, guide: &Grid, params: &CapoParams, spec: &WindowSpec) -> Result<()> {
    stream.ensure_same_dims(guide)?;
    params.ensure_matches(spec)
}

/// Centered variations for every anchor of the domain, `n` per anchor.
fn anchor_variations(
    stream: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec: &WindowSpec,
    domain: &AnchorDomain,
    conserve: ConserveFn,
) -> Vec<f64> {
    let n = spec.n();
    let mut scratch = Scratch::new(params);
    let mut window = vec![0.0; 2 * n];
    let mut raw = vec![0.0; n];
    let mut vstar = vec![0.0; domain.len() * n];
    for a in 0..domain.len() {
        let (ay, ax) = domain.anchor(a);
        gather_window(stream, guide, spec, ay, ax, &mut window);
        interaction_into(&window, params, &mut scratch, &mut raw);
        conserve(&raw, &mut vstar[a * n..(a + 1) * n]);
    }
    vstar
}

/// Deforms `stream` under `guide`; see the module docs for the exact rule.
pub fn capo_apply(
    stream: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec: WindowSpec,
) -> Result<Grid> {
    capo_apply_with(stream, guide, params, spec, conserve_into)
}

/// [`capo_apply`] with a caller-supplied normalization step. Used by the
/// self-test harness to check that a broken normalization is detected.
pub fn capo_apply_with(
    stream: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec: WindowSpec,
    conserve: ConserveFn,
) -> Result<Grid> {
    check_inputs(stream, guide, params, &spec)?;
    let (h, w) = stream.dims();
    let n = spec.n();
    let domain = AnchorDomain::new(&spec, h, w);
    let vstar = anchor_variations(stream, guide, params, &spec, &domain, conserve);
    let offsets = spec.shape.offsets();
    let n_f = n as f64;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // Slots in reverse order visit the windows in ascending anchor order.
            let mut acc = 0.0;
            for k in (0..n).rev() {
                let (dy, dx) = offsets[k];
                let a = domain.index(y as isize - dy, x as isize - dx);
                acc += vstar[a * n + k];
            }
            out.push(stream.get(y, x) + acc / n_f);
        }
    }
    let out = Grid::raw(h, w, out);
    out.ensure_finite("capo output")?;
    Ok(out)
}

/// Gradients of a scalar objective with respect to the inputs of an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_stream: Grid,
    pub d_guide: Grid,
    pub d_params: CapoParams,
}

/// Reverse-mode gradients of [`capo_apply`] for the given upstream gradient.
pub fn capo_backward(
    stream: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec: WindowSpec,
    upstream: &Grid,
) -> Result<Gradients> {
    let mut d_params = params.zeros_like();
    let (d_stream, d_guide) =
        capo_backward_accumulate(stream, guide, params, spec, upstream, &mut d_params)?;
    Ok(Gradients {
        d_stream,
        d_guide,
        d_params,
    })
}

/// Like [`capo_backward`] but adds parameter gradients into `d_params`.
pub fn capo_backward_accumulate(
    stream: &Grid,
    guide: &Grid,
    params: &CapoParams,
    spec: WindowSpec,
    upstream: &Grid,
    d_params: &mut CapoParams,
) -> Result<(Grid, Grid)> {
    check_inputs(stream, guide, params, &spec)?;
    stream.ensure_same_dims(upstream)?;
    if d_params.param_count() != params.param_count() {
        return Err(Error::Invalid(
            "gradient buffer shape differs from parameters",
        ));
    }
    let (h, w) = stream.dims();
    let n = spec.n();
    let domain = AnchorDomain::new(&spec, h, w);
    let offsets = spec.shape.offsets();

    // Each (anchor, slot) pair feeds exactly one output cell.
    let mut d_vstar = vec![0.0; domain.len() * n];
    for y in 0..h {
        for x in 0..w {
            let g = upstream.get(y, x) / n as f64;
            for (k, &(dy, dx)) in offsets.iter().enumerate() {
                let a = domain.index(y as isize - dy, x as isize - dx);
                d_vstar[a * n + k] = g;
            }
        }
    }

    let mut d_stream = upstream.values().to_vec();
    let mut d_guide = vec![0.0; h * w];
    let mut scratch = Scratch::new(params);
    let mut window = vec![0.0; 2 * n];
    let mut raw = vec![0.0; n];
    let mut d_raw = vec![0.0; n];
    let mut d_window = vec![0.0; 2 * n];
    let mut coords = vec![(0usize, 0usize); n];
    for a in 0..domain.len() {
        let dv = &d_vstar[a * n..(a + 1) * n];
        if dv.iter().all(|&v| v == 0.0) {
            continue;
        }
        // Centering is its own adjoint.
        conserve_into(dv, &mut d_raw);
        let (ay, ax) = domain.anchor(a);
        for (slot, c) in coords.iter_mut().zip(spec.coords(ay, ax, h, w)) {
            *slot = c;
        }
        gather_window(stream, guide, &spec, ay, ax, &mut window);
        interaction_into(&window, params, &mut scratch, &mut raw);
        interaction_backward(
            &window,
            params,
            &mut scratch,
            &d_raw,
            &mut d_window,
            d_params,
        );
        for (k, &(cy, cx)) in coords.iter().enumerate() {
            d_stream[cy * w + cx] += d_window[k];
            d_guide[cy * w + cx] += d_window[n + k];
        }
    }
    let d_stream = Grid::raw(h, w, d_stream);
    let d_guide = Grid::raw(h, w, d_guide);
    d_stream.ensure_finite("capo stream gradient")?;
    d_guide.ensure_finite("capo guide gradient")?;
    Ok((d_stream, d_guide))
}
