#![allow(dead_code)]

use c2pd_core::{CapoParams, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Grid {
    Grid::from_fn(h, w, |_, _| rng.gen_range(lo..hi)).unwrap()
}

/// Random network with weights scaled up so the outputs are not negligible.
pub fn random_params(rng: &mut ChaCha8Rng, n: usize) -> CapoParams {
    let mut p = CapoParams::init_default(n, rng.gen());
    for v in p.iter_mut() {
        *v = rng.gen_range(-0.8..0.8);
    }
    p
}

/// Straightforward evaluation of the variation network on one window,
/// written without reference to the library's implementation.
pub fn oracle_network(params: &CapoParams, window: &[f64]) -> Vec<f64> {
    let n = params.n();
    let depth = &window[..n];
    let mut sq = 0.0;
    for d in depth {
        sq += d * d;
    }
    let s = (sq / n as f64 + 1.0).sqrt();
    let mut x: Vec<f64> = depth
        .iter()
        .map(|d| d / s)
        .chain(window[n..].iter().copied())
        .collect();
    let layers = params.layers();
    for (li, layer) in layers.iter().enumerate() {
        let mut next = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let mut z = layer.bias[o];
            for i in 0..layer.in_dim {
                z += layer.weights[o * layer.in_dim + i] * x[i];
            }
            next[o] = if li + 1 == layers.len() { z } else { z.tanh() };
        }
        x = next;
    }
    x.iter().map(|v| v * s).collect()
}

/// Windowed deformation of one sequence with a four-wide window covering
/// positions `t-3..=t`, enumerated exactly as written: build the window
/// values, fit the variations, center them, then let position `i` collect
/// slot `i` from the windows anchored at `i, i+1, i+2, i+3`.
pub fn oracle_capo_seq(
    stream: &[f64],
    guide: &[f64],
    params: &CapoParams,
    circular: bool,
) -> Vec<f64> {
    let w = stream.len() as isize;
    let pad = |i: isize| -> usize {
        if circular {
            i.rem_euclid(w) as usize
        } else {
            i.clamp(0, w - 1) as usize
        }
    };
    let window_at = |t: isize| -> Vec<f64> {
        let pos: Vec<usize> = (t - 3..=t).map(pad).collect();
        let mut d: Vec<f64> = pos.iter().map(|&p| stream[p]).collect();
        d.extend(pos.iter().map(|&p| guide[p]));
        d
    };
    let centered = |t: isize| -> Vec<f64> {
        let raw = oracle_network(params, &window_at(t));
        let mean = raw.iter().sum::<f64>() / 4.0;
        raw.iter().map(|v| v - mean).collect()
    };
    (0..w)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..4 {
                // Position i sits j steps before the anchor i+j, i.e. in
                // slot 3-j of that window.
                acc += centered(i + j)[(3 - j) as usize];
            }
            stream[i as usize] + acc / 4.0
        })
        .collect()
}

/// Row-wise application of [`oracle_capo_seq`].
pub fn oracle_capo_rows(stream: &Grid, guide: &Grid, params: &CapoParams, circular: bool) -> Grid {
    let (h, w) = stream.dims();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend(oracle_capo_seq(
            stream.row(y),
            guide.row(y),
            params,
            circular,
        ));
    }
    Grid::from_vec(h, w, out).unwrap()
}

/// Gradient-domain deformation of one sequence: differentiate, split signs,
/// deform both parts, recombine and integrate from the first sample.
fn oracle_pcgd_seq(depth: &[f64], guide: &[f64], params: &CapoParams) -> Vec<f64> {
    let w = depth.len();
    let mut diff = vec![0.0; w];
    let mut gdiff = vec![0.0; w];
    for i in 0..w - 1 {
        diff[i] = depth[i + 1] - depth[i];
        gdiff[i] = (guide[i + 1] - guide[i]).abs();
    }
    let pos: Vec<f64> = diff
        .iter()
        .map(|&g| if g > 0.0 { g } else { 0.0 })
        .collect();
    let neg: Vec<f64> = diff
        .iter()
        .map(|&g| if g < 0.0 { -g } else { 0.0 })
        .collect();
    let pos_out = oracle_capo_seq(&pos, &gdiff, params, false);
    let neg_out = oracle_capo_seq(&neg, &gdiff, params, false);
    let mut out = vec![depth[0]; w];
    for i in 0..w - 1 {
        out[i + 1] = out[i] + (pos_out[i] - neg_out[i]);
    }
    out
}

/// Full gradient-domain deformation with a 1x4 horizontal and 4x1 vertical
/// window under replicate padding.
pub fn oracle_pcgd(depth: &Grid, guide: &Grid, params: &CapoParams) -> Grid {
    let (h, w) = depth.dims();
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        let r = oracle_pcgd_seq(depth.row(y), guide.row(y), params);
        horiz[y * w..(y + 1) * w].copy_from_slice(&r);
    }
    let mut vert = vec![0.0; h * w];
    for x in 0..w {
        let col: Vec<f64> = (0..h).map(|y| depth.get(y, x)).collect();
        let gcol: Vec<f64> = (0..h).map(|y| guide.get(y, x)).collect();
        let r = oracle_pcgd_seq(&col, &gcol, params);
        for y in 0..h {
            vert[y * w + x] = r[y];
        }
    }
    Grid::from_vec(
        h,
        w,
        horiz
            .iter()
            .zip(&vert)
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    )
    .unwrap()
}
