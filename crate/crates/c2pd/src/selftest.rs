//! Built-in invariant suite behind `c2pd selftest`.
//!
//! Each check is seeded and sized so that the whole suite finishes well under
//! a minute in a release build.

use std::io::Write;
use std::time::Instant;

use c2pd_core::capo::{capo_apply_with, conserve_into, ConserveFn};
use c2pd_core::optim::{CapoProblem, GradCheck, PcgdProblem};
use c2pd_core::pcgd::{differentiate, integrate, Axis};
use c2pd_core::resample::{bicubic_up, BicubicKernel};
use c2pd_core::{pcgd_apply, CapoParams, Grid, Padding, WindowShape, WindowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imageio::{decode_params, decode_pfm, encode_params, encode_pfm};

/// Replaceable internals, so tests can check that the suite catches faults.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub conserve: ConserveFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            conserve: conserve_into,
        }
    }
}

/// Outcome of one check: a short detail line either way.
pub type Outcome = std::result::Result<String, String>;

pub struct Check {
    pub name: &'static str,
    pub run: fn(&Hooks) -> Outcome,
}

pub const CONSERVATION_TOL: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const ROUND_TRIP_TOL: f64 = 1e-12;
pub const TRANSPOSE_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
pub const KERNEL_TOL: f64 = 1e-12;
pub const RAMP_TOL: f64 = 1e-10;

const SHAPES: [WindowShape; 3] = [WindowShape::Row4, WindowShape::Col4, WindowShape::Square3];

pub fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "conservation",
            run: conservation,
        },
        Check {
            name: "identity",
            run: identity,
        },
        Check {
            name: "round-trip",
            run: round_trip,
        },
        Check {
            name: "locality",
            run: locality,
        },
        Check {
            name: "transpose-equivariance",
            run: transpose_equivariance,
        },
        Check {
            name: "grad-check",
            run: grad_checks,
        },
        Check {
            name: "kernel",
            run: kernel,
        },
        Check {
            name: "io-round-trip",
            run: io_round_trip,
        },
    ]
}

pub fn find(name: &str) -> Option<Check> {
    checks().into_iter().find(|c| c.name == name)
}

/// Runs every check, printing one `PASS`/`FAIL` line each; true iff all pass.
pub fn run_suite(hooks: &Hooks, out: &mut impl Write) -> bool {
    let mut all = true;
    for check in checks() {
        let start = Instant::now();
        let result = (check.run)(hooks);
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        all &= result.is_ok();
        let _ = writeln!(out, "{tag} {:<24} {detail} ({secs:.2}s)", check.name);
    }
    all
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Grid {
    Grid::from_fn(h, w, |_, _| rng.gen_range(lo..hi)).expect("non-empty grid")
}

/// Network with weights large enough that the variations are not negligible.
fn random_params(rng: &mut ChaCha8Rng, n: usize) -> CapoParams {
    let mut p = CapoParams::init_default(n, rng.gen());
    for v in p.iter_mut() {
        *v = rng.gen_range(-0.8..0.8);
    }
    p
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn conservation(hooks: &Hooks) -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let shape = SHAPES[case % 3];
        let h = r.gen_range(1..=12);
        let w = r.gen_range(1..=12);
        let spec = WindowSpec::new(shape, Padding::Circular);
        let s = random_grid(&mut r, h, w, -50.0, 200.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let p = random_params(&mut r, spec.n());
        let out = capo_apply_with(&s, &g, &p, spec, hooks.conserve).map_err(err)?;
        let sum_in: f64 = s.values().iter().sum();
        let sum_out: f64 = out.values().iter().sum();
        let scale = s.values().iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let rel = (sum_out - sum_in).abs() / scale;
        worst = worst.max(rel);
        if rel > CONSERVATION_TOL {
            return Err(format!(
                "case {case} ({h}x{w} {}): relative drift {rel:.3e}",
                shape.name()
            ));
        }
    }
    Ok(format!("100 triples, worst relative drift {worst:.2e}"))
}

fn identity(hooks: &Hooks) -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for padding in [Padding::Replicate, Padding::Circular] {
        for shape in SHAPES {
            let spec = WindowSpec::new(shape, padding);
            let s = random_grid(&mut r, 64, 64, 20.0, 200.0);
            let g = random_grid(&mut r, 64, 64, 0.0, 1.0);
            let p = CapoParams::zeros(spec.n(), &c2pd_core::capo::DEFAULT_HIDDEN);
            let out = capo_apply_with(&s, &g, &p, spec, hooks.conserve).map_err(err)?;
            worst = worst.max(out.max_abs_diff(&s).map_err(err)?);
            if shape != WindowShape::Col4 {
                let out = pcgd_apply(&s, &g, &p, spec, spec.transposed()).map_err(err)?;
                worst = worst.max(out.max_abs_diff(&s).map_err(err)?);
            }
        }
    }
    if worst > IDENTITY_TOL {
        return Err(format!("max abs error {worst:.3e}"));
    }
    Ok(format!("64x64, max abs error {worst:.2e}"))
}

fn round_trip(_: &Hooks) -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = random_grid(&mut r, 64, 64, 0.0, 1.0);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let back = integrate(&differentiate(&d, axis).map_err(err)?).map_err(err)?;
            worst = worst.max(back.max_abs_diff(&d).map_err(err)?);
        }
    }
    if worst > ROUND_TRIP_TOL {
        return Err(format!("max abs error {worst:.3e}"));
    }
    Ok(format!("100 grids x 2 axes, max abs error {worst:.2e}"))
}

fn locality(hooks: &Hooks) -> Outcome {
    let mut r = rng(4);
    let w = 32;
    let spec = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
    let s = random_grid(&mut r, 1, w, 20.0, 200.0);
    let g = random_grid(&mut r, 1, w, 0.0, 1.0);
    let p = random_params(&mut r, 4);
    let base = capo_apply_with(&s, &g, &p, spec, hooks.conserve).map_err(err)?;
    let mut touched = 0;
    for i in 0..w {
        for (which, delta) in [(0, 7.5), (1, 0.25)] {
            let (s2, g2) = if which == 0 {
                (
                    s.with_value(0, i, s.get(0, i) + delta).map_err(err)?,
                    g.clone(),
                )
            } else {
                (
                    s.clone(),
                    g.with_value(0, i, g.get(0, i) + delta).map_err(err)?,
                )
            };
            let out = capo_apply_with(&s2, &g2, &p, spec, hooks.conserve).map_err(err)?;
            for j in 0..w {
                let changed = out.get(0, j).to_bits() != base.get(0, j).to_bits();
                if changed && i.abs_diff(j) > 3 {
                    return Err(format!("perturbing cell {i} changed cell {j}"));
                }
                touched += usize::from(changed);
            }
        }
    }
    if touched == 0 {
        return Err("no perturbation changed any output".into());
    }
    Ok(format!("1x{w} row, every cell perturbed, reach <= 3"))
}

fn transpose_equivariance(hooks: &Hooks) -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    // Only the 1x4/4x1 pair maps onto itself under transposition; the 3x3
    // window's row-major slot order is permuted by it.
    for case in 0..20 {
        let shape = [WindowShape::Row4, WindowShape::Col4][case % 2];
        let spec = WindowSpec::new(shape, Padding::Replicate);
        let s = random_grid(&mut r, 16, 16, 20.0, 200.0);
        let g = random_grid(&mut r, 16, 16, 0.0, 1.0);
        let p = random_params(&mut r, spec.n());
        let a = capo_apply_with(&s, &g, &p, spec, hooks.conserve)
            .map_err(err)?
            .transpose();
        let b = capo_apply_with(
            &s.transpose(),
            &g.transpose(),
            &p,
            spec.transposed(),
            hooks.conserve,
        )
        .map_err(err)?;
        worst = worst.max(a.max_abs_diff(&b).map_err(err)?);
        if shape == WindowShape::Row4 {
            let (h, v) = (spec, spec.transposed());
            let a = pcgd_apply(&s, &g, &p, h, v).map_err(err)?.transpose();
            let b = pcgd_apply(&s.transpose(), &g.transpose(), &p, h, v).map_err(err)?;
            worst = worst.max(a.max_abs_diff(&b).map_err(err)?);
        }
    }
    if worst > TRANSPOSE_TOL {
        return Err(format!("max abs deviation {worst:.3e}"));
    }
    Ok(format!("20 cases 16x16, max abs deviation {worst:.2e}"))
}

/// Worst masked relative error of the capo and pcgd gradients.
pub fn grad_check_report(seed: u64) -> c2pd_core::Result<Vec<(String, f64)>> {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    for (h, w) in [(1, 8), (8, 8)] {
        let spec = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
        let s = random_grid(&mut r, h, w, -3.0, 3.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let p = random_params(&mut r, 4);
        let problem = CapoProblem {
            height: h,
            width: w,
            spec,
            template: p.clone(),
        };
        let x = CapoProblem::pack(&s, &g, &p);
        let up: Vec<f64> = (0..h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
        let report = GradCheck::default().run(&problem, &x, &up, &vec![true; x.len()])?;
        rows.push((format!("capo {h}x{w}"), report.max_rel_error));
    }
    let spec_h = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
    let d = random_grid(&mut r, 8, 8, 0.0, 10.0);
    let g = random_grid(&mut r, 8, 8, 0.0, 1.0);
    let p = random_params(&mut r, 4);
    let problem = PcgdProblem {
        height: 8,
        width: 8,
        spec_h,
        spec_v: spec_h.transposed(),
        template: p.clone(),
    };
    let x = CapoProblem::pack(&d, &g, &p);
    let up: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mask = problem.kink_mask(&x, 1e-6);
    let report = GradCheck::default().run(&problem, &x, &up, &mask)?;
    rows.push(("pcgd 8x8".into(), report.max_rel_error));
    Ok(rows)
}

fn grad_checks(_: &Hooks) -> Outcome {
    let rows = grad_check_report(6).map_err(err)?;
    let detail = rows
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    if rows.iter().any(|(_, e)| !(*e <= GRAD_TOL)) {
        return Err(detail);
    }
    Ok(detail)
}

fn kernel(_: &Hooks) -> Outcome {
    let k = BicubicKernel::default();
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let phase = i as f64 / 1000.0;
        let sum: f64 = k.weights(phase).iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    if worst > KERNEL_TOL {
        return Err(format!("partition of unity off by {worst:.3e}"));
    }
    let half = k.weights(0.5);
    let expected = [-0.0625, 0.5625, 0.5625, -0.0625];
    if half
        .iter()
        .zip(expected)
        .any(|(a, b)| (a - b).abs() > KERNEL_TOL)
    {
        return Err(format!("phase-0.5 weights {half:?}"));
    }
    let ramp_err = ramp_error(4).map_err(err)?.max(ramp_error(8).map_err(err)?);
    if ramp_err > RAMP_TOL {
        return Err(format!("linear ramp error {ramp_err:.3e}"));
    }
    Ok(format!(
        "1000 phases, unity error {worst:.1e}, ramp error {ramp_err:.1e}"
    ))
}

/// Worst deviation from an affine ramp over upsampled cells whose taps all
/// fall inside the source grid.
pub fn ramp_error(factor: usize) -> c2pd_core::Result<f64> {
    let (h, w) = (12, 16);
    let lr = Grid::from_fn(h, w, |y, x| 3.0 + 0.75 * x as f64 - 1.25 * y as f64)?;
    let up = bicubic_up(&lr, factor)?;
    let f = factor as f64;
    let src = |i: usize| (i as f64 + 0.5) / f - 0.5;
    let inside = |s: f64, len: usize| s >= 1.0 && s < (len - 2) as f64;
    let mut worst = 0.0f64;
    for y in 0..h * factor {
        for x in 0..w * factor {
            let (sy, sx) = (src(y), src(x));
            if inside(sy, h) && inside(sx, w) {
                let expected = 3.0 + 0.75 * sx - 1.25 * sy;
                worst = worst.max((up.get(y, x) - expected).abs());
            }
        }
    }
    Ok(worst)
}

fn io_round_trip(_: &Hooks) -> Outcome {
    let mut r = rng(7);
    let g = random_grid(&mut r, 9, 13, -500.0, 500.0);
    let img = decode_pfm(&encode_pfm(&g))?;
    for (a, b) in img.data.iter().zip(g.values()) {
        if a.to_bits() != (*b as f32).to_bits() {
            return Err("PFM samples differ after f32 truncation".into());
        }
    }
    let p = CapoParams::init_default(9, r.gen());
    let bytes = encode_params(&p);
    let back = decode_params(&bytes)?;
    if encode_params(&back) != bytes || back != p {
        return Err("parameter file is not bit-identical".into());
    }
    Ok("PFM and parameter files bit-exact".into())
}
