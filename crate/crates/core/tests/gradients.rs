mod common;

use c2pd_core::optim::{CapoProblem, GradCheck, PcgdProblem};
use c2pd_core::{Padding, WindowShape, WindowSpec};
use common::*;
use rand::Rng;

const TOL: f64 = 1e-4;

#[test]
fn capo_backward_matches_finite_differences() {
    let mut r = rng(21);
    let cases = [
        (1, 8, WindowShape::Row4, Padding::Replicate),
        (1, 8, WindowShape::Row4, Padding::Circular),
        (8, 8, WindowShape::Row4, Padding::Replicate),
        (8, 8, WindowShape::Col4, Padding::Circular),
        (5, 6, WindowShape::Square3, Padding::Replicate),
    ];
    for (h, w, shape, padding) in cases {
        let spec = WindowSpec::new(shape, padding);
        let s = random_grid(&mut r, h, w, -3.0, 3.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let p = random_params(&mut r, spec.n());
        let problem = CapoProblem {
            height: h,
            width: w,
            spec,
            template: p.clone(),
        };
        let x = CapoProblem::pack(&s, &g, &p);
        let up: Vec<f64> = (0..h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
        let report = GradCheck::default()
            .run(&problem, &x, &up, &vec![true; x.len()])
            .unwrap();
        assert!(
            report.max_rel_error <= TOL,
            "{h}x{w} {shape:?} {padding:?}: {report:?}"
        );
    }
}

#[test]
fn pcgd_backward_matches_finite_differences() {
    let mut r = rng(22);
    for case in 0..3 {
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
        let report = GradCheck::default().run(&problem, &x, &up, &mask).unwrap();
        assert!(
            report.checked > 64 + p.param_count(),
            "mask removed too much: {report:?}"
        );
        assert!(report.max_rel_error <= TOL, "case {case}: {report:?}");
    }
}

#[test]
fn pcgd_parameter_gradient_sums_four_streams() {
    use c2pd_core::capo::capo_backward;
    use c2pd_core::pcgd::{forward_difference, pcgd_backward, Axis};
    use c2pd_core::Grid;

    let mut r = rng(23);
    let spec_h = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
    let d = random_grid(&mut r, 6, 6, 0.0, 10.0);
    let g = random_grid(&mut r, 6, 6, 0.0, 1.0);
    let p = random_params(&mut r, 4);
    let up = random_grid(&mut r, 6, 6, -1.0, 1.0);
    let total = pcgd_backward(&d, &g, &p, spec_h, spec_h.transposed(), &up)
        .unwrap()
        .d_params;

    // Rebuild the upstream of each of the four deformations by hand.
    let mut expected = p.zeros_like();
    for (axis, spec) in [
        (Axis::Horizontal, spec_h),
        (Axis::Vertical, spec_h.transposed()),
    ] {
        let diff = forward_difference(&d, axis);
        let gmag = forward_difference(&g, axis).map(f64::abs).unwrap();
        let pos = diff.map(|v| v.max(0.0)).unwrap();
        let neg = diff.map(|v| -v.min(0.0)).unwrap();
        let half = up.map(|v| 0.5 * v).unwrap();
        let (h, w) = d.dims();
        // d(steps[k]) = sum of the reconstruction gradient after k along the axis.
        let steps = Grid::from_fn(h, w, |y, x| match axis {
            Axis::Horizontal => (x + 1..w).map(|c| half.get(y, c)).sum(),
            Axis::Vertical => (y + 1..h).map(|rr| half.get(rr, x)).sum(),
        })
        .unwrap();
        let neg_steps = steps.map(|v| -v).unwrap();
        expected
            .accumulate(
                &capo_backward(&pos, &gmag, &p, spec, &steps)
                    .unwrap()
                    .d_params,
            )
            .unwrap();
        expected
            .accumulate(
                &capo_backward(&neg, &gmag, &p, spec, &neg_steps)
                    .unwrap()
                    .d_params,
            )
            .unwrap();
    }
    let diff = total
        .iter()
        .zip(expected.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "{diff}");
}
