mod common;

use c2pd_core::capo::DEFAULT_HIDDEN;
use c2pd_core::guidance::{guidance_from_gt, guidance_from_rgb, RgbImage};
use c2pd_core::optim::l1_loss;
use c2pd_core::pcgd::{differentiate, guidance_gradient, integrate, Axis};
use c2pd_core::resample::{bicubic_down, bicubic_up, BicubicKernel};
use c2pd_core::{
    capo_apply, extract_windows, pcgd_apply, CapoParams, Grid, Padding, WindowShape, WindowSpec,
};
use common::*;
use proptest::prelude::*;

const SHAPES: [WindowShape; 3] = [WindowShape::Row4, WindowShape::Col4, WindowShape::Square3];

fn shape() -> impl Strategy<Value = WindowShape> {
    prop::sample::select(SHAPES.to_vec())
}

fn padding() -> impl Strategy<Value = Padding> {
    prop::sample::select(vec![Padding::Replicate, Padding::Circular])
}

fn axis() -> impl Strategy<Value = Axis> {
    prop::sample::select(vec![Axis::Horizontal, Axis::Vertical])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conservation_under_circular_padding(seed: u64, h in 1usize..10, w in 1usize..10, shape in shape()) {
        let mut r = rng(seed);
        let spec = WindowSpec::new(shape, Padding::Circular);
        let s = random_grid(&mut r, h, w, -100.0, 200.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let p = random_params(&mut r, spec.n());
        let out = capo_apply(&s, &g, &p, spec).unwrap();
        let sum_in: f64 = s.values().iter().sum();
        let sum_out: f64 = out.values().iter().sum();
        let scale = s.values().iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((sum_out - sum_in).abs() <= 1e-9 * scale);
    }

    #[test]
    fn zero_network_is_identity(seed: u64, h in 2usize..20, w in 2usize..20, shape in shape(), padding in padding()) {
        let mut r = rng(seed);
        let spec = WindowSpec::new(shape, padding);
        let s = random_grid(&mut r, h, w, 20.0, 200.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let mut p = random_params(&mut r, spec.n());
        p.zero_output_layer();
        prop_assert_eq!(capo_apply(&s, &g, &p, spec).unwrap(), s.clone());
        let zeros = CapoParams::zeros(spec.n(), &DEFAULT_HIDDEN);
        let out = pcgd_apply(&s, &g, &zeros, spec, spec.transposed()).unwrap();
        prop_assert!(out.max_abs_diff(&s).unwrap() <= 1e-12);
    }

    #[test]
    fn capo_locality(seed: u64, h in 1usize..9, w in 1usize..9, shape in shape(), padding in padding(), guide_side: bool) {
        let mut r = rng(seed);
        let spec = WindowSpec::new(shape, padding);
        let s = random_grid(&mut r, h, w, 0.0, 100.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let p = random_params(&mut r, spec.n());
        let (py, px) = (seed as usize % h, (seed >> 8) as usize % w);
        let (s2, g2) = if guide_side {
            (s.clone(), g.with_value(py, px, g.get(py, px) + 0.3).unwrap())
        } else {
            (s.with_value(py, px, s.get(py, px) + 5.0).unwrap(), g.clone())
        };
        let a = capo_apply(&s, &g, &p, spec).unwrap();
        let b = capo_apply(&s2, &g2, &p, spec).unwrap();
        // Distances along each axis, accounting for wrap-around.
        let dist = |a: usize, b: usize, len: usize| {
            let d = a.abs_diff(b);
            if padding == Padding::Circular { d.min(len - d) } else { d }
        };
        let (ry, rx) = match shape {
            WindowShape::Row4 => (0, 3),
            WindowShape::Col4 => (3, 0),
            WindowShape::Square3 => (2, 2),
        };
        for y in 0..h {
            for x in 0..w {
                if dist(y, py, h) > ry || dist(x, px, w) > rx {
                    prop_assert_eq!(a.get(y, x).to_bits(), b.get(y, x).to_bits(), "cell ({}, {})", y, x);
                }
            }
        }
    }

    #[test]
    fn row_and_column_windows_are_transpose_equivariant(seed: u64, h in 1usize..12, w in 1usize..12, padding in padding()) {
        let mut r = rng(seed);
        let spec = WindowSpec::new(WindowShape::Row4, padding);
        let s = random_grid(&mut r, h, w, 0.0, 100.0);
        let g = random_grid(&mut r, h, w, 0.0, 1.0);
        let p = random_params(&mut r, 4);
        let a = capo_apply(&s, &g, &p, spec).unwrap().transpose();
        let b = capo_apply(&s.transpose(), &g.transpose(), &p, spec.transposed()).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
        if h >= 2 && w >= 2 {
            let a = pcgd_apply(&s, &g, &p, spec, spec.transposed()).unwrap().transpose();
            let b = pcgd_apply(&s.transpose(), &g.transpose(), &p, spec, spec.transposed()).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn windows_on_transposed_grid(seed: u64, h in 1usize..8, w in 1usize..8, padding in padding()) {
        let mut r = rng(seed);
        let s = random_grid(&mut r, h, w, 0.0, 1.0);
        let spec = WindowSpec::new(WindowShape::Row4, padding);
        let rows = extract_windows(&s, &s, spec).unwrap();
        let cols = extract_windows(&s.transpose(), &s.transpose(), spec.transposed()).unwrap();
        for y in 0..h {
            for x in 0..w {
                let swapped: Vec<_> = cols.coords(x, y).iter().map(|&(a, b)| (b, a)).collect();
                prop_assert_eq!(rows.coords(y, x), swapped.as_slice());
            }
        }
    }

    #[test]
    fn replicate_padding_adds_no_values(seed: u64, h in 1usize..8, w in 1usize..8, shape in shape()) {
        let mut r = rng(seed);
        let s = random_grid(&mut r, h, w, 0.0, 1.0);
        let set = extract_windows(&s, &s, WindowSpec::new(shape, Padding::Replicate)).unwrap();
        let n = shape.n();
        for y in 0..h {
            for x in 0..w {
                for v in &set.values(y, x)[..n] {
                    prop_assert!(s.values().contains(v));
                }
            }
        }
    }

    #[test]
    fn circular_windows_cover_every_cell_n_times(h in 1usize..9, w in 1usize..9, shape in shape()) {
        let s = Grid::zeros(h, w).unwrap();
        let set = extract_windows(&s, &s, WindowSpec::new(shape, Padding::Circular)).unwrap();
        let mut count = vec![0usize; h * w];
        for y in 0..h {
            for x in 0..w {
                for &(cy, cx) in set.coords(y, x) {
                    count[cy * w + cx] += 1;
                }
            }
        }
        prop_assert!(count.iter().all(|&c| c == shape.n()));
    }

    #[test]
    fn sign_split_and_round_trip(seed: u64, h in 2usize..16, w in 2usize..16, axis in axis()) {
        let mut r = rng(seed);
        let d = random_grid(&mut r, h, w, 0.0, 1.0);
        let field = differentiate(&d, axis).unwrap();
        let raw = c2pd_core::pcgd::forward_difference(&d, axis);
        prop_assert_eq!(field.combined(), raw);
        prop_assert!(field.positive.values().iter().all(|&v| v >= 0.0));
        prop_assert!(field.negative.values().iter().all(|&v| v <= 0.0));
        let back = integrate(&field).unwrap();
        prop_assert!(back.max_abs_diff(&d).unwrap() <= 1e-12);
    }

    #[test]
    fn pcgd_locality_along_rows(seed: u64, p in 5usize..14) {
        let mut r = rng(seed);
        let d = random_grid(&mut r, 6, 14, 20.0, 200.0);
        let g = random_grid(&mut r, 6, 14, 0.0, 1.0);
        let params = random_params(&mut r, 4);
        let spec = WindowSpec::new(WindowShape::Row4, Padding::Replicate);
        let y = seed as usize % 6;
        let a = pcgd_apply(&d, &g, &params, spec, spec.transposed()).unwrap();
        let b = pcgd_apply(&d.with_value(y, p, d.get(y, p) + 9.0).unwrap(), &g, &params, spec, spec.transposed()).unwrap();
        for yy in 0..6 {
            for x in 0..p - 4 {
                prop_assert_eq!(a.get(yy, x).to_bits(), b.get(yy, x).to_bits());
            }
        }
        // Symmetric statement for columns.
        let at = pcgd_apply(&d.transpose(), &g.transpose(), &params, spec, spec.transposed()).unwrap();
        let bt = pcgd_apply(
            &d.transpose().with_value(p, y, d.get(y, p) + 9.0).unwrap(),
            &g.transpose(),
            &params,
            spec,
            spec.transposed(),
        )
        .unwrap();
        for row in 0..p - 4 {
            prop_assert_eq!(at.row(row), bt.row(row));
        }
    }

    #[test]
    fn guidance_is_finite_and_bounded(seed: u64, h in 1usize..10, w in 2usize..10) {
        let mut r = rng(seed);
        let gt = random_grid(&mut r, h, w, 20.0, 200.0);
        let g = guidance_from_gt(&gt).unwrap();
        prop_assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let grad = guidance_gradient(&g, Axis::Horizontal).unwrap();
        prop_assert!(grad.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn luminance_is_pointwise(seed: u64, n in 2usize..20) {
        let mut r = rng(seed);
        let px: Vec<[f64; 3]> = (0..n).map(|_| {
            let c = random_grid(&mut r, 1, 3, 0.0, 1.0);
            [c.get(0, 0), c.get(0, 1), c.get(0, 2)]
        }).collect();
        let lum = guidance_from_rgb(&RgbImage::new(1, n, px.clone()).unwrap()).unwrap();
        let mut rev = px;
        rev.reverse();
        let lum_rev = guidance_from_rgb(&RgbImage::new(1, n, rev).unwrap()).unwrap();
        let mut expected = lum.values().to_vec();
        expected.reverse();
        prop_assert_eq!(lum_rev.values(), expected.as_slice());
    }

    #[test]
    fn l1_is_non_negative_and_zero_at_equality(seed: u64, h in 1usize..8, w in 1usize..8) {
        let mut r = rng(seed);
        let a = random_grid(&mut r, h, w, 0.0, 100.0);
        let b = random_grid(&mut r, h, w, 0.0, 100.0);
        prop_assert!(l1_loss(&a, &b).unwrap().0 >= 0.0);
        let (same, grad) = l1_loss(&a, &a).unwrap();
        prop_assert_eq!(same, 0.0);
        prop_assert!(grad.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn kernel_partition_of_unity(phase in 0.0f64..1.0) {
        let sum: f64 = BicubicKernel::default().weights(phase).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    /// Cubic convolution reproduces quadratics, so on a smooth grid
    /// up-then-down returns the source away from the replicated borders.
    #[test]
    fn down_of_up_on_smooth_interiors(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -0.05f64..0.05, k in 1u32..4) {
        let f = 1usize << k;
        let (h, w) = (12, 14);
        let lr = Grid::from_fn(h, w, |y, x| {
            let (y, x) = (y as f64, x as f64);
            50.0 + a * x + b * y + c * (x * x + x * y)
        }).unwrap();
        let back = bicubic_down(&bicubic_up(&lr, f).unwrap(), f).unwrap();
        for y in 3..h - 3 {
            for x in 3..w - 3 {
                prop_assert!((back.get(y, x) - lr.get(y, x)).abs() <= 1e-6);
            }
        }
    }
}
