use num_complex::Complex64;
use proptest::prelude::*;

use snls::besov::{build_partition, lp_block, NormRequest};
use snls::io::{read_complex, read_real, write_complex, write_real};
use snls::noise::exp_y;
use snls::solver::{transform_to_u, transform_to_v};
use snls::*;

fn grid() -> Grid2D {
    Grid2D::new(8.0, 64).unwrap()
}

fn real_field(g: &Grid2D) -> impl Strategy<Value = RealField> {
    let g = g.clone();
    prop::collection::vec(-3.0f64..3.0, g.len()).prop_map(move |v| RealField::new(&g, v).unwrap())
}

fn complex_field(g: &Grid2D) -> impl Strategy<Value = ComplexField> {
    let g = g.clone();
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), g.len())
        .prop_map(move |v| ComplexField::new(&g, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_profiles_sum_to_one(k in 0.0f64..2000.0, half_width in 2.0f64..32.0, log_n in 6u32..10) {
        let g = Grid2D::new(half_width, 1 << log_n).unwrap();
        let part = build_partition(&g).unwrap();
        let s: f64 = part.indices().map(|j| part.profile(j, k)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12, "sum {s} at |k| = {k}");
        prop_assert!(part.indices().all(|j| (0.0..=1.0 + 1e-15).contains(&part.profile(j, k))));
    }

    #[test]
    fn fft_round_trip(f in complex_field(&grid())) {
        let g = f.grid().clone();
        let mut data = f.values().to_vec();
        g.fft_forward(&mut data);
        g.fft_inverse(&mut data);
        for (a, b) in data.iter().zip(f.values()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn blocks_reassemble_the_field(f in real_field(&grid())) {
        let part = build_partition(f.grid()).unwrap();
        let mut acc = vec![Complex64::new(0.0, 0.0); f.grid().len()];
        for j in part.indices() {
            for (a, b) in acc.iter_mut().zip(lp_block(&f, j, &part).unwrap()) {
                *a += b;
            }
        }
        for (a, b) in acc.iter().zip(f.values()) {
            prop_assert!((a.re - b).abs() < 1e-11 && a.im.abs() < 1e-11);
        }
    }

    #[test]
    fn exp_y_inverts_under_negated_exponent(y in real_field(&grid()), a in -2.0f64..2.0) {
        let p = exp_y(&y, a).unwrap();
        let m = exp_y(&y, -a).unwrap();
        for (x, z) in p.values().iter().zip(m.values()) {
            prop_assert!((x * z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn u_v_transform_round_trip(u in complex_field(&grid()), seed in 0u64..1000) {
        let g = u.grid().clone();
        let b = build_bundle(&sample_white_noise(&g, seed), &build_greens_kernel(&g).unwrap(), 0.5).unwrap();
        let back = transform_to_u(&transform_to_v(&u, &b).unwrap(), &b).unwrap();
        for (x, z) in back.values().iter().zip(u.values()) {
            prop_assert!((x - z).norm() < 1e-12 * (1.0 + z.norm()));
        }
    }

    #[test]
    fn field_files_round_trip_bit_exactly(f in real_field(&grid()), c in complex_field(&grid())) {
        let dir = tempfile::tempdir().unwrap();
        write_real(&dir.path().join("r"), &f, "r").unwrap();
        write_complex(&dir.path().join("c"), &c, "c").unwrap();
        let (r, _) = read_real(&dir.path().join("r")).unwrap();
        let (z, _) = read_complex(&dir.path().join("c")).unwrap();
        prop_assert_eq!(r.values(), f.values());
        prop_assert_eq!(z.values(), c.values());
    }

    #[test]
    fn norm_requests_round_trip_through_json(alpha in -2.0f64..2.0, mu in -2.0f64..2.0, p in prop::sample::select(vec![1.0, 2.0, 4.0, f64::INFINITY]), q in prop::sample::select(vec![1.0, 2.0, f64::INFINITY])) {
        let req = NormRequest::besov(alpha, p, q, mu);
        let back: NormRequest = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
        prop_assert_eq!(back, req);
    }

    #[test]
    fn white_noise_is_reproducible(seed in any::<u64>()) {
        let g = Grid2D::new(2.0, 16).unwrap();
        let (a, b) = (sample_white_noise(&g, seed), sample_white_noise(&g, seed));
        prop_assert_eq!(a.xi().values(), b.xi().values());
    }
}
