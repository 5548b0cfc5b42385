use afunet_core::data::{read_hdr, translate, write_hdr, Dihedral};
use afunet_core::metrics::{psnr, ssim, Domain, TonemapParams};
use afunet_core::oracle::{
    data_consistency, energy, prox_update_u, prox_update_v, DegradationOp, OracleProblem,
    SolverState,
};
use afunet_core::train::CosineSchedule;
use afunet_core::Image;
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = Image> {
    prop::collection::vec(lo..hi, c * h * w)
        .prop_map(move |v| Image::from_shape_vec((c, h, w), v).unwrap())
}

fn sized_image(lo: f64, hi: f64) -> impl Strategy<Value = Image> {
    (1usize..4, 1usize..7, 1usize..7).prop_flat_map(move |(c, h, w)| image(c, h, w, lo, hi))
}

fn problem_and_state() -> impl Strategy<Value = (OracleProblem, SolverState)> {
    (1usize..3, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
        (
            prop::array::uniform3(image(c, h, w, 0.0, 1.0)),
            prop::array::uniform3(image(c, h, w, 0.1, 3.0)),
            prop::array::uniform5(image(c, h, w, 0.0, 1.0)),
            0.0f64..2.0,
            0.0f64..2.0,
            0.05f64..2.0,
            0.05f64..2.0,
        )
            .prop_map(|(ys, gains, s, l1, l3, b1, b3)| {
                let ops = gains.map(|g| DegradationOp::diagonal(g).unwrap());
                let problem = OracleProblem::new(ys, ops).unwrap().with_weights(l1, l3).unwrap();
                let [x, alpha1, alpha3, u, v] = s;
                let state = SolverState {
                    x,
                    alpha1,
                    alpha3,
                    u,
                    v,
                    beta1: b1,
                    beta3: b3,
                    energy_trace: Vec::new(),
                };
                (problem, state)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tonemap_monotone_and_bounded(mu in 1e-3f64..1e5, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let t = TonemapParams::new(mu).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        prop_assert!(t.curve(lo) < t.curve(hi));
        prop_assert!((0.0..=1.0).contains(&t.curve(lo)) && (0.0..=1.0).contains(&t.curve(hi)));
    }

    #[test]
    fn block_updates_never_raise_energy((problem, state) in problem_and_state()) {
        let e0 = energy(&problem, &state).unwrap();
        let s1 = prox_update_u(&problem, &state).unwrap();
        let e1 = energy(&problem, &s1).unwrap();
        let s2 = prox_update_v(&problem, &s1).unwrap();
        let e2 = energy(&problem, &s2).unwrap();
        let s3 = data_consistency(&problem, &s2).unwrap();
        let e3 = energy(&problem, &s3).unwrap();
        let slack = 1e-12 * e0.abs().max(1.0);
        prop_assert!(e1 <= e0 + slack, "{e0} -> {e1}");
        prop_assert!(e2 <= e1 + slack, "{e1} -> {e2}");
        prop_assert!(e3 <= e2 + slack, "{e2} -> {e3}");
    }

    #[test]
    fn translate_inverts(img in sized_image(0.0, 1.0), dy in -9isize..9, dx in -9isize..9) {
        prop_assert_eq!(translate(&translate(&img, (dy, dx)), (-dy, -dx)), img);
    }

    #[test]
    fn dihedral_permutes_pixels(img in (1usize..4, 1usize..6).prop_flat_map(|(c, n)| image(c, n, n, 0.0, 1.0))) {
        let mut sorted: Vec<f64> = img.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        for d in Dihedral::all() {
            let out = d.apply(img.view());
            prop_assert_eq!(out.dim(), img.dim());
            let mut got: Vec<f64> = out.iter().copied().collect();
            got.sort_by(f64::total_cmp);
            prop_assert_eq!(&got, &sorted);
        }
    }

    #[test]
    fn schedule_bounded_and_decreasing(lr_final in 1e-8f64..1e-3, ratio in 1.0f64..1e3, epochs in 1usize..500) {
        let lr_init = lr_final * ratio;
        let s = CosineSchedule::new(lr_init, lr_final, epochs).unwrap();
        let mut prev = f64::INFINITY;
        for e in 0..=epochs {
            let lr = s.lr(e);
            prop_assert!(lr <= lr_init * (1.0 + 1e-12) && lr >= lr_final * (1.0 - 1e-12));
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn metrics_symmetric(
        (a, b) in (1usize..4, 11usize..16, 11usize..16)
            .prop_flat_map(|(c, h, w)| (image(c, h, w, 0.0, 1.0), image(c, h, w, 0.0, 1.0)))
    ) {
        let t = TonemapParams::default();
        for d in [Domain::Linear, Domain::Mu] {
            prop_assert_eq!(psnr(&a, &b, d, &t).unwrap(), psnr(&b, &a, d, &t).unwrap());
            let s = ssim(&a, &b, d, &t).unwrap();
            prop_assert!((s - ssim(&b, &a, d, &t).unwrap()).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rgbe_round_trip_within_bound(
        img in (1usize..5, 1usize..5).prop_flat_map(|(h, w)| image(3, h, w, 0.0, 1.0)),
        log_scale in -6.0f64..6.0,
    ) {
        let img = img.mapv(|v| v * 10f64.powf(log_scale));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.hdr");
        write_hdr(&path, &img).unwrap();
        let back = read_hdr(&path).unwrap();
        prop_assert_eq!(back.dim(), img.dim());
        let (_, h, w) = img.dim();
        for i in 0..h {
            for j in 0..w {
                let m = (0..3).map(|c| img[[c, i, j]]).fold(0.0, f64::max);
                for c in 0..3 {
                    let err = (img[[c, i, j]] - back[[c, i, j]]).abs();
                    prop_assert!(err <= m / 128.0 + 1e-30, "{} vs {}", img[[c, i, j]], back[[c, i, j]]);
                }
            }
        }
    }
}
