use kidot_core::diff::LinearMap;
use kidot_core::metrics::{psnr, ssim};
use kidot_core::nets::{
    clip_weights, critic_apply, init_critic, init_regularizer, lipschitz_upper_bound, CriticArch, RegularizerArch,
};
use kidot_core::operators::{adjoint_test, radon_build};
use kidot_core::ot::{assignment_w1, dual_w1_estimate, exact_w1, sliced_w1, straightline_check, w1_1d, PointCloud};
use kidot_core::synth::{
    make_mask, make_phantom, perturb_mask, simulate_measurement, FlipGranularity, NoiseConfig, PhantomKind,
};
use kidot_core::training::{lr_at_epoch, RmsProp, TrainConfig};
use kidot_core::transport::{path_cost, Flow};
use kidot_core::{ForwardModel, Image, Mask, ParamVector};
use proptest::prelude::*;

fn cloud(points: Vec<Vec<f64>>) -> PointCloud {
    PointCloud::new(points).unwrap()
}

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fourier_adjoint_identity(seed in 0u64..10_000, accel in 1.5f64..6.0, n in prop::sample::select(vec![8usize, 16])) {
        let fm = ForwardModel::fourier(make_mask(n, accel, 0.125, seed).unwrap());
        prop_assert!(adjoint_test(&fm, 3, seed).unwrap() < 1e-10);
    }

    #[test]
    fn radon_adjoint_identity(seed in 0u64..10_000, angles in 3usize..12, dets in 8usize..16) {
        let fm = radon_build(8, angles, dets).unwrap();
        prop_assert!(adjoint_test(&fm, 3, seed).unwrap() < 1e-10);
    }

    #[test]
    fn flip_count_is_exact(seed in 0u64..10_000, frac in 0.0f64..0.5) {
        let m = make_mask(32, 4.0, 0.125, seed).unwrap();
        let rows = m.rows().unwrap();
        if let Ok(p) = perturb_mask(&m, frac, FlipGranularity::Rows, seed) {
            let flipped = rows.iter().zip(p.rows().unwrap()).filter(|(a, b)| *a != b).count();
            prop_assert_eq!(flipped, (frac * 32.0).round() as usize);
        }
    }

    #[test]
    fn endpoint_is_last_state(seed in 0u64..1_000, steps in 1usize..6) {
        let arch = RegularizerArch::default();
        let fm = ForwardModel::fourier(make_mask(16, 4.0, 0.125, seed).unwrap());
        let mut phi = init_regularizer(&arch, seed).unwrap();
        let vals: Vec<f64> = phi.values().iter().enumerate().map(|(i, v)| v + 1e-3 * ((i % 7) as f64 - 3.0)).collect();
        phi = phi.with_values(vals).unwrap();
        let x = make_phantom(PhantomKind::Ellipses, 16, seed).unwrap();
        let y = simulate_measurement(&x, &fm, &NoiseConfig::gaussian(0.01), seed).unwrap();
        let flow = Flow::new(&fm, &arch, steps);
        let path = flow.path(&y, &phi).unwrap();
        prop_assert_eq!(path.states.len(), steps + 1);
        prop_assert_eq!(path.step_costs.len(), steps);
        prop_assert_eq!(&flow.reconstruct(&y, &phi).unwrap(), path.endpoint());
        let mean = path.step_costs.iter().sum::<f64>() / steps as f64;
        prop_assert!((path_cost(&path) - mean).abs() <= 1e-12 * mean.max(1.0));
    }

    #[test]
    fn data_fidelity_flow_contracts(seed in 0u64..1_000, steps in 1usize..16) {
        let arch = RegularizerArch::default();
        let phi = init_regularizer(&arch, seed).unwrap();
        let fm = ForwardModel::fourier(make_mask(16, 4.0, 0.125, seed).unwrap());
        let x = make_phantom(PhantomKind::Ellipses, 16, seed).unwrap();
        let y = simulate_measurement(&x, &fm, &NoiseConfig::gaussian(0.02), seed).unwrap();
        let path = Flow::new(&fm, &arch, steps).path(&y, &phi).unwrap();
        let residual = |s: &Image| {
            let r = fm.apply(s).unwrap();
            r.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        for w in path.states.windows(2) {
            prop_assert!(residual(&w[1]) <= residual(&w[0]) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn clipping_bounds_every_weight(seed in 0u64..10_000, c in 1e-3f64..1.0) {
        let arch = CriticArch::default();
        let mut theta = init_critic(&arch, seed).unwrap();
        let scaled: Vec<f64> = theta.values().iter().map(|v| 50.0 * v).collect();
        theta = theta.with_values(scaled).unwrap();
        let clipped = clip_weights(&theta, c).unwrap();
        prop_assert!(clipped.values().iter().all(|v| v.abs() <= c));
        prop_assert_eq!(clip_weights(&clipped, c).unwrap(), clipped);
    }

    #[test]
    fn one_dimensional_formula_matches_assignment(a in points(9, 1), b in points(9, 1)) {
        let (a, b) = (cloud(a), cloud(b));
        prop_assert!((w1_1d(&a, &b).unwrap() - assignment_w1(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn w1_is_a_metric(a in points(6, 3), b in points(6, 3), c in points(6, 3)) {
        let (a, b, c) = (cloud(a), cloud(b), cloud(c));
        let ab = exact_w1(&a, &b).unwrap();
        prop_assert!(exact_w1(&a, &a).unwrap().abs() < 1e-12);
        prop_assert!((ab - exact_w1(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= exact_w1(&a, &c).unwrap() + exact_w1(&c, &b).unwrap() + 1e-9);
    }

    #[test]
    fn sliced_never_exceeds_exact(a in points(8, 4), b in points(8, 4), seed in 0u64..100) {
        let (a, b) = (cloud(a), cloud(b));
        prop_assert!(sliced_w1(&a, &b, 50, seed).unwrap() <= exact_w1(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn translation_shifts_w1_by_its_length(a in points(7, 2), dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let shifted: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + dx, p[1] + dy]).collect();
        let w = exact_w1(&cloud(a), &cloud(shifted)).unwrap();
        prop_assert!((w - (dx * dx + dy * dy).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn certified_dual_bound(seed in 0u64..1_000) {
        let arch = CriticArch::default();
        let theta = init_critic(&arch, seed).unwrap();
        let img = |i: u64| make_phantom(PhantomKind::Blocks, 8, seed * 31 + i).unwrap();
        let p: Vec<Image> = (0..6).map(img).collect();
        let q: Vec<Image> = (6..12).map(img).collect();
        let (cp, cq) = (PointCloud::from_images(&p).unwrap(), PointCloud::from_images(&q).unwrap());
        let dual = dual_w1_estimate(&arch, &theta, &cp, &cq).unwrap();
        let l = lipschitz_upper_bound(&arch, &theta, 8).unwrap();
        prop_assert!(dual <= l * exact_w1(&cp, &cq).unwrap() + 1e-12);
        let direct = q.iter().map(|x| critic_apply(&arch, &theta, x).unwrap()).sum::<f64>() / 6.0
            - p.iter().map(|x| critic_apply(&arch, &theta, x).unwrap()).sum::<f64>() / 6.0;
        prop_assert!((dual - direct).abs() < 1e-12);
    }

    #[test]
    fn straight_segment_is_optimal(seed in 0u64..1_000, d in 1usize..6, slack in 1.0f64..3.0) {
        let y: Vec<f64> = (0..d).map(|i| ((seed + i as u64) % 5) as f64 * 0.3).collect();
        let x: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + if i == 0 { 1.0 } else { 0.2 }).collect();
        let gap = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let sol = straightline_check(&y, &x, slack * gap, 16, 100, seed).unwrap();
        prop_assert!(sol.deviation < 1e-3);
        prop_assert!(sol.max_violation <= 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_params(seed in 0u64..1_000, lr in 1e-6f64..1.0) {
        let arch = RegularizerArch::default();
        let phi = init_regularizer(&arch, seed).unwrap();
        let mut values = phi.values().to_vec();
        let mut opt = RmsProp::new(values.len(), 0.9, 1e-8);
        opt.step(&mut values, &vec![0.0; phi.len()], lr).unwrap();
        prop_assert_eq!(values.as_slice(), phi.values());
    }

    #[test]
    fn learning_rate_schedule(epoch in 0usize..200, every in 1usize..50) {
        let cfg = TrainConfig { lr_decay_every: every, ..TrainConfig::default() };
        let (t, c) = lr_at_epoch(&cfg, epoch);
        let k = (epoch / every) as i32;
        prop_assert!((t - 1e-4 / 10f64.powi(k)).abs() <= 1e-18 + 1e-12 * t);
        prop_assert!((c - 2e-4 / 10f64.powi(k)).abs() <= 1e-18 + 1e-12 * c);
    }

    #[test]
    fn image_metrics_are_symmetric(s1 in 0u64..1_000, s2 in 0u64..1_000) {
        let a = make_phantom(PhantomKind::Ellipses, 16, s1).unwrap();
        let b = make_phantom(PhantomKind::Ellipses, 16, s2).unwrap();
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
        prop_assert!(ssim(&a, &b, 1.0).unwrap() <= 1.0 + 1e-12);
    }
}

#[test]
fn psnr_falls_as_noise_grows() {
    let fm = ForwardModel::identity(16);
    let sigmas = [0.01, 0.02, 0.05, 0.1, 0.2];
    let means: Vec<f64> = sigmas
        .iter()
        .map(|&s| {
            (0..20u64)
                .map(|seed| {
                    let x = make_phantom(PhantomKind::Ellipses, 16, seed).unwrap();
                    let y = simulate_measurement(&x, &fm, &NoiseConfig::gaussian(s), 100 + seed).unwrap();
                    psnr(&fm.adjoint(&y).unwrap(), &x, 1.0).unwrap()
                })
                .sum::<f64>()
                / 20.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn full_mask_model_is_unitary() {
    let fm = ForwardModel::fourier(Mask::full(16));
    let x = make_phantom(PhantomKind::Ellipses, 16, 9).unwrap();
    let y = fm.apply(&x).unwrap();
    assert!((dot(y.data(), y.data()).sqrt() - x.norm()).abs() < 1e-12);
    let back = fm.adjoint(&y).unwrap();
    assert!(back.distance(&x).unwrap() < 1e-12);
    assert_eq!(fm.input_len(), 256);
}

#[test]
fn params_reject_wrong_length() {
    let layout = RegularizerArch::default().layout().unwrap();
    assert!(ParamVector::from_values(layout, vec![0.0; 3]).is_err());
}
