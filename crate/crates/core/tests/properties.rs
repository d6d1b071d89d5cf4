use pamkit_core::asymptotics::{g_beta, g_beta_inverse, lambda_bounds, lyapunov_upper, phi_beta};
use pamkit_core::covariance::SpectralFamily;
use pamkit_core::exec::{shard_range, Moments};
use pamkit_core::functional::time_weight_matrix;
use pamkit_core::paths::{bridge_cov, density_reweight, sample_bm, sample_bridge, SeedSpec, TimeGrid};
use pamkit_core::variational::{energy, ProfileGrid};
use proptest::prelude::*;

fn weight_total(t: f64, alpha0: f64) -> f64 {
    2.0 * t.powf(2.0 - alpha0) / ((1.0 - alpha0) * (2.0 - alpha0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_mass_is_exact(t in 0.1f64..5.0, alpha0 in 0.0f64..0.95, m in 1usize..64) {
        let w = time_weight_matrix(&TimeGrid::new(t, m).unwrap(), alpha0).unwrap();
        let exact = weight_total(t, alpha0);
        prop_assert!((w.total() / exact - 1.0).abs() < 1e-10);
        for i in 0..m {
            for j in 0..m {
                prop_assert_eq!(w.get(i, j), w.get(j, i));
                prop_assert!(w.get(i, j) > 0.0);
            }
        }
    }

    #[test]
    fn bridge_cov_is_symmetric_and_pinned(t in 0.1f64..10.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let (s, r) = (u * t, v * t);
        let c = bridge_cov(s, r, t).unwrap();
        prop_assert!((c - bridge_cov(r, s, t).unwrap()).abs() < 1e-12 * t);
        prop_assert!(c >= -1e-12 && c <= s.min(r) + 1e-12);
        prop_assert!(bridge_cov(0.0, r, t).unwrap().abs() < 1e-12);
        prop_assert!(bridge_cov(t, r, t).unwrap().abs() < 1e-12 * t);
    }

    #[test]
    fn paths_are_reproducible_and_bridges_pinned(seed in any::<u64>(), index in 0u64..1000, m in 1usize..40, ell in 1usize..4) {
        let grid = TimeGrid::new(1.5, m).unwrap();
        let spec = SeedSpec::for_sample(seed, 1, index);
        let a = sample_bridge(&grid, ell, spec);
        prop_assert_eq!(&a, &sample_bridge(&grid, ell, spec));
        prop_assert!(a.point(0).iter().all(|v| *v == 0.0));
        prop_assert!(a.endpoint().iter().all(|v| v.abs() < 1e-12));
        let b = sample_bm(&grid, ell, spec);
        prop_assert!(b.point(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reweight_is_positive(lambda in 0.01f64..0.99, y in -3.0f64..3.0, seed in any::<u64>()) {
        let seg = sample_bm(&TimeGrid::new(lambda, 8).unwrap(), 1, SeedSpec::new(seed, 0));
        let w = density_reweight(lambda, 1.0, &[0.0], &[y], &seg).unwrap();
        prop_assert!(w > 0.0 && w.is_finite());
    }

    #[test]
    fn merged_moments_match_a_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200), shards in 1usize..9) {
        let mut whole = Moments::default();
        xs.iter().for_each(|x| whole.push(*x));
        let parts: Vec<Moments> = (0..shards)
            .map(|s| {
                let (lo, hi) = shard_range(xs.len() as u64, shards, s);
                let mut m = Moments::default();
                xs[lo as usize..hi as usize].iter().for_each(|x| m.push(*x));
                m
            })
            .collect();
        let merged = Moments::merge_all(&parts);
        prop_assert_eq!(merged.count, whole.count);
        prop_assert!((merged.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert!((merged.variance() - whole.variance()).abs() <= 1e-9 * (1.0 + whole.variance()));
    }

    #[test]
    fn phi_solves_its_relation_and_increases(x in 1e-3f64..1e3, beta in 0.1f64..100.0, b in 1.05f64..1.95) {
        let p = phi_beta(x, beta, b).unwrap();
        prop_assert!(p > 0.0 && p < x);
        prop_assert!((beta * b * p.powf(b - 1.0) - (x - p)).abs() < 1e-12 * x);
        prop_assert!(phi_beta(1.1 * x, beta, b).unwrap() > p);
    }

    #[test]
    fn g_inverse_round_trips(lambda in 0.05f64..20.0, beta in 0.2f64..50.0, b in 1.1f64..1.9) {
        let g = g_beta(lambda, beta, b).unwrap();
        prop_assert!(g_beta(1.01 * lambda, beta, b).unwrap() > g);
        let back = g_beta_inverse(g, beta, b).unwrap();
        prop_assert!((back / lambda - 1.0).abs() < 1e-8);
    }

    #[test]
    fn index_ordering(n in 2usize..10, alpha in 0.05f64..1.95, alpha0 in 0.05f64..0.95, e in 0.01f64..50.0, beta in 0.1f64..10.0) {
        let r = lambda_bounds(n, alpha0, alpha, e, Some(beta), Some(true)).unwrap();
        let lower = r.lambda_lower.unwrap();
        prop_assert!(lower <= r.lambda_upper_compact);
        prop_assert!(r.a > 1.0 && r.b > 1.0 && r.b < 2.0);
        let tighter = lambda_bounds(n, alpha0, alpha, e, Some(2.0 * beta), Some(true)).unwrap();
        prop_assert!(tighter.lambda_upper.unwrap() <= r.lambda_upper.unwrap() * (1.0 + 1e-9));
        prop_assert!(r.lambda_upper.unwrap() >= r.lambda_upper_compact * (1.0 - 1e-9));
    }

    #[test]
    fn upper_constant_follows_the_scaling_identity(n in 2usize..8, alpha in 0.05f64..1.95, theta in 0.1f64..10.0, e in 0.1f64..10.0) {
        let scaled = lyapunov_upper(n, 0.5, alpha, theta.powf(2.0 / (2.0 - alpha)) * e).unwrap();
        let base = lyapunov_upper(n, 0.5, alpha, e).unwrap();
        prop_assert!((scaled / (theta.powf(2.0 / (2.0 - alpha)) * base) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_interaction_ignores_the_profile(width in 0.3f64..2.0, shift in -1.0f64..1.0, c in 0.1f64..5.0) {
        let fam = SpectralFamily::constant(1, c).unwrap();
        let mut g = ProfileGrid::from_fn(4, 1, 6.0, 63, |s, x| (-(x[0] - shift * s).powi(2) / (2.0 * width * width)).exp()).unwrap();
        g.normalize().unwrap();
        let e = energy(&g, 0.5, &fam, 0.0).unwrap();
        prop_assert!((e.interaction / (c * weight_total(1.0, 0.5)) - 1.0).abs() < 1e-10);
        prop_assert!(e.kinetic > 0.0);
    }
}
