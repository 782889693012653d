use proptest::prelude::*;
use rand::Rng;

use regulus_core::conditions::{
    ball_condition_count, ball_condition_count_with, counting_bound, dyadic_radii,
    refined_counting_bound, DEFAULT_CONSTANT,
};
use regulus_core::family::{
    gen_clustered_family, gen_random_family, gen_sl2_example, refine_probability, sample_refine,
    ParamBox, StripFamily, SL2_BOX,
};
use regulus_core::geom::{LLine, Vec4};
use regulus_core::rng::stream_rng;

fn brute_worst_excess(family: &StripFamily, constant: f64, steps: usize) -> f64 {
    // centers on the plane x1 = x4, which carries every dual center
    let pts = family.dual_centers();
    let lo = pts.iter().fold(Vec4::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = pts.iter().fold(Vec4::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    let mut worst = 0.0f64;
    for i in 0..=steps {
        for j in 0..=steps {
            for k in 0..=steps {
                let f = |d: usize, s: usize| lo[d] + (hi[d] - lo[d]) * s as f64 / steps as f64;
                let c = Vec4::new(f(0, i), f(1, j), f(2, k), f(0, i));
                for e in 0..40 {
                    let r = family.delta * 2f64.powf(e as f64 / 5.0);
                    let n = pts.iter().filter(|p| (*p - c).norm() <= r).count() as f64;
                    worst = worst.max(n / (constant * counting_bound(r, family.delta, family.rho)));
                }
            }
        }
    }
    worst
}

#[test]
fn covering_is_sound() {
    let delta = 1.0 / 64.0;
    let mut flagged = 0;
    for seed in 0..6 {
        let family = gen_clustered_family(delta, 0.125, 0.05 * (seed + 1) as f64, 200, seed).unwrap();
        let constant = 1.0;
        let excess = brute_worst_excess(&family, constant, 12);
        let report = ball_condition_count(&family, constant);
        if excess > 4.0 {
            flagged += 1;
            assert!(!report.overall_pass, "seed {seed}: excess {excess} missed");
        }
    }
    assert!(flagged > 0);
}

#[test]
fn cluster_fails_at_designed_radius() {
    let (delta, rho, r) = (1.0 / 64.0, 0.125, 0.125);
    let family = gen_clustered_family(delta, rho, r, 1600, 1).unwrap();
    let report = ball_condition_count(&family, DEFAULT_CONSTANT);
    assert!(!report.overall_pass);
    let worst = report.worst_radius().unwrap();
    assert!(worst <= r && worst >= r / 4.0, "worst radius {worst}");
    assert!(!report.at(r).unwrap().pass);
}

#[test]
fn counting_bound_examples() {
    let (delta, rho) = (1.0 / 64.0, 1.0 / 8.0);
    assert_eq!(counting_bound(delta, delta, rho), 1.0);
    assert_eq!(counting_bound(rho, delta, rho), 8.0);
    assert_eq!(counting_bound(0.5, delta, rho), 128.0);
    assert_eq!(dyadic_radii(delta).len(), 7);
    assert_eq!(refined_counting_bound(0.5, delta, rho, delta / 4.0, rho / 2.0), 128.0);
}

#[test]
fn sl2_centers_lie_on_the_hyperplane() {
    let delta: f64 = 1.0 / 64.0;
    let family = gen_sl2_example(delta, &SL2_BOX, 3).unwrap();
    assert!(family.dual_centers().iter().all(|c| c[0] == c[3]));
    assert!(family.is_separated(0.8 * delta.sqrt()));
    assert!(ball_condition_count(&family, DEFAULT_CONSTANT).overall_pass);
}

#[test]
fn generation_is_byte_deterministic() {
    let a = gen_random_family(1.0 / 64.0, 0.125, 300, 9, 1000).unwrap().to_json().unwrap();
    let b = gen_random_family(1.0 / 64.0, 0.125, 300, 9, 1000).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let bx = ParamBox::new([1.0, 2.0], [-1.0, 0.0], [-1.0, 0.0]);
    let a = gen_sl2_example(1.0 / 64.0, &bx, 2).unwrap().to_json().unwrap();
    let b = gen_sl2_example(1.0 / 64.0, &bx, 2).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn refinement_keeps_scaled_bounds() {
    let (delta, rho) = (1.0 / 64.0, 1.0 / 16.0);
    let family = gen_random_family(delta, rho, 2000, 4, 1000).unwrap();
    let (dn, rn) = (2.0 * delta, 2.0 * rho);
    let expected = family.len() as f64 * refine_probability(delta, rho, dn, rn);
    let mut good = 0;
    for seed in 0..20 {
        let s = sample_refine(&family, dn, rn, seed).unwrap();
        let ratio = s.len() as f64 / expected;
        let report = ball_condition_count_with(
            &s,
            &dyadic_radii(delta),
            |r| refined_counting_bound(r, delta, rho, dn, rn),
            DEFAULT_CONSTANT,
        );
        if (0.5..=2.0).contains(&ratio) && report.overall_pass {
            good += 1;
        }
    }
    assert!(good >= 18, "{good} of 20");
}

fn small_family(seed: u64, n: usize) -> StripFamily {
    let mut rng = stream_rng(seed, 0);
    let cores: Vec<LLine> = (0..n)
        .map(|_| LLine::new(rng.gen_range(0.4..0.6), rng.gen_range(0.2..0.3), rng.gen_range(-0.1..0.0)))
        .collect();
    StripFamily::new(1.0 / 64.0, 0.125, cores).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn subfamilies_keep_a_pass(seed in 0u64..1000, n in 20usize..200, mask in any::<u64>(), constant in 0.5f64..20.0) {
        let family = small_family(seed, n);
        let keep: Vec<usize> = (0..n).filter(|i| mask >> (i % 64) & 1 == 1).collect();
        let full = ball_condition_count(&family, constant);
        let sub = ball_condition_count(&family.subfamily(&keep), constant);
        for (a, b) in full.radii.iter().zip(&sub.radii) {
            prop_assert!(b.observed <= a.observed);
        }
        if full.overall_pass {
            prop_assert!(sub.overall_pass);
        }
    }
}
