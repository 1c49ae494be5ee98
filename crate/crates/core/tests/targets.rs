use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rdmc::targets::{
    circle_layout, make_cauchy, make_circle_gmm, make_gmm, make_ill_conditioned_gaussian,
    make_neals_funnel, make_sublinear_tail, GaussianMixtureSpec, ReferenceSampler, Target,
};

fn fd_check(target: &dyn Target, x: &[f64]) -> std::result::Result<(), String> {
    let mut grad = vec![0.0; x.len()];
    target.grad_neg_log_density(x, &mut grad);
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = target.neg_log_density(&probe);
        probe[i] = x[i] - h;
        let down = target.neg_log_density(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let scale = grad[i].abs().max(fd.abs()).max(1.0);
        if (fd - grad[i]).abs() > 1e-5 * scale {
            return Err(format!("coordinate {i} at {x:?}: analytic {} vs fd {fd}", grad[i]));
        }
    }
    Ok(())
}

fn all_targets() -> Vec<(&'static str, Box<dyn Target>)> {
    vec![
        (
            "gmm",
            Box::new(
                make_gmm(GaussianMixtureSpec {
                    means: vec![vec![0.0, 0.0, 0.0], vec![3.0, -1.0, 2.0]],
                    log_weights: vec![0.0, -0.7],
                })
                .unwrap(),
            ),
        ),
        ("circle", Box::new(make_circle_gmm(6, 1.5, 3).unwrap())),
        (
            "ill_gaussian",
            Box::new(make_ill_conditioned_gaussian(vec![20.0, 20.0], vec![400.0, 1.0]).unwrap()),
        ),
        ("sublinear", Box::new(make_sublinear_tail(0.25, 3).unwrap())),
        ("cauchy", Box::new(make_cauchy(3).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_match_finite_differences(x in prop::collection::vec(-5.0f64..5.0, 3)) {
        for (name, t) in all_targets() {
            let point = &x[..t.dim()];
            prop_assert!(t.neg_log_density(point).is_finite(), "{name}");
            fd_check(t.as_ref(), point).map_err(|e| TestCaseError::fail(format!("{name}: {e}")))?;
        }
    }

    #[test]
    fn funnel_gradient_matches_finite_differences(
        x1 in -4.0f64..4.0,
        rest in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let t = make_neals_funnel(3).unwrap();
        let x = [x1, rest[0], rest[1]];
        fd_check(&t, &x).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn gmm_is_translation_equivariant(
        shift in prop::collection::vec(-10.0f64..10.0, 2),
        x in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let means = vec![vec![0.0, 0.0], vec![4.0, 1.0], vec![-2.0, 3.0]];
        let log_weights = vec![0.0, 0.5, -1.0];
        let base = make_gmm(GaussianMixtureSpec { means: means.clone(), log_weights: log_weights.clone() }).unwrap();
        let moved = make_gmm(GaussianMixtureSpec {
            means: means.iter().map(|m| vec![m[0] + shift[0], m[1] + shift[1]]).collect(),
            log_weights,
        })
        .unwrap();
        let a = base.neg_log_density(&x);
        let b = moved.neg_log_density(&[x[0] + shift[0], x[1] + shift[1]]);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn targets_are_finite_far_out(x in prop::collection::vec(-1e6f64..1e6, 3)) {
        for (name, t) in all_targets() {
            let point = &x[..t.dim()];
            prop_assert!(t.neg_log_density(point).is_finite(), "{name} at {point:?}");
        }
    }
}

fn moments(sampler: &dyn ReferenceSampler, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = sampler.draw(n, &mut rng);
    let d = sample.dim();
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for p in sample.points() {
        for i in 0..d {
            mean[i] += p[i];
            second[i] += p[i] * p[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    second.iter_mut().for_each(|m| *m /= n as f64);
    (mean, second)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn gaussian_reference_moments() {
    let t = make_ill_conditioned_gaussian(vec![20.0, 20.0], vec![400.0, 1.0]).unwrap();
    let (mean, second) = moments(&t, 100_000, 1);
    assert!(rel(mean[0], 20.0) < 0.02 && rel(mean[1], 20.0) < 0.02, "{mean:?}");
    assert!(rel(second[0], 800.0) < 0.02 && rel(second[1], 401.0) < 0.02, "{second:?}");
}

#[test]
fn gmm_reference_moments() {
    let t = make_gmm(GaussianMixtureSpec {
        means: vec![vec![0.0, 0.0], vec![4.0, 2.0]],
        log_weights: vec![0.0, (3.0f64).ln()],
    })
    .unwrap();
    // weights 1/4, 3/4
    let (mean, second) = moments(&t, 100_000, 2);
    assert!(rel(mean[0], 3.0) < 0.02 && rel(mean[1], 1.5) < 0.02, "{mean:?}");
    assert!(rel(second[0], 13.0) < 0.02 && rel(second[1], 4.0) < 0.02, "{second:?}");
}

#[test]
fn funnel_reference_x1_std() {
    let t = make_neals_funnel(4).unwrap();
    let (mean, second) = moments(&t, 100_000, 3);
    let std = (second[0] - mean[0] * mean[0]).sqrt();
    assert!(rel(std, 3.0) < 0.02, "std {std}");
}

#[test]
fn cauchy_reference_median() {
    let t = make_cauchy(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sample = t.draw(100_000, &mut rng);
    for i in 0..2 {
        let mut col: Vec<f64> = sample.points().map(|p| p[i]).collect();
        col.sort_by(f64::total_cmp);
        let median = col[col.len() / 2];
        assert!(median.abs() < 0.05, "median {median}");
        // quartiles of the standard Cauchy are ±1
        assert!((col[col.len() / 4] + 1.0).abs() < 0.05);
        assert!((col[3 * col.len() / 4] - 1.0).abs() < 0.05);
    }
}

#[test]
fn circle_reference_is_centered() {
    for (k, r) in [(2, 1.0), (6, 1.0), (5, 2.5)] {
        let t = make_circle_gmm(k, r, 2).unwrap();
        let (mean, _) = moments(&t, 100_000, 5);
        let c = 2.0;
        assert!(mean.iter().all(|m| m.abs() < 0.05 * c * r), "{k} modes: {mean:?}");
    }
}

#[test]
fn circle_layout_geometry() {
    let two = circle_layout(2, 1.5, 2).unwrap();
    assert!((two[0][0] - 3.0).abs() < 1e-12 && two[0][1].abs() < 1e-12);
    assert!((two[1][0] + 3.0).abs() < 1e-12 && two[1][1].abs() < 1e-12);

    let six = circle_layout(6, 1.0, 4).unwrap();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let first = dist(&six[0], &six[1]);
    for j in 0..6 {
        let d = dist(&six[j], &six[(j + 1) % 6]);
        assert!((d - first).abs() <= 1e-12 * first);
        assert_eq!(&six[j][2..], &[0.0, 0.0]);
    }
    assert!(circle_layout(1, 1.0, 2).is_err());
    assert!(circle_layout(3, 0.0, 2).is_err());
}

#[test]
fn worked_values() {
    let gmm = make_gmm(GaussianMixtureSpec {
        means: vec![vec![0.0, 0.0], vec![4.0, 0.0]],
        log_weights: vec![],
    })
    .unwrap();
    let diff = gmm.neg_log_density(&[2.0, 0.0]) - gmm.neg_log_density(&[0.0, 0.0]);
    let expected = 2.0 - 2f64.ln() + (1.0 + (-8.0f64).exp()).ln();
    assert!((diff - expected).abs() < 1e-12, "{diff} vs {expected}");

    let sym = make_gmm(GaussianMixtureSpec {
        means: vec![vec![-2.0, 1.0], vec![2.0, -1.0]],
        log_weights: vec![],
    })
    .unwrap();
    let mut g = [1.0; 2];
    sym.grad_neg_log_density(&[0.0, 0.0], &mut g);
    assert!(g.iter().all(|v| v.abs() < 1e-15));

    let ill = make_ill_conditioned_gaussian(vec![20.0, 20.0], vec![400.0, 1.0]).unwrap();
    ill.grad_neg_log_density(&[40.0, 21.0], &mut g);
    assert!((g[0] - 0.05).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);

    let sub = make_sublinear_tail(0.25, 2).unwrap();
    assert!((sub.neg_log_density(&[1.0, 0.0]) - 2f64.powf(0.25)).abs() < 1e-12);
    sub.grad_neg_log_density(&[1.0, 0.0], &mut g);
    assert!((g[0] - 0.5 * 2f64.powf(-0.75)).abs() < 1e-12 && g[1] == 0.0);

    let cauchy = make_cauchy(1).unwrap();
    let mut g1 = [0.0];
    assert!((cauchy.neg_log_density(&[1.0]) - 2f64.ln()).abs() < 1e-12);
    cauchy.grad_neg_log_density(&[1.0], &mut g1);
    assert!((g1[0] - 1.0).abs() < 1e-15);

    let funnel = make_neals_funnel(2).unwrap();
    let diff = funnel.neg_log_density(&[0.0, 1.0]) - funnel.neg_log_density(&[0.0, 0.0]);
    assert!((diff - 0.5).abs() < 1e-12);
}

#[test]
fn sublinear_hessian_is_bounded() {
    // d = 1: f'' = 2a (1+x²)^{a-2} (1 + (2a-1) x²)
    let t = make_sublinear_tail(0.25, 1).unwrap();
    let mut g = [0.0];
    for i in 0..=20_000 {
        let x = -100.0 + i as f64 * 0.01;
        let h = 1e-4;
        t.grad_neg_log_density(&[x + h], &mut g);
        let up = g[0];
        t.grad_neg_log_density(&[x - h], &mut g);
        let hess = (up - g[0]) / (2.0 * h);
        assert!(hess.abs() <= 0.5 + 1e-6, "x = {x}: {hess}");
    }
}

#[test]
fn constructors_reject_bad_input() {
    assert!(make_gmm(GaussianMixtureSpec { means: vec![], log_weights: vec![] }).is_err());
    assert!(make_gmm(GaussianMixtureSpec {
        means: vec![vec![0.0], vec![0.0, 1.0]],
        log_weights: vec![],
    })
    .is_err());
    assert!(make_ill_conditioned_gaussian(vec![0.0], vec![0.0]).is_err());
    assert!(make_sublinear_tail(0.5, 1).is_err());
    assert!(make_sublinear_tail(0.0, 1).is_err());
    assert!(make_neals_funnel(1).is_err());
    assert!(make_circle_gmm(1, 1.0, 2).is_err());
}
