mod common;

use perfpred::diagnostics::{estimate_sensitivity, w1_1d, w1_weighted};
use perfpred::dynamics::{rrm, SolverConfig};
use perfpred::risk::sample;
use perfpred::strategic::{
    best_response, run_credit_experiment, synthesize_credit_data, CreditConfig, StrategicDataset,
    StrategicMap,
};
use perfpred::{
    decoupled_risk, performative_risk, vecops, BiasedCoinMap, DistributionMap, LossSpec, McConfig,
    ParameterSpace, PointMassMap,
};
use proptest::prelude::*;

use common::transport_lp;

fn space_strategy() -> impl Strategy<Value = ParameterSpace> {
    prop_oneof![
        (-5.0..0.0f64, 0.1..5.0f64)
            .prop_map(|(lo, w)| ParameterSpace::interval(lo, lo + w).unwrap()),
        prop::collection::vec((-5.0..0.0f64, 0.1..5.0f64), 3).prop_map(|v| {
            ParameterSpace::boxed(
                v.iter().map(|p| p.0).collect(),
                v.iter().map(|p| p.0 + p.1).collect(),
            )
            .unwrap()
        }),
        (prop::collection::vec(-2.0..2.0f64, 3), 0.1..3.0f64)
            .prop_map(|(c, r)| ParameterSpace::ball(c, r).unwrap()),
    ]
}

fn points(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-10.0..10.0f64, d),
        prop::collection::vec(-10.0..10.0f64, d),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        (space, (a, b)) in space_strategy().prop_flat_map(|s| { let d = s.dim(); (Just(s), points(d)) })
    ) {
        let pa = space.project(&a);
        let pb = space.project(&b);
        prop_assert!(space.contains(&pa));
        let again = space.project(&pa);
        prop_assert!(vecops::dist(&again, &pa) <= 1e-12);
        prop_assert!(vecops::dist(&pa, &pb) <= vecops::dist(&a, &b) + 1e-12);
    }

    #[test]
    fn squared_losses_are_smooth_and_strongly_convex(
        x in prop::sample::select(vec![-1.0, 1.0]),
        y in prop::sample::select(vec![0.0, 1.0]),
        t in -3.0..3.0f64,
        u in -3.0..3.0f64,
    ) {
        for loss in [LossSpec::squared_affine(), LossSpec::squared_location()] {
            let (beta, gamma) = (loss.constants.beta.unwrap(), loss.constants.gamma.unwrap());
            let xs: &[f64] = if loss.name() == "squared_affine" { &[x] } else { &[] };
            let gt = loss.grad(xs, y, &[t])[0];
            let gu = loss.grad(xs, y, &[u])[0];
            prop_assert!((gt - gu).abs() <= beta * (t - u).abs() + 1e-12);
            let lhs = loss.value(xs, y, &[u]);
            let rhs = loss.value(xs, y, &[t]) + gt * (u - t) + 0.5 * gamma * (u - t).powi(2);
            prop_assert!(lhs >= rhs - 1e-12);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences(
        x in prop::collection::vec(-3.0..3.0f64, 3),
        y in prop::sample::select(vec![0.0, 1.0]),
        theta in prop::collection::vec(-2.0..2.0f64, 3),
        gamma in 0.0..2.0f64,
    ) {
        let losses = [
            LossSpec::logistic_l2(gamma).unwrap(),
            LossSpec::logistic_l2_intercept(gamma).unwrap(),
        ];
        for loss in &losses {
            let g = loss.grad(&x, y, &theta);
            for k in 0..3 {
                let h = 1e-6;
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[k] += h;
                m[k] -= h;
                let num = (loss.value(&x, y, &p) - loss.value(&x, y, &m)) / (2.0 * h);
                prop_assert!((g[k] - num).abs() <= 1e-6 * (1.0 + g[k].abs()), "{k}: {} vs {num}", g[k]);
            }
        }
    }

    #[test]
    fn w1_is_a_metric_and_matches_lp(
        a in prop::collection::vec(-5.0..5.0f64, 1..7),
        b in prop::collection::vec(-5.0..5.0f64, 1..7),
        c in prop::collection::vec(-5.0..5.0f64, 1..7),
    ) {
        let ab = w1_1d(&a, &b).unwrap();
        let ba = w1_1d(&b, &a).unwrap();
        let ac = w1_1d(&a, &c).unwrap();
        let cb = w1_1d(&c, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(w1_1d(&a, &a).unwrap() <= 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        let ua: Vec<(f64, f64)> = a.iter().map(|&x| (x, 1.0)).collect();
        let ub: Vec<(f64, f64)> = b.iter().map(|&x| (x, 1.0)).collect();
        prop_assert!((ab - transport_lp(&ua, &ub)).abs() <= 1e-10);
        let na: Vec<(f64, f64)> = a.iter().map(|&x| (x, 1.0 / a.len() as f64)).collect();
        let nb: Vec<(f64, f64)> = b.iter().map(|&x| (x, 1.0 / b.len() as f64)).collect();
        prop_assert!((ab - w1_weighted(&na, &nb).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn point_mass_sensitivity_is_exact(eps in 0.01..5.0f64, t in -1.0..1.0f64, u in -1.0..1.0f64) {
        prop_assume!((t - u).abs() > 1e-6);
        for map in [PointMassMap::linear(eps), PointMassMap::affine(eps)] {
            let rep = estimate_sensitivity(&map, &[(vec![t], vec![u])], 0, 0).unwrap();
            prop_assert!((rep.sup_ratio - eps).abs() <= 1e-9);
        }
    }

    #[test]
    fn coin_is_eps_sensitive(
        mu in -0.2..0.2f64,
        eps in 0.0..0.3f64,
        t in 0.0..1.0f64,
        u in 0.0..1.0f64,
    ) {
        prop_assume!((t - u).abs() > 1e-9);
        let map = BiasedCoinMap::new(mu, eps).unwrap();
        let w1 = map.coupling_bound(&[t], &[u]).unwrap();
        prop_assert!(w1 <= eps * (t - u).abs() + 1e-12);
    }

    #[test]
    fn decoupled_risk_is_lipschitz_in_deployment(
        mu in -0.2..0.2f64,
        eps in 0.0..0.3f64,
        t in 0.0..1.0f64,
        u in 0.0..1.0f64,
        phi in 0.0..1.0f64,
    ) {
        // |DPR(θ, φ) − DPR(θ', φ)| ≤ L_z · W1 ≤ L_z ε |θ − θ'| with L_z the
        // z-gradient bound of the squared affine loss on Θ = [0, 1].
        let map = BiasedCoinMap::new(mu, eps).unwrap();
        let loss = LossSpec::squared_affine();
        let mc = McConfig::new(1, 0);
        let a = decoupled_risk(&map, &loss, &[t], &[phi], &mc).unwrap().mean;
        let b = decoupled_risk(&map, &loss, &[u], &[phi], &mc).unwrap().mean;
        let l_z = 3.0 * 2f64.sqrt();
        prop_assert!((a - b).abs() <= l_z * eps * (t - u).abs() + 1e-12);
    }

    #[test]
    fn best_response_matches_numeric_argmax(
        x in prop::collection::vec(-3.0..3.0f64, 4),
        theta in prop::collection::vec(-2.0..2.0f64, 4),
        eps in 0.05..5.0f64,
    ) {
        let strategic = [0usize, 2];
        let br = best_response(&x, &theta, eps, &strategic);
        // The utility −⟨θ, x'⟩ − ‖x' − x‖²/(2ε) separates over coordinates;
        // maximize each strategic one by golden-section search.
        for k in 0..4 {
            if !strategic.contains(&k) {
                prop_assert_eq!(br[k], x[k]);
                continue;
            }
            let f = |v: f64| -theta[k] * v - (v - x[k]).powi(2) / (2.0 * eps);
            let (mut lo, mut hi) = (x[k] - 20.0, x[k] + 20.0);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let m1 = hi - r * (hi - lo);
                let m2 = lo + r * (hi - lo);
                if f(m1) < f(m2) { lo = m1 } else { hi = m2 }
            }
            prop_assert!((br[k] - 0.5 * (lo + hi)).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_point_strategic_w1_equals_coupling(x in -3.0..3.0f64, t in -2.0..2.0f64, u in -2.0..2.0f64, eps in 0.1..3.0f64) {
        prop_assume!((t - u).abs() > 1e-6);
        let data = StrategicDataset {
            features: vec![vec![x]],
            outcomes: vec![1.0],
            strategic: vec![0],
            mean: vec![0.0],
            scale: vec![1.0],
            names: vec!["x0".into()],
        };
        let map = StrategicMap::new(data, eps).unwrap();
        let xa: Vec<f64> = map.support(&[t]).unwrap().unwrap().iter().map(|a| a.z.x[0]).collect();
        let xb: Vec<f64> = map.support(&[u]).unwrap().unwrap().iter().map(|a| a.z.x[0]).collect();
        let exact = w1_1d(&xa, &xb).unwrap();
        let bound = map.coupling_bound(&[t], &[u]).unwrap();
        prop_assert!((exact - bound).abs() <= 1e-12 * (1.0 + bound));
        prop_assert!((bound - eps * (t - u).abs()).abs() <= 1e-12 * (1.0 + bound));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampling_is_deterministic_per_seed(seed in any::<u64>(), t in 0.0..1.0f64) {
        let map = BiasedCoinMap::new(0.1, 0.3).unwrap();
        let a = sample(&map, &[t], 10_000, seed).unwrap();
        let b = sample(&map, &[t], 10_000, seed).unwrap();
        prop_assert_eq!(&a, &b);
        // A prefix of a longer draw is the shorter draw.
        let c = sample(&map, &[t], 5_000, seed).unwrap();
        prop_assert_eq!(&a.ys[..5_000], &c.ys[..]);
        let loss = LossSpec::squared_affine();
        let mc = McConfig::new(20_000, seed).forced();
        prop_assert_eq!(
            performative_risk(&map, &loss, &[t], &mc).unwrap(),
            performative_risk(&map, &loss, &[t], &mc).unwrap()
        );
    }

    #[test]
    fn monte_carlo_agrees_with_exact_risk(seed in any::<u64>(), mu in -0.2..0.2f64, eps in 0.0..0.3f64, t in 0.0..1.0f64) {
        let map = BiasedCoinMap::new(mu, eps).unwrap();
        let loss = LossSpec::squared_affine();
        let exact = performative_risk(&map, &loss, &[t], &McConfig::new(1, 0)).unwrap();
        let mc = performative_risk(&map, &loss, &[t], &McConfig::new(50_000, seed).forced()).unwrap();
        prop_assert!(exact.exact && !mc.exact);
        let closed = map.closed_form().perf_risk(t);
        prop_assert!((exact.mean - closed).abs() <= 1e-12);
        prop_assert!((mc.mean - exact.mean).abs() <= 5.0 * mc.std_error + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rrm_on_coin_tracks_closed_form(mu in -0.2..0.2f64, eps in 0.0..0.3f64) {
        let map = BiasedCoinMap::new(mu, eps).unwrap();
        let loss = LossSpec::squared_affine();
        let space = map.default_space();
        let closed = rrm(&map, &loss, &space, &[0.5], &SolverConfig::default(), 0, 0).unwrap();
        let cfg = SolverConfig { force_solver: true, ..SolverConfig::default() };
        let solved = rrm(&map, &loss, &space, &[0.5], &cfg, 0, 0).unwrap();
        let ps = map.closed_form().theta_ps().clamp(0.0, 1.0);
        prop_assert!(closed.converged() && solved.converged());
        prop_assert!((closed.last()[0] - ps).abs() <= 1e-6);
        prop_assert!((solved.last()[0] - ps).abs() <= 1e-6);
    }
}

#[test]
fn convergence_is_monotone_along_the_eps_ladder() {
    let data = synthesize_credit_data(300, 6, 2, 4).unwrap();
    let ladder = [0.01, 0.1, 1.0, 10.0, 100.0];
    let converged: Vec<bool> = ladder
        .iter()
        .map(|&eps| {
            let cfg = CreditConfig {
                eps,
                ..CreditConfig::default()
            };
            run_credit_experiment(&data, &cfg)
                .unwrap()
                .trajectory
                .converged()
        })
        .collect();
    assert!(converged[0], "{converged:?}");
    for k in 1..ladder.len() {
        assert!(!converged[k] || converged[k - 1], "{converged:?}");
    }
}
