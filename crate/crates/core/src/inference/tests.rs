use super::*;
use super::variational::TAPER_WIDTH;
use crate::geometry::{erode, LatticeSpec, Window};
use crate::interactions::InteractionModel;
use crate::sampler::{simulate, ShiftMode, SimulationPlan};
use proptest::prelude::*;

fn gibbs(moves: MoveModel, r: f64, range: f64, t2: f64) -> GibbsModel {
    let d = moves.dim();
    GibbsModel::new(moves, InteractionModel::strauss(r, range, t2).unwrap(), LatticeSpec::cubic(d)).unwrap()
}

fn pairs(d: usize, window: Window, sites: &[&[f64]], disp: &[&[f64]]) -> SitePattern {
    SitePattern {
        sites: PointSet::from_points(d, sites.iter()),
        displacements: PointSet::from_points(d, disp.iter()),
        window,
    }
}

/// Three sites on a line with hand-placed points 0.1, 0.6 and 2.3.
fn toy() -> (Observation, GibbsModel) {
    let m = gibbs(MoveModel::uniform_cube(1, 0.5).unwrap(), 0.0, 0.6, 0.7);
    let obs = Observation::framework1(
        &pairs(1, Window::new(vec![-2.0], vec![4.0]).unwrap(), &[&[0.0], &[1.0], &[2.0]], &[&[0.1], &[-0.4], &[0.3]]),
        None,
        GlobalShift::zero(1),
    )
    .unwrap();
    (obs, m)
}

fn simulated(model: &GibbsModel, half: f64, seed: u64, framework: Framework) -> Observation {
    let d = model.dim();
    let mut plan = SimulationPlan {
        theta: model.theta(),
        model: model.clone(),
        sim_window: Window::cube(d, half),
        obs_window: Window::cube(d, half),
        sweeps: 1,
        burn_in: 200,
        seed,
        shift_mode: ShiftMode::Random,
    };
    plan.sim_window = plan.obs_window.dilate(plan.required_margin().unwrap() + 0.5);
    let out = simulate(&plan).unwrap();
    Observation::from_configuration(&out.config, &plan.obs_window, framework).unwrap()
}

#[test]
fn observation_checks_membership() {
    let w = Window::cube(1, 1.0);
    let bad = pairs(1, w.clone(), &[&[0.9]], &[&[0.3]]);
    assert!(matches!(Observation::framework1(&bad, None, GlobalShift::zero(1)), Err(Error::Domain { .. })));
    let good = pairs(1, w.clone(), &[&[0.0]], &[&[0.3]]);
    let obs = Observation::framework1(&good, None, GlobalShift::zero(1)).unwrap();
    assert_eq!(obs.points.len(), 1);
    let extra = PointPattern { points: PointSet::from_points(1, [[0.3], [-0.95]]), window: w.clone() };
    let obs = Observation::framework1(&good, Some(&extra), GlobalShift::zero(1)).unwrap();
    assert_eq!(obs.points.len(), 2);
    assert_eq!(obs.own_point(0), Some(0));
}

#[test]
fn constant_test_function_has_zero_dlr() {
    let (obs, m) = toy();
    let cfg = EstimatorConfig { quad_resolution: Some(500), ..Default::default() };
    for t in [-1.0, 0.0, 0.7, 3.0] {
        let v = dlr_statistic(&obs, &m, &ThetaVector::new(vec![], vec![t]), &TestFunction::Constant, &cfg).unwrap();
        assert_eq!(v, 0.0);
    }
    let bank = EstimatorConfig { test_functions: vec![TestFunction::Constant], ..cfg };
    assert_eq!(tf_criterion(&obs, &m, &ThetaVector::new(vec![], vec![0.3]), &bank).unwrap(), 0.0);

    let g = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.7);
    let obs = simulated(&g, 6.0, 3, Framework::F1);
    let cfg = EstimatorConfig { beta: 0.55, ..Default::default() };
    let v = dlr_statistic(&obs, &g, &g.theta(), &TestFunction::Constant, &cfg).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn three_site_toy_matches_brute_force() {
    let (obs, m) = toy();
    let theta = 0.7;
    let points = [0.1, 0.6, 2.3];
    let (w_lo, w_hi) = (-2.0 + 0.6, 4.0 - 0.6);
    // Oracle: 10^4-node midpoint rule written independently of the library.
    let n = 10_000;
    let mut expected = 0.0;
    for (k, site) in [0.0, 1.0, 2.0].iter().enumerate() {
        let s2 = |y: f64| points.iter().enumerate().filter(|(j, p)| *j != k && (y - *p).abs() <= 0.6).count() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for q in 0..n {
            let x = -0.5 + (q as f64 + 0.5) / n as f64;
            let y = site + x;
            if y < w_lo || y > w_hi {
                continue;
            }
            let e = (-theta * s2(y)).exp();
            num += e * s2(y);
            den += e;
        }
        expected += s2(points[k]) - num / den;
    }
    let cfg = EstimatorConfig { quad_resolution: Some(n), ..Default::default() };
    let s = TestFunction::Statistic { index: 0 };
    let got = dlr_statistic(&obs, &m, &ThetaVector::new(vec![], vec![theta]), &s, &cfg).unwrap();
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    // Hand-computed observed counts: 0.1-0.6 is the only pair in range.
    let ctx = EstimationContext::new(&obs, &m, &cfg).unwrap();
    let mom = ctx.moments(&ThetaVector::new(vec![], vec![theta]), false).unwrap();
    assert_eq!(mom.observed, vec![2.0]);
}

#[test]
fn uniform_pseudo_likelihood_is_minus_log_clipped_length() {
    // No interaction: Lambda_n is uniform on the part of the box kept by the
    // border correction.
    let m = gibbs(MoveModel::uniform_cube(1, 0.5).unwrap(), 0.0, 0.3, 0.0);
    let w = Window::new(vec![0.0], vec![6.0]).unwrap();
    let obs = Observation::framework1(
        &pairs(1, w, &[&[1.0], &[2.0], &[4.9]], &[&[0.2], &[0.0], &[-0.4]]),
        None,
        GlobalShift::zero(1),
    )
    .unwrap();
    let cfg = EstimatorConfig { quad_resolution: Some(20_000), ..Default::default() };
    let lpl = lpl_and_gradient(&obs, &m, &ThetaVector::new(vec![], vec![0.0]), &cfg).unwrap();
    // Sites must lie in [0.8, 5.2]; points in [0.3, 5.7].
    let length = |i: f64| ((i + 0.5).min(5.7) - (i - 0.5).max(0.3)).max(0.0);
    let expected = -(length(1.0).ln() + length(2.0).ln() + length(4.9).ln());
    assert!((lpl.value - expected).abs() < 1e-3, "{} vs {expected}", lpl.value);
    assert!(!lpl.infeasible);
}

#[test]
fn hardcore_breach_in_data_is_infeasible() {
    let m = gibbs(MoveModel::uniform_cube(1, 0.5).unwrap(), 0.3, 0.6, 0.5);
    let w = Window::new(vec![-2.0], vec![4.0]).unwrap();
    let obs = Observation::framework1(
        &pairs(1, w, &[&[0.0], &[1.0]], &[&[0.4], &[-0.4]]),
        None,
        GlobalShift::zero(1),
    )
    .unwrap();
    let cfg = EstimatorConfig { quad_resolution: Some(200), ..Default::default() };
    let lpl = lpl_and_gradient(&obs, &m, &m.theta(), &cfg).unwrap();
    assert!(lpl.infeasible);
    assert_eq!(lpl.value, f64::NEG_INFINITY);
    assert!(matches!(fit_takacs_fiksel(&obs, &m, &cfg), Err(Error::Infeasible)));
}

#[test]
fn small_window_is_insufficient() {
    let g = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.7);
    let obs = simulated(&g, 2.0, 1, Framework::F1);
    let r = fit_takacs_fiksel(&obs, &g, &EstimatorConfig::default());
    assert!(matches!(r, Err(Error::InsufficientData { usable: 0 })));
}

#[test]
fn framework2_rejected_by_site_equations() {
    let g = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.7);
    let obs = simulated(&g, 6.0, 1, Framework::F2);
    assert!(matches!(fit_takacs_fiksel(&obs, &g, &EstimatorConfig::default()), Err(Error::Config(_))));
}

#[test]
fn config_validation() {
    let bad = EstimatorConfig { beta: 0.5, ..Default::default() };
    assert!(bad.validate().is_err());
    let fixed = EstimatorConfig { beta: 0.1, fixed_m: Some(1.0), ..Default::default() };
    assert!(fixed.validate().is_ok());
    let json = serde_json::to_string(&EstimatorConfig::default()).unwrap();
    let back: EstimatorConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, EstimatorConfig::default());
    let partial: EstimatorConfig = serde_json::from_str(r#"{"beta": 0.6, "optimizer": "gradient"}"#).unwrap();
    assert_eq!(partial.optimizer, OptimizerKind::Gradient);
    assert_eq!(partial.test_functions, vec![TestFunction::Score]);
}

#[test]
fn gradient_is_minus_score_dlr_and_matches_finite_differences() {
    let g = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.7);
    let obs = simulated(&g, 7.0, 11, Framework::F1);
    let cfg = EstimatorConfig { beta: 0.55, ..Default::default() };
    let ctx = EstimationContext::new(&obs, &g, &cfg).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    for _ in 0..10 {
        let t1 = rand::Rng::random_range(&mut rng, 0.6..1.8);
        let t2 = rand::Rng::random_range(&mut rng, -1.0..2.0);
        let theta = ThetaVector::new(vec![t1], vec![t2]);
        let m = ctx.moments(&theta, true).unwrap();
        for j in 0..2 {
            let f = TestFunction::Statistic { index: j };
            let dlr = ctx.dlr(&theta, &f).unwrap();
            assert!((m.gradient[j] + dlr).abs() <= 1e-10 * (1.0 + dlr.abs()), "{} vs {}", m.gradient[j], dlr);
        }
        let h = 1e-5;
        for j in 0..2 {
            let mut up = theta.to_flat();
            let mut dn = theta.to_flat();
            up[j] += h;
            dn[j] -= h;
            let fd = (ctx.moments(&ThetaVector::from_flat(1, &up), false).unwrap().lpl
                - ctx.moments(&ThetaVector::from_flat(1, &dn), false).unwrap().lpl)
                / (2.0 * h);
            assert!((fd - m.gradient[j]).abs() <= 1e-4 * m.gradient[j].abs().max(1.0), "{fd} vs {}", m.gradient[j]);
        }
        // Hessian against differences of the analytic gradient.
        let hess = m.hessian.unwrap();
        for j in 0..2 {
            let mut up = theta.to_flat();
            up[j] += h;
            let g_up = ctx.moments(&ThetaVector::from_flat(1, &up), false).unwrap().gradient;
            for i in 0..2 {
                let fd = (g_up[i] - m.gradient[i]) / h;
                assert!((fd - hess[(i, j)]).abs() <= 1e-3 * hess[(i, j)].abs().max(1.0));
            }
        }
    }
}

#[test]
fn simplex_and_newton_agree_and_recover_truth() {
    let g = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.69);
    let obs = simulated(&g, 10.0, 21, Framework::F1);
    let cfg = EstimatorConfig { beta: 0.55, ..Default::default() };
    let tf = fit_takacs_fiksel(&obs, &g, &cfg).unwrap();
    assert!(tf.converged, "{tf:?}");
    let newton = fit_takacs_fiksel(&obs, &g, &EstimatorConfig { optimizer: OptimizerKind::Gradient, ..cfg.clone() }).unwrap();
    assert!(newton.converged);
    for (a, b) in tf.theta_hat.to_flat().iter().zip(newton.theta_hat.to_flat()) {
        assert!((a - b).abs() < 1e-3, "{tf:?} {newton:?}");
    }
    // Criterion is recomputable at the estimate.
    let again = tf_criterion(&obs, &g, &tf.theta_hat, &cfg).unwrap();
    assert!((again - tf.criterion).abs() <= 1e-10 * (1.0 + again));
    assert!((tf.theta_hat.theta1[0] - 1.0).abs() < 0.25);
    assert!((tf.theta_hat.theta2[0] - 0.69).abs() < 0.8);
    assert!(tf.n_sites_used > 50);
    let json = serde_json::to_value(&tf).unwrap();
    for key in ["theta_hat", "criterion", "converged", "n_sites_used", "residuals", "config"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn custom_closure_bank() {
    let (obs, m) = toy();
    let cfg = EstimatorConfig { quad_resolution: Some(2000), ..Default::default() };
    let theta = ThetaVector::new(vec![], vec![0.4]);
    let square = |_: &[f64], _: &[f64], s: &[f64]| s[0] * s[0];
    let a = dlr_statistic(&obs, &m, &theta, &square, &cfg).unwrap();
    let b = dlr_statistic(&obs, &m, &theta, &TestFunction::StatisticProduct { a: 0, b: 0 }, &cfg).unwrap();
    assert_eq!(a, b);
    let bank = EstimatorConfig {
        test_functions: vec![TestFunction::Score, TestFunction::Displacement { axis: 0 }],
        ..cfg
    };
    let fit = fit_takacs_fiksel(&obs, &m, &bank).unwrap();
    assert_eq!(fit.residuals.len(), 2);
}

// Independent tapered statistic for the variational oracle.
fn tapered_s2(y: &[f64], others: &[Vec<f64>], edge: f64, w: f64) -> f64 {
    others
        .iter()
        .map(|o| {
            let rho = y.iter().zip(o).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let t = ((rho - edge + w / 2.0) / w).clamp(0.0, 1.0);
            1.0 - (3.0 * t * t - 2.0 * t * t * t)
        })
        .sum()
}

#[test]
fn variational_system_matches_finite_differences() {
    // Poisson-like scatter so that many pairs fall inside the taper shell.
    let m = gibbs(MoveModel::uniform_cube(2, 0.5).unwrap(), 0.0, 0.5, 0.69);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
    let window = Window::cube(2, 3.0);
    // The second derivative of the taper jumps at the shell faces, where the
    // finite differences below would straddle; keep pairs away from them.
    let faces = [0.5 - 0.5 * TAPER_WIDTH * 0.5, 0.5 + 0.5 * TAPER_WIDTH * 0.5];
    let mut scatter: Vec<[f64; 2]> = Vec::new();
    for _ in 0..400 {
        let y = [rand::Rng::random_range(&mut rng, -3.0..3.0), rand::Rng::random_range(&mut rng, -3.0..3.0)];
        let near_face = scatter.iter().any(|o: &[f64; 2]| {
            let rho = ((y[0] - o[0]).powi(2) + (y[1] - o[1]).powi(2)).sqrt();
            faces.iter().any(|f| (rho - f).abs() < 1e-4)
        });
        if !near_face {
            scatter.push(y);
        }
    }
    let pattern = PointPattern { points: PointSet::from_points(2, scatter.iter()), window };
    let obs = Observation::framework2(&pattern, GlobalShift::new(&m.lattice, vec![0.3, 0.6]).unwrap()).unwrap();
    let sys = variational_system(&obs, &m, None).unwrap();
    let w = TAPER_WIDTH * 0.5;
    let psi = default_psi(&m.moves, &m.lattice, &obs.shift).unwrap();
    let inner = erode(&obs.window, 0.5 + w / 2.0);
    let pts = obs.points.to_vecs();
    let h = 1e-6;
    let mut b = [0.0; 2];
    let mut a = [0.0; 2];
    for (j, y) in pts.iter().enumerate() {
        if !inner.contains(y) {
            continue;
        }
        let others: Vec<Vec<f64>> = pts.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, p)| p.clone()).collect();
        let shifted = |k: usize, s: f64| {
            let mut v = y.clone();
            v[k] += s;
            v
        };
        for k in 0..2 {
            let ds = |v: &[f64]| {
                let mut up = v.to_vec();
                let mut dn = v.to_vec();
                up[k] += h;
                dn[k] -= h;
                (tapered_s2(&up, &others, 0.5, w) - tapered_s2(&dn, &others, 0.5, w)) / (2.0 * h)
            };
            let f = |v: &[f64]| ds(v) * psi.value_grad(v, &mut [0.0; 2]);
            let fk = f(y);
            let dfk = (f(&shifted(k, 5.0 * h)) - f(&shifted(k, -5.0 * h))) / (2.0 * 5.0 * h);
            b[k] += dfk;
            a[k] += fk * ds(y);
        }
    }
    for k in 0..2 {
        assert!((sys.b[k] - b[k]).abs() <= 1e-3 * (1.0 + b[k].abs()), "{} vs {}", sys.b[k], b[k]);
        assert!((sys.a[(k, 0)] - a[k]).abs() <= 1e-3 * (1.0 + a[k].abs()), "{} vs {}", sys.a[(k, 0)], a[k]);
    }
    assert!(a.iter().all(|v| *v > 1.0), "{a:?}");
}

#[test]
fn variational_without_pairs_is_unidentifiable() {
    let m = gibbs(MoveModel::uniform_cube(2, 0.1).unwrap(), 0.0, 0.5, 0.0);
    let obs = simulated(&m, 5.0, 4, Framework::F2);
    let r = fit_variational(&obs, &m, &EstimatorConfig::default(), None);
    assert!(matches!(r, Err(Error::Identifiability)));
    let e = gibbs(MoveModel::exponential(2, 30.0).unwrap(), 0.0, 0.5, 0.0);
    let obs = simulated(&e, 5.0, 4, Framework::F2);
    assert!(matches!(fit_variational(&obs, &e, &EstimatorConfig::default(), None), Err(Error::Identifiability)));
}

#[test]
fn variational_rejects_gaussian_moves() {
    let g = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.7);
    let obs = simulated(&g, 5.0, 4, Framework::F2);
    assert!(matches!(fit_variational(&obs, &g, &EstimatorConfig::default(), None), Err(Error::Config(_))));
}

fn assert_mean_zero_equations(model: &GibbsModel, half: f64) {
    let d = model.dim();
    let mut plan = SimulationPlan {
        theta: model.theta(),
        model: model.clone(),
        sim_window: Window::cube(d, half),
        obs_window: Window::cube(d, half),
        sweeps: 1,
        burn_in: 20,
        seed: 77,
        shift_mode: ShiftMode::Random,
    };
    plan.sim_window = plan.obs_window.dilate(plan.required_margin().unwrap() + 0.5);
    let reps = crate::sampler::replicate(&plan, 50).unwrap();
    let rows: Vec<Vec<f64>> = reps
        .iter()
        .map(|out| {
            let obs = Observation::framework2(&out.f2, out.config.shift.clone()).unwrap();
            variational_system(&obs, model, None).unwrap().residual(&model.theta()).iter().copied().collect()
        })
        .collect();
    for r in 0..rows[0].len() {
        let vals: Vec<f64> = rows.iter().map(|v| v[r]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(sd > 0.0);
        assert!(mean.abs() < 4.0 * sd / n.sqrt(), "row {r}: mean {mean} sd {sd}");
    }
}

#[test]
fn variational_equations_are_mean_zero_without_interaction() {
    assert_mean_zero_equations(&gibbs(MoveModel::uniform_cube(2, 0.5).unwrap(), 0.0, 0.5, 0.0), 6.0);
    assert_mean_zero_equations(&gibbs(MoveModel::exponential(2, 3.0).unwrap(), 0.0, 0.4, 0.0), 6.0);
}

#[test]
fn psi_profiles_vanish_on_box_faces() {
    let bump = BoxBump { centre: vec![0.3, 0.7], half: vec![0.5, 0.4] };
    let mut g = [0.0; 2];
    assert!(bump.value_grad(&[0.8, 0.7], &mut g).abs() < 1e-15);
    assert!(g.iter().all(|v| v.abs() < 1e-12));
    assert!(bump.value_grad(&[0.3, 1.15], &mut g) == 0.0);
    assert!((bump.value_grad(&[1.3, 0.7], &mut g) - 1.0).abs() < 1e-15);
    let sine = PeriodicSine { shift: vec![0.25, 0.5] };
    assert!(sine.value_grad(&[3.25, 0.9], &mut g).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_gradients_match_differences(y0 in -3.0..3.0f64, y1 in -3.0..3.0f64) {
        let profiles: Vec<Box<dyn Psi>> = vec![
            Box::new(BoxBump { centre: vec![0.1, -0.2], half: vec![0.45, 0.3] }),
            Box::new(PeriodicSine { shift: vec![0.1, 0.6] }),
        ];
        for psi in &profiles {
            let mut g = [0.0; 2];
            psi.value_grad(&[y0, y1], &mut g);
            let h = 1e-6;
            let mut s = [0.0; 2];
            let fd0 = (psi.value_grad(&[y0 + h, y1], &mut s) - psi.value_grad(&[y0 - h, y1], &mut s)) / (2.0 * h);
            let fd1 = (psi.value_grad(&[y0, y1 + h], &mut s) - psi.value_grad(&[y0, y1 - h], &mut s)) / (2.0 * h);
            prop_assert!((fd0 - g[0]).abs() < 1e-5);
            prop_assert!((fd1 - g[1]).abs() < 1e-5);
        }
    }
}

