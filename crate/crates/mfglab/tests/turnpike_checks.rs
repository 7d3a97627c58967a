//! Turnpike machinery exercised on solved equilibria: gap functions,
//! differential inequalities, monotonicity propagation, the ergodic
//! constant and small ergodic studies.

mod common;

use common::{assert_close, RiccatiOracle};
use mfglab::measures::EmpiricalMeasure;
use mfglab::models::{build_model, BuiltinModelSpec};
use mfglab::solve::{
    solve_agent_bvp, solve_equilibrium_grid, solve_equilibrium_particles, SolverConfig,
    TrajectoryBundle,
};
use mfglab::turnpike::{
    check_differential_inequality, check_uniqueness_limits, ergodic_study, gap_functions,
    gradient_gap_field, lambda_t, EquilibriumRoute, ProbeGrid, StudyConfig,
};
use mfglab::Error;

fn cloud_1d(points: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(1, points.iter().map(|x| vec![*x]).collect()).unwrap()
}

fn spread_cloud(n: usize, mean: f64, scale: f64) -> EmpiricalMeasure {
    let pts: Vec<f64> = (0..n)
        .map(|i| mean + scale * ((i as f64 + 0.5) / n as f64 - 0.5) * 2.0)
        .collect();
    cloud_1d(&pts)
}

#[test]
fn gap_functions_identical_bundles_vanish() {
    let model = build_model(&BuiltinModelSpec::mechanical(1.0, 0.5, 1.0)).unwrap();
    let rho0 = spread_cloud(16, 0.5, 0.8);
    let cfg = SolverConfig {
        dt: 0.02,
        ..Default::default()
    };
    let eq = solve_equilibrium_particles(model.as_ref(), &rho0, 3.0, &cfg).unwrap();
    let b = TrajectoryBundle::from_equilibrium(&eq, 0.0).unwrap();
    let g = gap_functions(&b, &b).unwrap();
    assert!(g.phi.iter().all(|v| v.abs() < 1e-15));
    assert!(g.phi_cap.iter().all(|v| *v < 1e-15));
    assert!(g.w2_gap.iter().all(|v| *v < 1e-12));
    let rep = check_differential_inequality(&g, 1.0, true).unwrap();
    assert!(rep.slack_phi_envelope >= -1e-15);
    assert!(rep.slack_monotone.unwrap() >= -1e-12);
}

#[test]
fn gap_functions_orthogonal_displacement() {
    // X shifted by v, Y equal: Phi = |v|^2, phi = 0.
    let model = build_model(&BuiltinModelSpec::mechanical(1.0, 0.0, 1.0)).unwrap();
    let rho0 = spread_cloud(8, 0.0, 0.5);
    let cfg = SolverConfig {
        dt: 0.05,
        ..Default::default()
    };
    let eq = solve_equilibrium_particles(model.as_ref(), &rho0, 2.0, &cfg).unwrap();
    let b1 = TrajectoryBundle::from_equilibrium(&eq, 0.0).unwrap();
    let mut b2 = b1.clone();
    let v = 0.7;
    for i in 0..b2.x.n_particles {
        for k in 0..b2.times.len() {
            let x = b2.x.get(i, k)[0] + v;
            b2.x.set(i, k, &[x]);
        }
    }
    let g = gap_functions(&b1, &b2).unwrap();
    for k in 0..g.times.len() {
        assert_close(g.phi[k], 0.0, 1e-12, "phi orthogonal");
        assert_close(g.phi_cap[k], v * v, 1e-12, "Phi = |v|^2");
        assert_close(g.w2_gap[k], v, 1e-9, "w2 = |v|");
    }
}

#[test]
fn gap_functions_misaligned_bundles_error() {
    let model = build_model(&BuiltinModelSpec::mechanical(1.0, 0.0, 1.0)).unwrap();
    let rho0 = spread_cloud(8, 0.0, 0.5);
    let cfg = SolverConfig {
        dt: 0.05,
        ..Default::default()
    };
    let eq = solve_equilibrium_particles(model.as_ref(), &rho0, 2.0, &cfg).unwrap();
    let b1 = TrajectoryBundle::from_equilibrium(&eq, 0.0).unwrap();
    let b2 = TrajectoryBundle::from_equilibrium(&eq, 0.5).unwrap();
    assert!(matches!(
        gap_functions(&b1, &b2),
        Err(Error::MisalignedBundles(_))
    ));
}

#[test]
fn riccati_agent_gap_matches_linear_flow() {
    // Two agent bundles from x = 0 and x = 1 under one riccati
    // equilibrium: Phi(s) follows the closed-form linear dynamics.
    let model = build_model(&BuiltinModelSpec::riccati_lq(1.0, 2.0)).unwrap();
    let rho0 = EmpiricalMeasure::dirac(&[0.0]);
    let horizon = 3.0;
    let cfg = SolverConfig {
        dt: 0.005,
        ..Default::default()
    };
    let eq = solve_equilibrium_particles(model.as_ref(), &rho0, horizon, &cfg).unwrap();
    let b1 = solve_agent_bvp(model.as_ref(), &eq, 0.0, &EmpiricalMeasure::dirac(&[0.0]), &cfg)
        .unwrap();
    let b2 = solve_agent_bvp(model.as_ref(), &eq, 0.0, &EmpiricalMeasure::dirac(&[1.0]), &cfg)
        .unwrap();
    let g = gap_functions(&b1, &b2).unwrap();
    let oracle = RiccatiOracle::new(1.0, 2.0, horizon);
    for (k, t) in g.times.iter().enumerate().step_by(150) {
        let x = oracle.state(0.0, 1.0, *t);
        let want = x * x * (1.0 + oracle.p(*t) * oracle.p(*t));
        assert_close(g.phi_cap[k], want, 2e-3, "Phi vs closed-form flow");
    }
    // Monotonicity propagation: phi(T) <= 0 and phi'(s) >= c0 Phi(s).
    let rep = check_differential_inequality(&g, 1.0, true).unwrap();
    assert!(
        rep.slack_monotone.unwrap() >= -rep.tolerance,
        "slack {}",
        rep.slack_monotone.unwrap()
    );
    assert!(g.phi.last().unwrap() <= &1e-10);
}

#[test]
fn two_equilibria_differential_inequality_holds() {
    // Different final costs, same rho0, strongly monotone model.
    let m1 = build_model(&BuiltinModelSpec::mechanical(1.0, 0.4, 1.0)).unwrap();
    let m2 = build_model(&BuiltinModelSpec::mechanical(1.0, 0.4, 2.0)).unwrap();
    let rho0 = spread_cloud(24, 0.8, 0.6);
    let cfg = SolverConfig {
        dt: 0.01,
        theta: 0.7,
        fp_tol: 1e-11,
        ..Default::default()
    };
    let horizon = 6.0;
    let e1 = solve_equilibrium_particles(m1.as_ref(), &rho0, horizon, &cfg).unwrap();
    let e2 = solve_equilibrium_particles(m2.as_ref(), &rho0, horizon, &cfg).unwrap();
    let b1 = TrajectoryBundle::from_equilibrium(&e1, 0.0).unwrap();
    let b2 = TrajectoryBundle::from_equilibrium(&e2, 0.0).unwrap();
    let g = gap_functions(&b1, &b2).unwrap();
    // Estimated monotonicity constant for this family is 1.
    let rep = check_differential_inequality(&g, 1.0, false).unwrap();
    assert!(rep.slack_phi_envelope >= -1e-12);
    assert!(
        rep.min_slack >= -rep.tolerance,
        "chain slack {} vs tolerance {}",
        rep.min_slack,
        rep.tolerance
    );
    // The integral inequality needs only a modest constant.
    assert!(rep.integral_c_required.is_finite());
}

#[test]
fn remark_translation_gap_stays_constant() {
    // Two translated equilibria of the c0 = 0 model: Phi constant in time,
    // phi' ~ 0; the chain holds only with c0 = 0.
    let beta = 0.0;
    let z = 1.0;
    let m1 = build_model(&BuiltinModelSpec::remark_translation(beta)).unwrap();
    let m2 = build_model(
        &BuiltinModelSpec::remark_translation(beta).with_param("z", z),
    )
    .unwrap();
    let n = 48;
    let rho1 = spread_cloud(n, 0.0, 0.4);
    let rho2 = rho1.translate(&[-z]);
    let cfg = SolverConfig {
        dt: 0.01,
        theta: 0.6,
        fp_tol: 1e-10,
        max_outer: 400,
        ..Default::default()
    };
    let horizon = 4.0;
    let e1 = solve_equilibrium_particles(m1.as_ref(), &rho1, horizon, &cfg).unwrap();
    let e2 = solve_equilibrium_particles(m2.as_ref(), &rho2, horizon, &cfg).unwrap();
    let b1 = TrajectoryBundle::from_equilibrium(&e1, 0.0).unwrap();
    let b2 = TrajectoryBundle::from_equilibrium(&e2, 0.0).unwrap();
    let g = gap_functions(&b1, &b2).unwrap();
    let first = g.phi_cap[0];
    assert!(first > 0.5 * z * z, "translated pair is separated");
    for v in &g.phi_cap {
        assert!(
            (v - first).abs() < 0.05 * first,
            "Phi drifted: {v} vs {first}"
        );
    }
    // W2 distance between the two flows stays constant as well.
    let w0 = g.w2_gap[0];
    for v in &g.w2_gap {
        assert!((v - w0).abs() < 0.05 * w0);
    }
    let rep = check_differential_inequality(&g, 0.0, false).unwrap();
    assert!(rep.min_slack >= -rep.tolerance);
}

#[test]
fn lambda_horizon_too_short() {
    let model = build_model(&BuiltinModelSpec::riccati_lq(1.0, 1.0)).unwrap();
    let rho0 = EmpiricalMeasure::dirac(&[0.0]);
    let cfg = SolverConfig {
        dt: 0.02,
        ..Default::default()
    };
    let eq = solve_equilibrium_particles(model.as_ref(), &rho0, 1.5, &cfg).unwrap();
    assert!(matches!(
        lambda_t(model.as_ref(), &eq),
        Err(Error::HorizonTooShort(_))
    ));
}

#[test]
fn lambda_riccati_decays_with_horizon() {
    let model = build_model(&BuiltinModelSpec::riccati_lq(1.0, 2.0)).unwrap();
    let rho0 = spread_cloud(32, 1.0, 0.5);
    let cfg = SolverConfig {
        dt: 0.02,
        ..Default::default()
    };
    let mut last = f64::INFINITY;
    for horizon in [4.0, 8.0, 12.0] {
        let eq = solve_equilibrium_particles(model.as_ref(), &rho0, horizon, &cfg).unwrap();
        let lam = lambda_t(model.as_ref(), &eq).unwrap();
        assert!(lam >= 0.0 && lam < last, "lambda^{horizon} = {lam}");
        last = lam;
    }
    assert!(last < 1e-3);
}

#[test]
fn lambda_remark_translation_grid_hits_beta_sqrt2() {
    let beta = 0.5;
    let model = build_model(&BuiltinModelSpec::remark_translation(beta)).unwrap();
    let std0 = (beta / std::f64::consts::SQRT_2).sqrt();
    let n = 128;
    let pts: Vec<f64> = (0..n)
        .map(|i| std0 * quantile((i as f64 + 0.5) / n as f64))
        .collect();
    let rho0 = cloud_1d(&pts);
    let cfg = SolverConfig {
        dt: 0.02,
        grid_half_width: 6.0,
        grid_h: 0.025,
        fp_tol: 1e-7,
        ..Default::default()
    };
    let eq = solve_equilibrium_grid(model.as_ref(), &rho0, 6.0, beta, &cfg).unwrap();
    let lam = lambda_t(model.as_ref(), &eq).unwrap();
    let want = beta * std::f64::consts::SQRT_2;
    assert!(
        ((lam - want) / want).abs() < 0.02,
        "lambda = {lam}, want {want}"
    );
}

#[test]
fn lambda_riccati_grid_with_noise_hits_beta_sqrt_c0() {
    // Substitute u = sqrt(c0)/2 x^2 into the HJB: lambda = beta sqrt(c0).
    let beta = 0.25;
    let c0 = 1.0;
    let model = build_model(&BuiltinModelSpec::riccati_lq(c0, 2.0)).unwrap();
    let rho0 = spread_cloud(64, 0.0, 0.4);
    let cfg = SolverConfig {
        dt: 0.02,
        grid_half_width: 7.0,
        grid_h: 0.025,
        fp_tol: 1e-7,
        ..Default::default()
    };
    let eq = solve_equilibrium_grid(model.as_ref(), &rho0, 10.0, beta, &cfg).unwrap();
    let lam = lambda_t(model.as_ref(), &eq).unwrap();
    let want = beta * c0.sqrt();
    assert!(
        ((lam - want) / want).abs() < 0.03,
        "lambda = {lam}, want {want}"
    );
}

#[test]
fn gradient_gap_riccati_pair_matches_riccati_difference() {
    let m1 = build_model(&BuiltinModelSpec::riccati_lq(1.0, 1.0)).unwrap();
    let m2 = build_model(&BuiltinModelSpec::riccati_lq(1.0, 2.0)).unwrap();
    let rho0 = EmpiricalMeasure::dirac(&[0.0]);
    let horizon = 3.0;
    let cfg = SolverConfig {
        dt: 0.005,
        ..Default::default()
    };
    let e1 = solve_equilibrium_particles(m1.as_ref(), &rho0, horizon, &cfg).unwrap();
    let e2 = solve_equilibrium_particles(m2.as_ref(), &rho0, horizon, &cfg).unwrap();
    let o1 = RiccatiOracle::new(1.0, 1.0, horizon);
    let o2 = RiccatiOracle::new(1.0, 2.0, horizon);
    let probes: Vec<Vec<f64>> = vec![vec![-2.0], vec![0.5], vec![1.5]];
    for t in [0.0, 1.0, 2.0] {
        let gaps =
            gradient_gap_field(m1.as_ref(), &e1, m2.as_ref(), &e2, t, &probes, &cfg).unwrap();
        let dp = o1.p(t) - o2.p(t);
        for (gap, x) in gaps.iter().zip(&probes) {
            let want = dp * dp * x[0] * x[0] / (1.0 + x[0] * x[0]);
            assert!(
                (gap - want).abs() <= 1e-3 * want.max(1e-6) + 1e-9,
                "t={t} x={} gap {gap} want {want}",
                x[0]
            );
        }
    }
    // Identical equilibria give zeros.
    let zeros =
        gradient_gap_field(m1.as_ref(), &e1, m1.as_ref(), &e1, 1.0, &probes, &cfg).unwrap();
    assert!(zeros.iter().all(|v| *v < 1e-18));
}

#[test]
fn small_ergodic_study_and_uniqueness() {
    let rho0 = spread_cloud(24, 1.0, 0.5);
    let probes = ProbeGrid {
        times: vec![0.0, 0.25],
        xs: vec![vec![-1.0], vec![0.0], vec![1.0]],
    };
    let cfg = StudyConfig {
        solver: SolverConfig {
            dt: 0.025,
            ..Default::default()
        },
        beta: 0.0,
        route: EquilibriumRoute::Particle,
    };
    let horizons = [2.0, 4.0, 8.0];
    let m1 = build_model(&BuiltinModelSpec::riccati_lq(1.0, 1.0)).unwrap();
    let m2 = build_model(&BuiltinModelSpec::riccati_lq(1.0, 2.0)).unwrap();
    let s1 = ergodic_study(m1.as_ref(), "riccati_lq", &rho0, &horizons, &probes, &cfg).unwrap();
    let s2 = ergodic_study(m2.as_ref(), "riccati_lq", &rho0, &horizons, &probes, &cfg).unwrap();
    // lambda decreases geometrically toward 0.
    assert!(s1.lambda_limit.abs() < 5e-3);
    assert!(s1.lambda_gaps[1] < s1.lambda_gaps[0]);
    // Different g, same everything else: limits agree.
    let rep = check_uniqueness_limits(&s1, &s2).unwrap();
    assert!(rep.lambda_ok, "{rep:?}");
    assert!(rep.u_ok, "{rep:?}");
    // Incompatible studies are rejected.
    let other_probes = ProbeGrid {
        times: vec![0.0],
        xs: vec![vec![0.0]],
    };
    let s3 = ergodic_study(
        m2.as_ref(),
        "riccati_lq",
        &rho0,
        &horizons,
        &other_probes,
        &cfg,
    )
    .unwrap();
    assert!(matches!(
        check_uniqueness_limits(&s1, &s3),
        Err(Error::IncompatibleStudies(_))
    ));
}

fn quantile(p: f64) -> f64 {
    // Coarse normal quantile via bisection on erf; accuracy is irrelevant
    // here, the cloud just needs the right variance scale.
    let mut lo = -6.0f64;
    let mut hi = 6.0f64;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if 0.5 * (1.0 + erf(mid / std::f64::consts::SQRT_2)) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn erf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26.
    let s = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    s * y
}
