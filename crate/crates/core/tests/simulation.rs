use gle_krylov::fdt::build_noise_model;
use gle_krylov::kernel::exact_full_vacf;
use gle_krylov::krylov::{build_bundle, Method, Subspace};
use gle_krylov::linalg::{from_row_major, inverse, Matrix};
use gle_krylov::operators::{OperatorMode, ReducedOperators};
use gle_krylov::sim::{
    simulate_full, simulate_reduced, vacf, MatrixEstimate, ReducedModel, SimParams, SE_BANDS,
};
use gle_krylov::system::{make_synthetic, FullSystem, SyntheticSpec};
use proptest::prelude::*;

fn system() -> FullSystem {
    let spec = SyntheticSpec {
        d: 8,
        m: 2,
        gamma: 2.0,
        kbt: 0.8,
        lambda_min: 1.0,
        lambda_max: 4.0,
    };
    make_synthetic(&spec, 31).unwrap()
}

fn reduced(sys: &FullSystem, n: usize, subspace: Subspace) -> ReducedModel {
    let ops = ReducedOperators::new(sys, OperatorMode::PsiFree).unwrap();
    let pb = build_bundle(&ops, n, Method::Raw, subspace).unwrap();
    let nm = build_noise_model(&pb, &ops).unwrap();
    ReducedModel::new(sys, &pb, &nm).unwrap()
}

fn params(steps: usize, ensemble: usize, dt: f64) -> SimParams {
    let mut p = SimParams::new(steps, ensemble);
    p.dt = Some(dt);
    p
}

#[test]
fn reduced_models_are_stationary_at_equilibrium() {
    let sys = system();
    let kbt = sys.kbt;
    for n in 1..=5 {
        let rm = reduced(&sys, n, Subspace::Standard);
        let stationary = rm.stationary_covariance().unwrap();
        let m = rm.m;
        let traj = simulate_reduced(&rm, &params(100_000, 32, 0.002), 40 + n as u64).unwrap();
        let p = traj.covariance_p().unwrap();
        let q = traj.covariance_q().unwrap();
        let p_target = stationary.view((m, m), (m, m)).into_owned();
        let q_target = stationary.view((0, 0), (m, m)).into_owned();
        assert!((&p_target - Matrix::identity(m, m) * kbt).norm() < 1e-8);
        assert!(
            p.within(&p_target, SE_BANDS),
            "n={n}: p deviates {:.2} SE",
            p.max_deviation(&p_target)
        );
        assert!(
            q.within(&q_target, SE_BANDS),
            "n={n}: q deviates {:.2} SE",
            q.max_deviation(&q_target)
        );
    }
}

#[test]
fn fdt_violating_model_drifts_from_equipartition() {
    let spec = SyntheticSpec {
        d: 8,
        m: 2,
        gamma: 1.0,
        kbt: 0.8,
        lambda_min: 1.0,
        lambda_max: 10.0,
    };
    let sys = make_synthetic(&spec, 0).unwrap();
    let rm = reduced(&sys, 2, Subspace::Inverse);
    assert!(!rm.fdt_pass);
    assert!(gle_krylov::linalg::spectral_abscissa(&rm.extended_drift()) < 0.0);
    let mut p = params(100_000, 32, 0.002);
    assert!(matches!(
        simulate_reduced(&rm, &p, 1),
        Err(gle_krylov::Error::FdtGate { .. })
    ));
    p.allow_fdt_violation = true;
    let traj = simulate_reduced(&rm, &p, 1).unwrap();
    let est = traj.covariance_p().unwrap();
    let dev = est.max_deviation(&(Matrix::identity(2, 2) * sys.kbt));
    assert!(dev > 5.0, "deviation only {dev:.2} SE");
}

#[test]
fn unstable_violating_model_grows_without_bound() {
    let sys = system();
    let rm = reduced(&sys, 2, Subspace::Inverse);
    assert!(gle_krylov::linalg::spectral_abscissa(&rm.drift) > 0.0);
    let mut p = params(5_000, 4, 0.002);
    p.allow_fdt_violation = true;
    let traj = simulate_reduced(&rm, &p, 1).unwrap();
    assert!(traj.covariance_p().unwrap().mean.trace() > 1e6 * sys.kbt);
    p.steps = 500_000;
    assert!(matches!(
        simulate_reduced(&rm, &p, 1),
        Err(gle_krylov::Error::Diverged { .. })
    ));
}

#[test]
fn overdamped_identity_stiffness_reaches_kbt() {
    let a = Matrix::identity(3, 3);
    let phi = from_row_major(3, 1, &[1.0, 0.0, 0.0]).unwrap();
    let sys = FullSystem::new(a, phi, 8.0, 1.3).unwrap();
    let mut p = params(100_000, 32, 0.005);
    p.state_covariance = true;
    let traj = simulate_full(&sys, &p, 3).unwrap();
    let state = traj.covariance_state().unwrap().unwrap();
    let xx = MatrixEstimate {
        mean: state.mean.view((0, 0), (3, 3)).into_owned(),
        se: state.se.view((0, 0), (3, 3)).into_owned(),
    };
    assert!(
        xx.within(&(Matrix::identity(3, 3) * 1.3), SE_BANDS),
        "{:.2}",
        xx.max_deviation(&(Matrix::identity(3, 3) * 1.3))
    );
}

#[test]
fn estimated_vacf_matches_exact_oracle_and_se_shrinks() {
    let sys = system();
    let run = |ensemble| {
        let mut p = params(100_000, ensemble, 0.002);
        p.record_every = 25;
        vacf(&simulate_full(&sys, &p, 8).unwrap(), 40).unwrap()
    };
    let small = run(16);
    let large = run(64);
    let exact = exact_full_vacf(&sys, &large.lags).unwrap();
    let mut worst = 0.0f64;
    for (lag, c) in exact.iter().enumerate() {
        let est = MatrixEstimate {
            mean: large.mean[lag].clone(),
            se: large.se[lag].clone(),
        };
        worst = worst.max(est.max_deviation(c));
    }
    // 41 lags x 4 entries of strongly correlated estimates
    assert!(worst <= 4.0, "worst deviation {worst:.2} SE");
    let c0 = &large.mean[0];
    assert!((c0 - c0.transpose()).norm() < 0.05 && c0.symmetric_eigenvalues().min() > 0.0);
    let ratio = small.se[0][(0, 0)] / large.se[0][(0, 0)];
    assert!(
        (1.4..=2.9).contains(&ratio),
        "SE ratio {ratio:.2}, expected about 2"
    );
}

#[test]
fn toy2_reduced_order_two_matches_full_statistics() {
    let sys = gle_krylov::system::toy2_fixture();
    let rm = reduced(&sys, 2, Subspace::Standard);
    let traj = simulate_reduced(&rm, &params(100_000, 32, 0.002), 12).unwrap();
    let q = traj.covariance_q().unwrap();
    let target = inverse(&rm.aeff).unwrap();
    assert!((target[(0, 0)] - 0.6).abs() < 1e-14);
    assert!(
        q.within(&target, SE_BANDS),
        "{:.2}",
        q.max_deviation(&target)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimates_ignore_member_order(
        values in prop::collection::vec(-5.0f64..5.0, 4..24),
        seed in any::<u64>(),
    ) {
        let samples: Vec<Matrix> = values.iter().map(|v| Matrix::from_element(1, 1, *v)).collect();
        let mut shuffled = samples.clone();
        // deterministic Fisher-Yates from the proptest seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = MatrixEstimate::from_members(&samples).unwrap();
        let b = MatrixEstimate::from_members(&shuffled).unwrap();
        prop_assert!((a.mean[(0, 0)] - b.mean[(0, 0)]).abs() <= 1e-12);
        prop_assert!((a.se[(0, 0)] - b.se[(0, 0)]).abs() <= 1e-12);
    }
}
