use degen_ustat::bootstrap::{bootstrap_modelspec, bootstrap_symmetry, BootstrapPlan};
use degen_ustat::harness::{run, ExperimentConfig, ExperimentKind, TestSpec};
use degen_ustat::process::{simulate, simulate_coupled, Innovation, ProcessModel, RegressionMap};
use degen_ustat::rng::{derive_seed, stream, Purpose};
use degen_ustat::tau::estimate_tau_profile;
use degen_ustat::Error;

fn small(test: TestSpec) -> ExperimentConfig {
    let scheme = test.scheme();
    ExperimentConfig { test, n: 60, m: 1, plan: BootstrapPlan::new(scheme, 49, 0), master_seed: 77, ..Default::default() }
}

#[test]
fn single_replication_reproduces_direct_call() {
    let g0 = RegressionMap::Linear { a: 0.5 };
    let config = small(TestSpec::ModelSpec { g0: g0.clone(), bw: 1.0 });
    let report = run(&config).unwrap();
    let model = &config.model;
    let series =
        simulate(model, 60, derive_seed(77, Purpose::ReplicationData, 0), model.default_burn_in()).unwrap();
    let plan = config.plan.with_seed(derive_seed(77, Purpose::ReplicationBootstrap, 0));
    let direct = bootstrap_modelspec(&series, &g0, 1.0, &plan, 0.05).unwrap();
    let rep = &report.replications[0];
    assert_eq!(rep.statistic.to_bits(), direct.statistic.to_bits());
    assert_eq!(rep.p_value.to_bits(), direct.p_value.to_bits());
    assert_eq!(rep.reject, direct.reject);

    let config = small(TestSpec::Symmetry { gamma: 1.0, mu: 0.0 });
    let report = run(&config).unwrap();
    let plan = config.plan.with_seed(derive_seed(77, Purpose::ReplicationBootstrap, 0));
    let direct = bootstrap_symmetry(&series, 1.0, 0.0, &plan, 0.05).unwrap();
    assert_eq!(report.replications[0].statistic.to_bits(), direct.statistic.to_bits());
    assert_eq!(report.replications[0].p_value.to_bits(), direct.p_value.to_bits());
}

#[test]
fn adding_replications_keeps_earlier_ones() {
    let mut config = small(TestSpec::ModelSpec { g0: RegressionMap::Linear { a: 0.5 }, bw: 1.0 });
    config.m = 3;
    let a = run(&config).unwrap();
    config.m = 5;
    let b = run(&config).unwrap();
    assert_eq!(a.replications[..], b.replications[..3]);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let mut config = small(TestSpec::Symmetry { gamma: 1.0, mu: 0.0 });
    config.m = 4;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut csvs = Vec::new();
    for (threads, dir) in [1, 4].into_iter().zip(&dirs) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let c = ExperimentConfig { output_dir: Some(dir.path().to_path_buf()), ..config.clone() };
        pool.install(|| run(&c)).unwrap();
        csvs.push(std::fs::read(dir.path().join("replications.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn power_runs_on_the_alternative() {
    let mut config = small(TestSpec::ModelSpec { g0: RegressionMap::Linear { a: 0.5 }, bw: 1.0 });
    config.experiment = ExperimentKind::McPower;
    assert!(matches!(run(&config), Err(Error::ConfigInvalid(_))));
    config.alt_model =
        Some(ProcessModel::nonlinear_ar1(RegressionMap::CosPerturbed { a: 0.5, amp: 0.5 }, Innovation::GaussianStd));
    config.m = 2;
    let report = run(&config).unwrap();
    assert_eq!(report.replications.len(), 2);
    assert!(report.rejection_rate.is_some());
}

#[test]
fn tanh_coupling_contracts_per_replicate() {
    let m = ProcessModel::nonlinear_ar1(RegressionMap::ScaledTanh { scale: 0.8 }, Innovation::GaussianStd);
    for i in 0..200u64 {
        let mut rng = stream(5, Purpose::InitialState, i);
        let (a0, b0) = (m.draw_innovation(&mut rng), 3.0 * m.draw_innovation(&mut rng));
        let (a, b) = simulate_coupled(&m, 25, derive_seed(5, Purpose::Coupling, i), a0, b0).unwrap();
        for r in 1..=25 {
            let gap = (a.values[r - 1] - b.values[r - 1]).abs();
            assert!(gap <= 0.8f64.powi(r as i32) * (a0 - b0).abs() * (1.0 + 1e-12));
        }
    }
    let p = estimate_tau_profile(&m, &[0, 1, 2, 3, 4, 5], 300, 6).unwrap();
    assert!(p.tau_hat.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn iid_coupling_vanishes() {
    let m = ProcessModel::iid(Innovation::Uniform { b: 1.0 }, 1);
    let p = estimate_tau_profile(&m, &[1, 2, 10], 50, 1).unwrap();
    assert!(p.tau_hat.iter().all(|t| *t == 0.0));
}

#[test]
fn non_contracting_models_are_rejected() {
    let m = ProcessModel::linear_ar1(0.5, Innovation::GaussianStd);
    let mut explosive = m.clone();
    explosive.params = vec![1.2];
    explosive.lip_const = 1.2;
    assert!(estimate_tau_profile(&explosive, &[0, 1], 10, 1).is_err());
}
