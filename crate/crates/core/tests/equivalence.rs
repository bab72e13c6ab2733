use seesaw_core::equivalence::{
    assumption1_monitor, check_lemma_contractions, check_lemma_inv_lambda, compare_procedures, compare_procedures_with,
    ComparisonOptions, EquivalenceError,
};
use seesaw_core::nsgd::{nsgd_evolve, NsgdMode};
use seesaw_core::problem::{make_power_law_spectrum, ProblemInstance, Spectrum};
use seesaw_core::schedules::{check_divergence_guard, GuardStatus, OptimizerFamily, ScheduleSpec};

fn reference() -> ProblemInstance {
    let spectrum = make_power_law_spectrum(8, 1.0, 1.0).unwrap();
    ProblemInstance::with_deterministic_init(spectrum, 1.0, vec![1.0; 8]).unwrap()
}

fn sgd(problem: &ProblemInstance, alpha: f64, beta: f64, phases: usize) -> ScheduleSpec {
    let eta = 0.9 * problem.max_theorem_lr();
    ScheduleSpec::new(eta, 1.0, alpha, beta, vec![20_000; phases], OptimizerFamily::Sgd).unwrap()
}

#[test]
fn identical_schedules_give_unit_ratios() {
    let p = reference();
    let s = sgd(&p, 2.0, 1.0, 3);
    let r = compare_procedures(&p, &s, &s, OptimizerFamily::Sgd, 1.0).unwrap();
    assert!(r.phases.iter().all(|ph| ph.ratio == 1.0));
    assert_eq!(r.band_constant, 1.0);
    assert!(r.product_matched);
}

#[test]
fn sgd_matched_products_stay_in_a_band() {
    let p = reference();
    let a = sgd(&p, 2.0, 2.0, 4);
    let b = sgd(&p, 4.0, 1.0, 4);
    let r = compare_procedures(&p, &a, &b, OptimizerFamily::Sgd, 1.01).unwrap();
    assert_eq!(r.phases.len(), 4);
    assert!(r.ratio_min > 0.0);
    assert!(r.band_constant <= 10.0, "{}", r.band_constant);
    let c = r.sandwich_constant.unwrap();
    assert!(r.sandwich_holds(c));
    assert!(a.phases().iter().zip(b.phases()).all(|(x, y)| x.samples == y.samples));
}

#[test]
fn nsgd_aggressive_pair_stays_in_a_band() {
    let p = reference();
    let eta = 0.5 * p.max_theorem_lr();
    let a = ScheduleSpec::new(eta, 4.0, 2f64.sqrt(), 2.0, vec![8000; 4], OptimizerFamily::Nsgd).unwrap();
    let b = ScheduleSpec::new(eta, 4.0, 2.0, 1.0, vec![8000; 4], OptimizerFamily::Nsgd).unwrap();
    let r = compare_procedures(&p, &a, &b, OptimizerFamily::Nsgd, 1.01).unwrap();
    assert!(r.band_constant <= 10.0, "{}", r.band_constant);
    assert!((r.a.product - 2.0).abs() < 1e-12 && (r.b.product - 2.0).abs() < 1e-12);
}

#[test]
fn mismatched_products_and_budgets_are_rejected() {
    let p = reference();
    let a = sgd(&p, 2.0, 2.0, 3);
    let b = sgd(&p, 3.0, 1.0, 3);
    assert!(matches!(
        compare_procedures(&p, &a, &b, OptimizerFamily::Sgd, 1.0),
        Err(EquivalenceError::ProductMismatch { .. })
    ));
    let c = sgd(&p, 4.0, 1.0, 2);
    assert!(compare_procedures(&p, &a, &c, OptimizerFamily::Sgd, 1.0).is_err());
}

#[test]
fn broken_product_drifts_across_phases() {
    let p = reference();
    let eta = 0.9 * p.max_theorem_lr();
    let samples: Vec<u64> = (0..5).map(|k| 20_000 << k).collect();
    let a = ScheduleSpec::new(eta, 1.0, 3.0, 1.0, samples.clone(), OptimizerFamily::Sgd).unwrap();
    let b = ScheduleSpec::new(eta, 1.0, 2.0, 2.0, samples, OptimizerFamily::Sgd).unwrap();
    let options = ComparisonOptions {
        enforce_product: false,
        ..ComparisonOptions::default()
    };
    let r = compare_procedures_with(&p, &a, &b, OptimizerFamily::Sgd, &options).unwrap();
    assert!(!r.product_matched);
    assert!(r.drift >= 2.0, "drift {}", r.drift);
}

#[test]
fn assumption1_grows_on_divergent_nsgd() {
    let p = ProblemInstance::with_deterministic_init(Spectrum::new(vec![1.0]).unwrap(), 1.0, vec![1.0]).unwrap();
    assert_eq!(
        check_divergence_guard(1.0, 4.0, OptimizerFamily::Nsgd),
        GuardStatus::WillDiverge
    );
    let s = ScheduleSpec::new(
        0.009,
        1.0,
        1.0,
        4.0,
        (0..10).map(|k| 100u64 << (2 * k)).collect(),
        OptimizerFamily::Nsgd,
    )
    .unwrap();
    let traj = nsgd_evolve(&p, &s, NsgdMode::VarianceDominated).unwrap();
    let report = assumption1_monitor(&traj, 1.0, traj.first_cut_step().unwrap()).unwrap();
    let per_phase = &report.per_phase;
    let tail = &per_phase[per_phase.len() - 3..];
    assert!(tail.windows(2).all(|w| w[1] > w[0]), "{per_phase:?}");
    assert!(report.observed_c > 10.0);
}

#[test]
fn lemma_checks_on_a_scalar() {
    let spectrum = Spectrum::new(vec![1.0]).unwrap();
    let inv = check_lemma_inv_lambda(0.01, 1.0, 0, &spectrum).unwrap();
    assert!(inv.pass);
    assert!(check_lemma_inv_lambda(0.02, 1.0, 0, &spectrum).is_err());

    let c = check_lemma_contractions(0.005, 2f64.sqrt(), 2.0, 2.0, 2f64.sqrt(), 3, &spectrum).unwrap();
    assert!(c.pass && !c.right_identical);
    let same = check_lemma_contractions(0.005, 2.0, 2.0, 1.0, 1.0, 3, &spectrum).unwrap();
    assert!(same.pass && same.right_identical);
}
