use seesaw_core::montecarlo::{agreement_fraction, run_nsgd_trials, run_sgd_trials, McConfig};
use seesaw_core::nsgd::{nsgd_evolve, nsgd_evolve_phases, NsgdMode};
use seesaw_core::problem::{make_power_law_spectrum, ProblemInstance, Spectrum};
use seesaw_core::schedules::{OptimizerFamily, ScheduleSpec};
use seesaw_core::{dynamics::evolve_phases, evolve};

fn scalar() -> ProblemInstance {
    ProblemInstance::with_deterministic_init(Spectrum::new(vec![1.0]).unwrap(), 1.0, vec![1.0]).unwrap()
}

#[test]
fn scalar_constant_schedule_tracks_exact_engine() {
    let problem = scalar();
    let schedule = ScheduleSpec::constant(0.01, 4.0, vec![8000], OptimizerFamily::Sgd).unwrap();
    let exact = evolve(&problem, &schedule).unwrap();
    assert_eq!(exact.final_record().step, 2000);

    let mut config = McConfig::new(1000, 11);
    config.record_every = 20;
    let mc = run_sgd_trials(&problem, &schedule, &config).unwrap();
    assert_eq!(mc.records.len(), 101);
    assert_eq!(mc.realized_batches, vec![4]);
    assert_eq!(mc.phase_samples_consumed, vec![8000]);
    for r in &mc.records {
        let e = exact.record_at_step(r.step).unwrap();
        assert_eq!(r.samples, e.samples);
    }
    let frac = agreement_fraction(&mc, 3.0, |s| exact.record_at_step(s).map(|r| r.excess_risk));
    assert!(frac >= 0.99, "agreement {frac}");
}

#[test]
fn nsgd_seesaw_on_power_law_tracks_exact_engine() {
    let spectrum = make_power_law_spectrum(2, 1.0, 1.0).unwrap();
    let problem = ProblemInstance::with_deterministic_init(spectrum, 1.0, vec![1.0, 1.0]).unwrap();
    let schedule = ScheduleSpec::new(
        0.02,
        2.0,
        2f64.sqrt(),
        2.0,
        vec![1000, 1000, 1000],
        OptimizerFamily::Nsgd,
    )
    .unwrap();
    let exact = nsgd_evolve_phases(&problem, &schedule.integer_phases(), NsgdMode::VarianceDominated).unwrap();

    let mut config = McConfig::new(1000, 3);
    config.record_every = 5;
    let mc = run_nsgd_trials(&problem, &schedule, &config, NsgdMode::VarianceDominated).unwrap();
    assert_eq!(mc.realized_batches, vec![2, 4, 8]);
    let frac = agreement_fraction(&mc, 3.0, |s| exact.record_at_step(s).map(|r| r.excess_risk));
    assert!(frac >= 0.99, "agreement {frac}");
}

#[test]
fn full_denominator_starts_like_variance_dominated_from_optimum() {
    // m0 = 0: the mean and covariance terms vanish at step 0 and stay small
    // for a few steps.
    let spectrum = make_power_law_spectrum(4, 1.0, 1.0).unwrap();
    let problem = ProblemInstance::with_centered_init(spectrum, 1.0, vec![0.0; 4]).unwrap();
    let schedule = ScheduleSpec::constant(0.01, 16.0, vec![16 * 50], OptimizerFamily::Nsgd).unwrap();
    let vd = nsgd_evolve(&problem, &schedule, NsgdMode::VarianceDominated).unwrap();
    let fd = nsgd_evolve(&problem, &schedule, NsgdMode::FullDenominator).unwrap();
    assert_eq!(vd.records[1].excess_risk, fd.records[1].excess_risk);
    for step in 2..=5 {
        let a = vd.records[step].excess_risk;
        let b = fd.records[step].excess_risk;
        assert!((a - b).abs() <= 1e-3 * a, "step {step}: {a} vs {b}");
    }

    let mut config = McConfig::new(64, 1);
    config.record_every = 1;
    let mc_vd = run_nsgd_trials(&problem, &schedule, &config, NsgdMode::VarianceDominated).unwrap();
    let mc_fd = run_nsgd_trials(&problem, &schedule, &config, NsgdMode::FullDenominator).unwrap();
    assert_eq!(mc_vd.records[1].mean_excess_risk, mc_fd.records[1].mean_excess_risk);
}

#[test]
fn stderr_shrinks_like_inverse_sqrt_trials() {
    let spectrum = make_power_law_spectrum(8, 1.0, 1.0).unwrap();
    let problem = ProblemInstance::with_centered_init(spectrum, 1.0, vec![1.0; 8]).unwrap();
    let schedule = ScheduleSpec::constant(0.002, 2.0, vec![400], OptimizerFamily::Sgd).unwrap();
    let stderr: Vec<f64> = [250, 1000, 4000]
        .iter()
        .map(|&trials| {
            let mut config = McConfig::new(trials, 99);
            config.record_every = 200;
            run_sgd_trials(&problem, &schedule, &config)
                .unwrap()
                .final_record()
                .stderr_excess_risk
        })
        .collect();
    for w in stderr.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio / 2.0 - 1.0).abs() <= 0.2, "stderr ratio {ratio} ({stderr:?})");
    }
}

#[test]
fn seeds_are_reproducible_and_distinct() {
    let problem = scalar();
    let schedule = ScheduleSpec::new(0.05, 1.0, 2.0, 1.0, vec![50, 50], OptimizerFamily::Sgd).unwrap();
    let config = McConfig::new(40, 5);
    let a = run_sgd_trials(&problem, &schedule, &config).unwrap();
    let b = run_sgd_trials(
        &problem,
        &schedule,
        &McConfig {
            workers: Some(3),
            ..config.clone()
        },
    )
    .unwrap();
    let c = run_sgd_trials(&problem, &schedule, &McConfig { seed: 6, ..config }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.final_record().mean_excess_risk, c.final_record().mean_excess_risk);
}

#[test]
fn non_integer_batches_round_for_sampling() {
    let problem = scalar();
    let schedule = ScheduleSpec::new(
        0.01,
        1.0,
        2f64.powf(0.75),
        2f64.sqrt(),
        vec![30, 30, 30],
        OptimizerFamily::Sgd,
    )
    .unwrap();
    let mc = run_sgd_trials(&problem, &schedule, &McConfig::new(8, 0)).unwrap();
    // 1, 1.414, 2 round to 1, 1, 2.
    assert_eq!(mc.realized_batches, vec![1, 1, 2]);
    assert_eq!(mc.phase_samples_consumed, vec![30, 60, 90]);
    let exact = evolve_phases(&problem, &schedule.integer_phases()).unwrap();
    assert_eq!(exact.final_record().step, mc.final_record().step);
}
