use wcc_core::simulation::{
    generate_mean_population, generate_population, generate_regression_population, location_label, poisson_sample,
    run_monte_carlo, Method, Population, ScenarioSpec, SolverSettings, PI_FLOOR,
};

fn census(mut pop: Population) -> Population {
    for loc in &mut pop.locations {
        loc.pi = vec![1.0; loc.pi.len()];
    }
    pop
}

#[test]
fn unit_probabilities_give_a_census() {
    let pop = census(generate_population(&ScenarioSpec::mean_model(30.0, 3, 1), 0).unwrap());
    let data = poisson_sample(&pop, 3).unwrap();
    assert!(data.locations().iter().all(|b| b.n() == 120 && b.population_size() == 120.0));
}

#[test]
fn realized_sample_size_concentrates() {
    let spec = ScenarioSpec::mean_model(30.0, 4, 1);
    let pop = generate_population(&spec, 0).unwrap();
    let pis = pop.locations.iter().flat_map(|l| l.pi.iter().copied());
    let expected: f64 = pis.clone().sum();
    let var: f64 = pis.map(|p| p * (1.0 - p)).sum();
    let reps = 1000;
    let total: usize = (0..reps).map(|s| poisson_sample(&pop, 1000 + s).unwrap().total_n()).sum();
    let mean = total as f64 / reps as f64;
    let se = (var / reps as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean}, expected {expected}, se {se}");
}

#[test]
fn sampling_is_keyed_by_seed() {
    let spec = ScenarioSpec::regression(10.0, 5, 1);
    let pop = generate_population(&spec, 2).unwrap();
    assert_eq!(poisson_sample(&pop, 9).unwrap(), poisson_sample(&pop, 9).unwrap());
    assert_ne!(poisson_sample(&pop, 9).unwrap(), poisson_sample(&pop, 10).unwrap());
    assert_eq!(generate_population(&spec, 2).unwrap(), pop);
    assert_ne!(generate_population(&spec, 3).unwrap(), pop);
}

#[test]
fn group_labels_are_balanced() {
    let spec = ScenarioSpec::mean_model(30.0, 6, 1);
    let draws = 10_000;
    let mut counts = [0usize; 3];
    for k in 0..draws as u32 {
        counts[location_label(&spec, k / 49, k % 49)] += 1;
    }
    let se = (1.0 / 3.0 * (2.0 / 3.0) / draws as f64).sqrt();
    for c in counts {
        assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 3.0 * se, "{counts:?}");
    }
}

#[test]
fn probabilities_sum_to_expected_size_before_clamping() {
    for spec in [ScenarioSpec::mean_model(10.0, 7, 1), ScenarioSpec::regression(30.0, 7, 1)] {
        for rep in 0..5 {
            let pop = generate_population(&spec, rep).unwrap();
            for loc in &pop.locations {
                let total: f64 = loc.pi_unclamped.iter().sum();
                assert!((total - spec.expected_n).abs() < 1e-9);
                assert!(loc.pi.iter().all(|&p| (PI_FLOOR..=1.0).contains(&p)));
            }
        }
    }
}

#[test]
fn populations_follow_the_scenarios() {
    let spec = ScenarioSpec::regression(30.0, 8, 1);
    let pop = generate_regression_population(&spec, 0).unwrap();
    let truths = [[1.0, 1.0], [1.5, 1.5], [2.0, 2.0]];
    for loc in &pop.locations {
        assert_eq!(loc.params, truths[loc.label].to_vec());
        for h in 0..loc.y.len() {
            let mean = loc.x[(h, 0)] * loc.params[0] + loc.x[(h, 1)] * loc.params[1];
            assert!((loc.sigma[h] - 0.1 * (0.8 * mean).exp()).abs() < 1e-12);
            assert!((loc.y[h] - mean - loc.eps[h]).abs() < 1e-12);
        }
        if loc.label == 1 {
            assert!(loc.pi.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
    }
    assert!(generate_mean_population(&spec, 0).is_err());
    let mean = generate_mean_population(&ScenarioSpec::mean_model(30.0, 8, 1), 0).unwrap();
    assert!(mean.locations.iter().all(|l| l.x.iter().all(|&v| v == 1.0)));
}

#[test]
fn single_rep_summary_has_no_spread() {
    let spec = ScenarioSpec::mean_model(10.0, 9, 1);
    let res = run_monte_carlo(&spec, &SolverSettings::default(), &[Method::Wcc]).unwrap();
    let s = res.summary.method(Method::Wcc).unwrap();
    assert_eq!(s.reps_ok, 1);
    assert_eq!(s.k_sd, None);
    assert_eq!(s.ari_sd, None);
    assert_eq!(res.outcomes.len(), 1);
}
