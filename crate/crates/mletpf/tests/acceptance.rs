//! Acceptance suite: one test per shipping criterion.  Each test prints a
//! single `criterion N (...): PASS/FAIL` line with the measured numbers
//! (run with `--nocapture` to see them on success) and then asserts.

mod common;

use std::time::Instant;

use common::{
    enumerated_vertex_cost, min_cost_flow_cost, permutation_min_cost, random_cost,
    random_integer_instance, random_points, random_weights, seeded,
};
use mletpf::filter::{
    mletpf_step, multilevel_estimate, run_filter, CouplingMode, LevelSchedule, MultilevelState,
    TestFunctional,
};
use mletpf::harness::{
    generate_twin_data, run_consistency_study, run_cost_accuracy_study, run_variance_decay_study,
    ExperimentConfig,
};
use mletpf::models::{ModelSpec, NoisePath};
use mletpf::ot::{
    coupling_cost, solve_assignment, solve_transport, solve_transport_1d_between, CostMatrix,
    DiscreteMarginal,
};
use mletpf::transform::{
    random_resample, seamless_couple, standard_recouple, CoupledPair, WeightedEnsemble,
};
use ndarray::{array, Array1, Array2, Axis};
use rand::Rng;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn weighted_mean(e: &WeightedEnsemble) -> Array1<f64> {
    let mut mean = Array1::<f64>::zeros(e.dim());
    for (row, &w) in e.states().rows().into_iter().zip(e.weights().weights()) {
        mean.scaled_add(w, &row);
    }
    mean
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Fitted moment-RMSE slopes over ensemble sizes 2^4..2^12 stay within
/// -0.5 +- 0.15 for the mean, variance, third, and fourth posterior moments
/// of the seamless-coupled coarse ensemble, in under two minutes.
#[test]
fn criterion_1_gaussian_moment_consistency() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        experiment: "consistency".into(),
        seed: 5,
        reps: 10,
        ..Default::default()
    };
    let result = run_consistency_study(&cfg).unwrap();

    let slopes: Vec<f64> = ["mean", "variance", "third_moment", "fourth_moment"]
        .iter()
        .map(|name| {
            result
                .metric("seamless", &format!("slope_rmse_{name}"))
                .unwrap()
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let slopes_ok = slopes.iter().all(|s| (-0.65..=-0.35).contains(s));
    let ok = slopes_ok && elapsed < 120.0;
    println!(
        "criterion 1 (gaussian moment consistency): {} — RMSE slopes {:?} \
         (required within [-0.65, -0.35]), {:.1}s (limit 120s)",
        verdict(ok),
        slopes,
        elapsed
    );
    assert!(ok, "slopes {slopes:?}, {elapsed:.1}s");
}

/// Both couplings return ensembles whose uniform means match the weighted
/// means of their inputs to 1e-9, across 500 random pairs with up to 64
/// particles in up to 5 dimensions, in under a minute.
#[test]
fn criterion_2_mean_preservation() {
    let start = Instant::now();
    let mut rng = seeded(12);
    let mut worst = 0.0_f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=64);
        let d = rng.random_range(1..=5);
        let pair = CoupledPair::new(
            WeightedEnsemble::new(random_points(&mut rng, n, d), random_weights(&mut rng, n))
                .unwrap(),
            WeightedEnsemble::new(random_points(&mut rng, n, d), random_weights(&mut rng, n))
                .unwrap(),
        )
        .unwrap();
        let coarse_mean = weighted_mean(pair.coarse());
        let fine_mean = weighted_mean(pair.fine());

        for outputs in [
            seamless_couple(&pair).unwrap(),
            standard_recouple(&pair).unwrap(),
        ] {
            let (coarse_out, fine_out) = outputs;
            worst = worst
                .max(max_abs_diff(
                    &coarse_out.mean_axis(Axis(0)).unwrap(),
                    &coarse_mean,
                ))
                .max(max_abs_diff(
                    &fine_out.mean_axis(Axis(0)).unwrap(),
                    &fine_mean,
                ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-9 && elapsed < 60.0;
    println!(
        "criterion 2 (mean preservation): {} — worst mean error {:.2e} over 500 \
         pairs, both couplings (tolerance 1e-9), {:.1}s (limit 60s)",
        verdict(ok),
        worst,
        elapsed
    );
    assert!(ok, "worst {worst:.2e}, {elapsed:.1}s");
}

/// The fast solvers agree with independent oracles to relative 1e-10: the
/// monotone 1-D solver against the transportation simplex on 200 instances,
/// the simplex against exact min-cost flow (and exhaustive basis enumeration
/// where that is tractable) on 100 instances up to 7x7, and the assignment
/// solver against permutation enumeration on 100 instances up to 7x7, all in
/// under a minute.
#[test]
fn criterion_3_transport_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = seeded(33);

    let mut worst_1d = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=16);
        let m = rng.random_range(2..=16);
        let source: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let target: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = random_weights(&mut rng, n);
        let q = random_weights(&mut rng, m);
        let cost = CostMatrix::new(Array2::from_shape_fn((n, m), |(i, j)| {
            (source[i] - target[j]) * (source[i] - target[j])
        }))
        .unwrap();
        let monotone = coupling_cost(
            &solve_transport_1d_between(&source, &target, &p, &q).unwrap(),
            &cost,
        )
        .unwrap();
        let simplex = coupling_cost(&solve_transport(&p, &q, &cost).unwrap(), &cost).unwrap();
        worst_1d = worst_1d.max((monotone - simplex).abs() / simplex.abs().max(1.0));
    }

    let mut worst_flow = 0.0_f64;
    let mut worst_enum = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=7);
        let m = rng.random_range(2..=7);
        let (supplies, demands, p, q) = random_integer_instance(&mut rng, n, m);
        let cost = random_cost(&mut rng, n, m);
        let simplex = coupling_cost(&solve_transport(&p, &q, &cost).unwrap(), &cost).unwrap();
        let flow = min_cost_flow_cost(&supplies, &demands, cost.view());
        worst_flow = worst_flow.max((simplex - flow).abs() / flow.abs().max(1.0));
        if n <= 4 && m <= 4 {
            let brute = enumerated_vertex_cost(p.weights(), q.weights(), cost.view());
            worst_enum = worst_enum.max((simplex - brute).abs() / brute.abs().max(1.0));
        }
    }
    for _ in 0..40 {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(2..=4);
        let p = random_weights(&mut rng, n);
        let q = random_weights(&mut rng, m);
        let cost = random_cost(&mut rng, n, m);
        let simplex = coupling_cost(&solve_transport(&p, &q, &cost).unwrap(), &cost).unwrap();
        let brute = enumerated_vertex_cost(p.weights(), q.weights(), cost.view());
        worst_enum = worst_enum.max((simplex - brute).abs() / brute.abs().max(1.0));
    }

    let mut worst_assignment = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=7);
        let cost = random_cost(&mut rng, n, n);
        let hungarian = solve_assignment(&cost).unwrap().cost(&cost).unwrap();
        let brute = permutation_min_cost(cost.view());
        worst_assignment = worst_assignment.max((hungarian - brute).abs() / brute.abs().max(1.0));
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst_1d <= 1e-10
        && worst_flow <= 1e-10
        && worst_enum <= 1e-10
        && worst_assignment <= 1e-10
        && elapsed < 60.0;
    println!(
        "criterion 3 (transport oracle equivalence): {} — relative gaps: 1-D vs \
         simplex {:.1e}, simplex vs min-cost flow {:.1e}, simplex vs basis \
         enumeration {:.1e}, assignment vs permutations {:.1e} (tolerance 1e-10), \
         {:.1}s (limit 60s)",
        verdict(ok),
        worst_1d,
        worst_flow,
        worst_enum,
        worst_assignment,
        elapsed
    );
    assert!(ok, "{worst_1d:.1e} {worst_flow:.1e} {worst_enum:.1e} {worst_assignment:.1e}");
}

/// On the three-variable chaotic model, four coupled levels, 200 steps, and
/// three pinned-seed repetitions: the seamless coupling's fitted variance
/// decay is at least 1.6, the standard recoupling's at most 1.4, and the
/// seamless pair variance is strictly smaller at every level, within ten
/// minutes.
#[test]
fn criterion_4_lorenz63_variance_decay() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        experiment: "variance-decay".into(),
        model: "lorenz63".into(),
        steps: 200,
        reps: 3,
        seed: 11,
        levels: 4,
        base_samples: 256,
        ..Default::default()
    };
    let result = run_variance_decay_study(&cfg).unwrap();

    let beta_seamless = result.metric("seamless", "beta").unwrap();
    let beta_standard = result.metric("standard", "beta").unwrap();
    let traces_seamless = result.metric_values("seamless", "mean_trace_v");
    let traces_standard = result.metric_values("standard", "mean_trace_v");
    let dominated = traces_seamless
        .iter()
        .zip(&traces_standard)
        .filter(|(s, t)| s < t)
        .count();

    let elapsed = start.elapsed().as_secs_f64();
    let ok = beta_seamless >= 1.6
        && beta_standard <= 1.4
        && dominated == cfg.levels
        && elapsed < 600.0;
    println!(
        "criterion 4 (variance decay, lorenz63): {} — seamless beta {:.3} (needs \
         >= 1.6), standard beta {:.3} (needs <= 1.4), seamless variance below \
         standard at {}/{} levels, {:.1}s (limit 600s)",
        verdict(ok),
        beta_seamless,
        beta_standard,
        dominated,
        cfg.levels,
        elapsed
    );
    assert!(
        ok,
        "beta {beta_seamless:.3}/{beta_standard:.3}, dominated {dominated}/{}, {elapsed:.1}s",
        cfg.levels
    );
}

/// On the 40-variable model with radius-zero localisation, 200 steps: both
/// couplings reach a fitted decay of at least 1.6 and the seamless pair
/// variance is no larger than the standard one at every level, within
/// fifteen minutes.
#[test]
fn criterion_5_lorenz96_localised_variance_decay() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        experiment: "variance-decay".into(),
        model: "lorenz96".into(),
        rloc: Some(0),
        steps: 200,
        reps: 3,
        seed: 11,
        levels: 4,
        base_samples: 256,
        ..Default::default()
    };
    let result = run_variance_decay_study(&cfg).unwrap();

    let beta_seamless = result.metric("seamless", "beta").unwrap();
    let beta_standard = result.metric("standard", "beta").unwrap();
    let traces_seamless = result.metric_values("seamless", "mean_trace_v");
    let traces_standard = result.metric_values("standard", "mean_trace_v");
    let not_larger = traces_seamless
        .iter()
        .zip(&traces_standard)
        .filter(|(s, t)| s <= t)
        .count();

    let elapsed = start.elapsed().as_secs_f64();
    let ok = beta_seamless >= 1.6
        && beta_standard >= 1.6
        && not_larger == cfg.levels
        && elapsed < 900.0;
    println!(
        "criterion 5 (variance decay, localised lorenz96): {} — seamless beta \
         {:.3}, standard beta {:.3} (both need >= 1.6), seamless variance not \
         larger at {}/{} levels, {:.1}s (limit 900s)",
        verdict(ok),
        beta_seamless,
        beta_standard,
        not_larger,
        cfg.levels,
        elapsed
    );
    assert!(
        ok,
        "beta {beta_seamless:.3}/{beta_standard:.3}, not larger {not_larger}/{}, {elapsed:.1}s",
        cfg.levels
    );
}

/// Forward-model cost against the accuracy target scales like eps^-3 (+-0.4)
/// for the single-level filter and eps^-2 (+-0.4) for the seamless
/// multilevel filter on the localised 40-variable model.
#[test]
fn criterion_6_cost_scaling() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        experiment: "cost-accuracy".into(),
        model: "lorenz96".into(),
        rloc: Some(0),
        epsilons: vec![0.5, 0.35, 0.25, 0.18],
        modes: vec!["single".into(), "seamless".into()],
        steps: 100,
        reps: 3,
        seed: 11,
        use_reference: false,
        ..Default::default()
    };
    let result = run_cost_accuracy_study(&cfg).unwrap();

    let single = result.metric("single", "cost_exponent").unwrap();
    let seamless = result.metric("seamless", "cost_exponent").unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let ok = (-3.4..=-2.6).contains(&single) && (-2.4..=-1.6).contains(&seamless);
    println!(
        "criterion 6 (cost scaling): {} — fitted flop exponents: single-level \
         {:.3} (required within [-3.4, -2.6]), seamless multilevel {:.3} \
         (required within [-2.4, -1.6]), {:.1}s",
        verdict(ok),
        single,
        seamless,
        elapsed
    );
    assert!(ok, "exponents {single:.3}/{seamless:.3}");
}

/// Always-on invariants: plan feasibility and vertex sparsity, weight
/// normalisation, the two telescoping collapse identities, resampling
/// unbiasedness, and the exactness of the coarse/fine noise coupling.
#[test]
fn criterion_7_invariant_bundle() {
    let start = Instant::now();
    let mut rng = seeded(77);
    let mut failures: Vec<String> = Vec::new();

    for _ in 0..50 {
        let n = rng.random_range(2..=16);
        let m = rng.random_range(2..=16);
        let p = random_weights(&mut rng, n);
        let q = random_weights(&mut rng, m);
        let plan = solve_transport(&p, &q, &random_cost(&mut rng, n, m)).unwrap();
        let feasible = plan
            .row_sums()
            .iter()
            .zip(p.weights())
            .chain(plan.col_sums().iter().zip(q.weights()))
            .all(|(&got, &want)| (got - want).abs() <= 1e-9 * want)
            && plan.entries().iter().all(|&(_, _, mass)| mass >= 0.0);
        if !feasible {
            failures.push(format!("infeasible plan at {n}x{m}"));
        }
        let bound = 2 * n.max(m) - 1;
        if plan.entries().len() > bound {
            failures.push(format!(
                "{} entries at {n}x{m}, sparsity bound {bound}",
                plan.entries().len()
            ));
        }
    }

    for _ in 0..50 {
        let n = rng.random_range(1..=32);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0)).collect();
        let total: f64 = DiscreteMarginal::normalized(raw).unwrap().weights().iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            failures.push(format!("normalised weights sum to {total}"));
        }
    }

    {
        let spec = ModelSpec::linear_test(0.5, 0.25, 2);
        let dt = spec.base_step();
        let r = Array2::eye(2) * 0.25;
        let (_, obs) = generate_twin_data(&spec, 2, dt, 6, &r, 99).unwrap();
        let single = LevelSchedule::single(0, 16, spec.base_step(), dt, 1.0).unwrap();
        let multi = LevelSchedule::multilevel(vec![16], spec.base_step(), dt, 1.0).unwrap();
        let run = |schedule| {
            run_filter(&spec, schedule, &obs, CouplingMode::Seamless, None,
                TestFunctional::Identity, 2024)
            .unwrap()
        };
        if run(&single).estimates != run(&multi).estimates {
            failures.push("zero-pair hierarchy differs from the single-level filter".into());
        }
    }

    {
        let states = random_points(&mut rng, 8, 3);
        let coarse = WeightedEnsemble::uniform(random_points(&mut rng, 16, 3)).unwrap();
        let pair = CoupledPair::new(
            WeightedEnsemble::uniform(states.clone()).unwrap(),
            WeightedEnsemble::uniform(states).unwrap(),
        )
        .unwrap();
        let with_pair = MultilevelState::new(coarse.clone(), vec![pair]).unwrap();
        let without = MultilevelState::new(coarse, vec![]).unwrap();
        let y = array![0.2, -0.1, 0.4];
        let r = Array2::eye(3) * 0.5;
        let gap = max_abs_diff(
            &multilevel_estimate(&with_pair, TestFunctional::Identity),
            &multilevel_estimate(&without, TestFunctional::Identity),
        );
        if gap > 1e-12 {
            failures.push(format!("identical pair shifts the estimate by {gap:.1e}"));
        }
        let stepped =
            mletpf_step(&with_pair, y.view(), r.view(), CouplingMode::Seamless, None).unwrap();
        let spread = stepped.pairs()[0]
            .fine()
            .states()
            .iter()
            .zip(stepped.pairs()[0].coarse().states().iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        if spread > 1e-12 {
            failures.push(format!("identical pair splits by {spread:.1e} after a step"));
        }
    }

    {
        let states = array![[-2.0], [-0.5], [0.1], [1.4], [3.0]];
        let weights = random_weights(&mut rng, 5);
        let target: f64 = states
            .column(0)
            .iter()
            .zip(weights.weights())
            .map(|(x, w)| x * w)
            .sum();
        let ensemble = WeightedEnsemble::new(states, weights).unwrap();
        let draws = 10_000;
        let mut means = Vec::with_capacity(draws);
        for _ in 0..draws {
            let out = random_resample(&ensemble, &mut rng).unwrap();
            means.push(out.column(0).mean().unwrap());
        }
        let grand = means.iter().sum::<f64>() / draws as f64;
        let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
            / (draws - 1) as f64;
        let standard_error = (var / draws as f64).sqrt();
        if (grand - target).abs() > 3.0 * standard_error {
            failures.push(format!(
                "resample mean {grand:.6} vs target {target:.6} exceeds 3 x SE {standard_error:.1e}"
            ));
        }
    }

    {
        let path = NoisePath::sample(3, 8, 2.0_f64.powi(-8), &mut rng);
        for t in 0..4 {
            let coarse = path.coarse_increment(t);
            let a = path.fine_increment(2 * t);
            let b = path.fine_increment(2 * t + 1);
            for k in 0..3 {
                if coarse[k] != a[k] + b[k] {
                    failures.push(format!("noise increment mismatch at ({t}, {k})"));
                }
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = failures.is_empty();
    println!(
        "criterion 7 (invariant bundle): {} — feasibility, sparsity, \
         normalisation, collapse identities, resample unbiasedness, noise \
         coupling{}{}, {:.1}s",
        verdict(ok),
        if ok { "" } else { ": " },
        failures.join("; "),
        elapsed
    );
    assert!(ok, "{failures:?}");
}
