use super::*;
use crate::data::{generate_sampled, Bounds};
use crate::model::{ModelConfig, ModelKind, TrainOptions};

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[test]
fn sphere_converges_in_full_mode() {
    let cfg = CmaConfig {
        sigma0: 0.5,
        max_generations: 200,
        mode: CovarianceMode::Full,
        seed: 1,
        ..CmaConfig::default()
    };
    let res = cma_es_minimize(sphere, &[1.0; 10], &cfg).unwrap();
    assert!(res.best_fitness < 1e-6, "{}", res.best_fitness);
    assert!(res.history.len() <= 200);
}

#[test]
fn translated_ellipsoid_converges_in_diagonal_mode() {
    let n = 20;
    let ellipsoid = |x: &[f64]| {
        x.iter()
            .enumerate()
            .map(|(i, v)| 10f64.powf(6.0 * i as f64 / (n - 1) as f64) * (v - i as f64 / n as f64).powi(2))
            .sum::<f64>()
    };
    let cfg = CmaConfig {
        sigma0: 0.5,
        max_generations: 500,
        mode: CovarianceMode::Diagonal,
        seed: 2,
        ..CmaConfig::default()
    };
    let res = cma_es_minimize(ellipsoid, &vec![0.0; n], &cfg).unwrap();
    assert!(res.best_fitness < 1e-4, "{}", res.best_fitness);
}

#[test]
fn best_so_far_never_increases() {
    let cfg = CmaConfig {
        sigma0: 2.0,
        max_generations: 60,
        seed: 3,
        ..CmaConfig::default()
    };
    let res = cma_es_minimize(|x: &[f64]| (x[0] - 3.0).abs().sqrt(), &[0.0], &cfg).unwrap();
    for w in res.history.windows(2) {
        assert!(w[1].best_so_far <= w[0].best_so_far);
        assert!(w[1].best_so_far <= w[1].best_fitness);
    }
    assert!((res.best[0] - 3.0).abs() < 1e-3);
}

#[test]
fn collapsed_step_size_stops() {
    let cfg = CmaConfig {
        sigma0: 1e-13,
        ..CmaConfig::default()
    };
    let res = cma_es_minimize(sphere, &[1.0, 1.0], &cfg).unwrap();
    assert_eq!(res.stop, StopReason::SigmaCollapse);
    assert!(res.history.is_empty());
}

#[test]
fn all_non_finite_twice_aborts() {
    let res = cma_es_minimize(|_: &[f64]| f64::NAN, &[0.0; 3], &CmaConfig::default());
    assert!(matches!(res, Err(Error::ObjectiveDiverged)));
    let mut es = CmaEs::new(&[0.0; 3], &CmaConfig::default()).unwrap();
    let pop = es.ask();
    let mut f = vec![f64::INFINITY; pop.len()];
    f[0] = 1.0;
    es.ask();
    es.tell(&f).unwrap();
    es.ask();
    es.tell(&f).unwrap();
}

#[test]
fn optimizer_is_seed_deterministic_across_workers() {
    let cfg = CmaConfig {
        mode: CovarianceMode::Full,
        max_generations: 30,
        seed: 9,
        ..CmaConfig::default()
    };
    let a = parallel::with_workers(1, || cma_es_minimize(sphere, &[0.5; 6], &cfg).unwrap());
    let b = parallel::with_workers(4, || cma_es_minimize(sphere, &[0.5; 6], &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        CmaConfig { population: 1, ..CmaConfig::default() },
        CmaConfig { parents: Some(0), ..CmaConfig::default() },
        CmaConfig { parents: Some(17), ..CmaConfig::default() },
        CmaConfig { sigma0: 0.0, ..CmaConfig::default() },
    ];
    for cfg in bad {
        assert!(CmaEs::new(&[0.0], &cfg).is_err());
    }
    assert!(CmaEs::new(&[], &CmaConfig::default()).is_err());
}

struct Fixture {
    model: DynamicsModel,
    val: TransitionSet,
    planner: PlannerConfig,
    params: CartpoleParams,
    config: AttackConfig,
}

fn fixture() -> Fixture {
    let params = CartpoleParams::default();
    let bounds = Bounds::cartpole();
    let train = generate_sampled(&bounds, 600, 1, &params).unwrap();
    let val = generate_sampled(&bounds, 200, 2, &params).unwrap();
    let cfg = ModelConfig {
        kind: ModelKind::P,
        ensemble_size: 1,
        width: 8,
        learning_rate: 3e-3,
        batch_size: 32,
        epochs_full: 30,
        seed: 4,
        ..ModelConfig::default()
    };
    let mut model = DynamicsModel::new(cfg, 4, 1).unwrap();
    model.train(&train, &TrainOptions::default(), None).unwrap();
    let planner = PlannerConfig {
        horizon: 4,
        n_candidates: 16,
        n_elites: 4,
        cem_iterations: 2,
        ..PlannerConfig::default()
    };
    let config = AttackConfig {
        population: 6,
        max_generations: 3,
        trials_per_eval: 2,
        episode_horizon: 6,
        sigma0: Some(1e-4),
        seed: 5,
        ..AttackConfig::default()
    };
    Fixture {
        model,
        val,
        planner,
        params,
        config,
    }
}

#[test]
fn original_layer_scores_baseline_reward() {
    let f = fixture();
    let x0 = f.model.output_layer_params();
    let ll = mean_ll(&f.model, &f.val).unwrap();
    let e = fitness(&x0, &f.model, &f.val, &f.planner, &f.params, &f.config, ll).unwrap();
    let reward = mean_reward(&f.model, &f.planner, &f.params, &f.config.episode_seeds(), 6).unwrap();
    assert_eq!(e.fitness, reward);
    assert_eq!(e.ll, ll);
}

#[test]
fn hinge_is_zero_at_tolerance_boundary() {
    let f = fixture();
    let x: Vec<f64> = f.model.output_layer_params().iter().map(|v| v * 0.9).collect();
    let ll = mean_ll(&f.model.with_output_layer(&x).unwrap(), &f.val).unwrap();
    let baseline_ll = mean_ll(&f.model, &f.val).unwrap();
    let config = AttackConfig {
        ll_tolerance: baseline_ll - ll,
        ..f.config.clone()
    };
    let e = fitness(&x, &f.model, &f.val, &f.planner, &f.params, &config, baseline_ll).unwrap();
    assert_eq!(e.fitness, e.reward);
}

#[test]
fn zeroed_layer_is_penalized() {
    let f = fixture();
    let baseline_ll = mean_ll(&f.model, &f.val).unwrap();
    let zero = vec![0.0; f.model.output_layer_len()];
    let e = fitness(&zero, &f.model, &f.val, &f.planner, &f.params, &f.config, baseline_ll).unwrap();
    let reward = mean_reward(&f.model, &f.planner, &f.params, &f.config.episode_seeds(), 6).unwrap();
    assert!(e.ll < baseline_ll - f.config.ll_tolerance);
    assert!(e.fitness > reward);
}

#[test]
fn zero_generations_return_baseline() {
    let f = fixture();
    let config = AttackConfig {
        max_generations: 0,
        ..f.config.clone()
    };
    let res = attack(&f.model, &f.val, &f.params, &f.planner, &config).unwrap();
    assert_eq!(res.baseline, res.final_eval);
    assert_eq!(res.model.output_layer_params(), f.model.output_layer_params());
}

#[test]
fn attack_only_touches_output_layer() {
    let f = fixture();
    let before = f.model.clone();
    let res = attack(&f.model, &f.val, &f.params, &f.planner, &f.config).unwrap();
    assert!(f.model.networks().zip(before.networks()).all(|(a, b)| a == b));
    assert_eq!(res.history.len(), 3);
    assert!(res.final_eval.ll >= res.baseline.ll - f.config.ll_tolerance);
    for (a, b) in res.model.networks().zip(f.model.networks()) {
        let n = a.layers.len();
        assert_eq!(a.layers[..n - 1], b.layers[..n - 1]);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cma.csv");
    write_convergence_csv(&path, &res.history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("generation,best_fitness,sigma,reward,ll\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn impossible_tolerance_is_infeasible() {
    let f = fixture();
    let config = AttackConfig {
        ll_tolerance: 0.0,
        sigma0: Some(5.0),
        ..f.config.clone()
    };
    assert!(matches!(
        attack(&f.model, &f.val, &f.params, &f.planner, &config),
        Err(Error::AttackInfeasible)
    ));
}
