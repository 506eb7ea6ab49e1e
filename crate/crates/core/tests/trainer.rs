//! Adam arithmetic, reproducibility and resumption of the training loop.

use occfit_core::cloud::PointCloud;
use occfit_core::diffnet::{Activation, NetworkConfig, ParamVector};
use occfit_core::objective::LossBreakdown;
use occfit_core::trainer::{self, AdamConfig, FitConfig, Silent, TrainObserver, TrainState};
use occfit_core::{geom, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..n)
        .map(|_| {
            let d = geom::normalized([0, 1, 2].map(|_| rng.random::<f64>() - 0.5)).unwrap();
            geom::scale(d, 0.25)
        })
        .collect();
    PointCloud::from_points(points).unwrap().normalize().unwrap()
}

fn small_config(iterations: u64) -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.network = NetworkConfig {
        num_hidden_layers: 2,
        hidden_width: 8,
        skip_layer_index: 1,
        activation: Activation::Softplus { beta: 100.0 },
    };
    cfg.trainer.n_iterations = iterations;
    cfg.trainer.batch_pairs = 64;
    cfg.trainer.batch_omega = 32;
    cfg.trainer.batch_cloud = Some(32);
    cfg.trainer.pool_pairs = 2000;
    cfg.trainer.pool_omega = 500;
    cfg.trainer.k = 11;
    cfg.trainer.log_every = 7;
    cfg.trainer.seed = 17;
    cfg
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let cfg = small_config(0).network;
    let params = ParamVector::new(&cfg, (0..cfg.param_count()).map(|i| i as f64 * 0.01).collect()).unwrap();
    let mut state = TrainState::new(params.clone(), 0);
    for _ in 0..3 {
        trainer::adam_step(&mut state, &vec![0.0; params.len()], 1e-3, &AdamConfig::default()).unwrap();
    }
    assert_eq!(state.params, params);
    assert_eq!(state.iteration, 3);
}

#[test]
fn first_adam_step_moves_by_the_learning_rate_against_the_sign() {
    let cfg = small_config(0).network;
    let n = cfg.param_count();
    let params = ParamVector::zeros(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..10.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    let mut state = TrainState::new(params, 0);
    let alpha = 1e-3;
    trainer::adam_step(&mut state, &g, alpha, &AdamConfig::default()).unwrap();
    for (p, g) in state.params.as_slice().iter().zip(&g) {
        assert!((p + alpha * g.signum()).abs() < alpha * 1e-6);
    }
}

#[test]
fn non_finite_gradients_are_rejected() {
    let cfg = small_config(0).network;
    let mut state = TrainState::new(ParamVector::zeros(&cfg), 0);
    let mut g = vec![0.0; cfg.param_count()];
    g[3] = f64::NAN;
    assert!(trainer::adam_step(&mut state, &g, 1e-3, &AdamConfig::default()).is_err());
}

#[test]
fn zero_iterations_return_the_initialization() {
    let cloud = sphere_cloud(200, 0);
    let cfg = small_config(0);
    let out = trainer::fit(&cloud, &cfg, &mut Silent).unwrap();
    let (_, init) = trainer::prepare(&cloud, &cfg).unwrap();
    assert_eq!(out.field.params, init);
    assert!(out.log.is_empty());
}

#[test]
fn identical_seeds_give_identical_runs_and_different_seeds_do_not() {
    let cloud = sphere_cloud(200, 1);
    let cfg = small_config(30);
    let a = trainer::fit(&cloud, &cfg, &mut Silent).unwrap();
    let b = trainer::fit(&cloud, &cfg, &mut Silent).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.log, b.log);
    let mut other = cfg.clone();
    other.trainer.seed += 1;
    let c = trainer::fit(&cloud, &other, &mut Silent).unwrap();
    assert_ne!(a.state.params, c.state.params);
}

#[derive(Default)]
struct Collect {
    logs: Vec<(u64, LossBreakdown)>,
    states: Vec<TrainState>,
}

impl TrainObserver for Collect {
    fn on_log(&mut self, iteration: u64, loss: &LossBreakdown) -> Result<()> {
        self.logs.push((iteration, *loss));
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<()> {
        self.states.push(state.clone());
        Ok(())
    }
}

#[test]
fn resuming_from_a_checkpoint_matches_the_straight_run() {
    let cloud = sphere_cloud(300, 2);
    let mut cfg = small_config(60);
    cfg.trainer.checkpoint_every = 30;
    let mut seen = Collect::default();
    let straight = trainer::fit(&cloud, &cfg, &mut seen).unwrap();
    assert_eq!(seen.states.len(), 2);
    let halfway = seen.states[0].clone();
    assert_eq!(halfway.iteration, 30);
    let resumed = trainer::resume(&cloud, &cfg, halfway, &mut Silent).unwrap();
    assert_eq!(resumed.state, straight.state);
    assert_eq!(seen.states[1], straight.state);
}

#[test]
fn log_rows_follow_the_schedule_and_cadence() {
    let cloud = sphere_cloud(200, 3);
    let cfg = small_config(20);
    let mut seen = Collect::default();
    let out = trainer::fit(&cloud, &cfg, &mut seen).unwrap();
    let iterations: Vec<u64> = seen.logs.iter().map(|(i, _)| *i).collect();
    assert_eq!(iterations, vec![0, 7, 14, 19]);
    assert_eq!(seen.logs, out.log);
    for (i, l) in &out.log {
        let expected = (-cfg.schedule.kappa * *i as f64 / cfg.schedule.time_unit as f64).exp();
        assert!((l.lambda - expected).abs() < 1e-12);
        assert_eq!(l.total, l.l_samp + l.lambda * l.l_entr);
    }
}

#[test]
fn invalid_configurations_fail_before_training() {
    let cloud = sphere_cloud(50, 4);
    let mut cfg = small_config(5);
    cfg.trainer.k = 1;
    assert!(trainer::fit(&cloud, &cfg, &mut Silent).is_err());
    let mut cfg = small_config(5);
    cfg.trainer.batch_cloud = Some(51);
    assert!(trainer::fit(&cloud, &cfg, &mut Silent).is_err());
    let mut cfg = small_config(5);
    cfg.trainer.learning_rate = 0.0;
    assert!(trainer::fit(&cloud, &cfg, &mut Silent).is_err());
}
