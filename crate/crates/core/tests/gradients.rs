//! Engine derivatives against the scalar oracle and central finite differences.

mod oracle;

use occfit_core::cloud::QueryPair;
use occfit_core::diffnet::{self, Activation, Network, NetworkConfig, ParamVector};
use occfit_core::field::OccupancyField;
use occfit_core::objective::{self, SamplingOptions};
use oracle::{fd_gradient, max_rel_err, ScalarMlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(hidden: usize, width: usize, skip: usize, activation: Activation) -> NetworkConfig {
    NetworkConfig {
        num_hidden_layers: hidden,
        hidden_width: width,
        skip_layer_index: skip,
        activation,
    }
}

fn random_params(cfg: &NetworkConfig, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..cfg.param_count()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n).map(|_| [0, 1, 2].map(|_| rng.random::<f64>() - 0.5)).collect()
}

fn oracle_for<'a>(cfg: &NetworkConfig, params: &'a [f64]) -> ScalarMlp<'a> {
    ScalarMlp {
        hidden_layers: cfg.num_hidden_layers,
        width: cfg.hidden_width,
        skip: cfg.skip_layer_index,
        beta: match cfg.activation {
            Activation::Softplus { beta } => Some(beta),
            Activation::Relu => None,
        },
        params,
    }
}

fn configs() -> Vec<NetworkConfig> {
    vec![
        config(2, 8, 1, Activation::Softplus { beta: 10.0 }),
        config(3, 6, 2, Activation::Softplus { beta: 100.0 }),
        config(1, 12, 0, Activation::Softplus { beta: 3.0 }),
        config(0, 4, 0, Activation::Softplus { beta: 3.0 }),
    ]
}

#[test]
fn batched_forward_and_jacobian_match_the_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cfg in configs().into_iter().chain([config(3, 8, 1, Activation::Relu)]) {
        let params = random_params(&cfg, 0.8, &mut rng);
        let net = Network::new(&cfg, &params).unwrap();
        let oracle = oracle_for(&cfg, &params);
        let points = random_points(50, &mut rng);
        let batch = net.logits_batch(&points);
        for (x, z) in points.iter().zip(&batch) {
            let o = oracle.eval(*x);
            let rec = net.eval_with_jacobian(*x);
            let jac = rec.spatial_jacobian.unwrap();
            for k in 0..2 {
                assert!((z[k] - o.logits[k]).abs() < 1e-10, "{cfg:?}");
                assert!((rec.logits[k] - o.logits[k]).abs() < 1e-10);
                for j in 0..3 {
                    assert!((jac[k][j] - o.jac[k][j]).abs() < 1e-10, "{cfg:?}");
                }
            }
        }
    }
}

#[test]
fn spatial_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for cfg in configs() {
        let params = ParamVector::new(&cfg, random_params(&cfg, 0.8, &mut rng)).unwrap();
        for x in random_points(10, &mut rng) {
            let jac = diffnet::spatial_gradient(&params, &cfg, x).unwrap();
            let h = 1e-6;
            for j in 0..3 {
                let (mut up, mut down) = (x, x);
                up[j] += h;
                down[j] -= h;
                let zu = diffnet::forward(&params, &cfg, up).unwrap().logits;
                let zd = diffnet::forward(&params, &cfg, down).unwrap().logits;
                for k in 0..2 {
                    let fd = (zu[k] - zd[k]) / (2.0 * h);
                    assert!((fd - jac[k][j]).abs() < 1e-4 * fd.abs().max(1.0), "{cfg:?}");
                }
            }
        }
    }
}

fn random_pairs(n: usize, rng: &mut ChaCha8Rng) -> Vec<QueryPair> {
    (0..n)
        .map(|_| {
            let target = [0, 1, 2].map(|_| 0.6 * rng.random::<f64>() - 0.3);
            let query = [0, 1, 2].map(|k| target[k] + 0.1 * (rng.random::<f64>() - 0.5));
            QueryPair { query, target }
        })
        .collect()
}

#[test]
fn sampling_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for cfg in configs() {
        assert!(cfg.param_count() <= 1000);
        let raw = random_params(&cfg, 0.8, &mut rng);
        let pairs = random_pairs(40, &mut rng);
        let field = OccupancyField::new(cfg.clone(), ParamVector::new(&cfg, raw.clone()).unwrap()).unwrap();
        let term = objective::sampling_loss(&field, &pairs, SamplingOptions::default()).unwrap();
        let tuples: Vec<_> = pairs.iter().map(|p| (p.query, p.target)).collect();
        let value = oracle_for(&cfg, &raw).sampling_loss(&tuples);
        assert!((term.value - value).abs() < 1e-9 * value.abs().max(1.0), "{cfg:?}");
        let fd = fd_gradient(&raw, 1e-6, |p| oracle_for(&cfg, p).sampling_loss(&tuples));
        let err = max_rel_err(&term.gradient, &fd, 1e-3);
        assert!(err < 1e-4, "{cfg:?}: relative error {err:e}");
    }
}

#[test]
fn entropy_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for cfg in configs() {
        let raw = random_params(&cfg, 0.8, &mut rng);
        let free = random_points(30, &mut rng);
        let surface = random_points(20, &mut rng);
        let field = OccupancyField::new(cfg.clone(), ParamVector::new(&cfg, raw.clone()).unwrap()).unwrap();
        let term = objective::entropy_loss(&field, &free, &surface).unwrap();
        let value = oracle_for(&cfg, &raw).entropy_loss(&free, &surface);
        assert!((term.value - value).abs() < 1e-10, "{cfg:?}");
        let fd = fd_gradient(&raw, 1e-6, |p| oracle_for(&cfg, p).entropy_loss(&free, &surface));
        let err = max_rel_err(&term.gradient, &fd, 1e-3);
        assert!(err < 1e-4, "{cfg:?}: relative error {err:e}");
    }
}
