//! Closed-form network evaluations, parameter layout and structural properties.

use occfit_core::diffnet::{
    self, Activation, HeadAdjoint, Network, NetworkConfig, ParamVector, PointObjective, SpatialAdjoint,
};
use occfit_core::{Result, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear() -> NetworkConfig {
    NetworkConfig {
        num_hidden_layers: 0,
        hidden_width: 4,
        skip_layer_index: 0,
        activation: Activation::default(),
    }
}

fn small(skip: usize) -> NetworkConfig {
    NetworkConfig {
        num_hidden_layers: 3,
        hidden_width: 6,
        skip_layer_index: skip,
        activation: Activation::Softplus { beta: 10.0 },
    }
}

fn random_params(cfg: &NetworkConfig, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..cfg.param_count()).map(|_| rng.random::<f64>() - 0.5).collect();
    ParamVector::new(cfg, v).unwrap()
}

#[test]
fn zero_network_outputs_zero_logits_and_jacobian() {
    let cfg = NetworkConfig::default();
    let params = ParamVector::zeros(&cfg);
    for x in [[0.0, 0.0, 0.0], [0.3, -0.7, 2.0]] {
        assert_eq!(diffnet::forward(&params, &cfg, x).unwrap().logits, [0.0, 0.0]);
        assert_eq!(diffnet::spatial_gradient(&params, &cfg, x).unwrap(), [[0.0; 3]; 2]);
    }
}

#[test]
fn head_biases_pass_through_a_zero_weight_network() {
    let cfg = small(2);
    let mut params = ParamVector::zeros(&cfg);
    let head = *cfg.layers().last().unwrap();
    params.as_mut_slice()[head.bias_offset] = 3.0;
    params.as_mut_slice()[head.bias_offset + 1] = -1.0;
    let z = diffnet::forward(&params, &cfg, [0.9, -0.1, 0.4]).unwrap().logits;
    assert_eq!(z, [3.0, -1.0]);
}

#[test]
fn single_affine_layer_jacobian_is_its_weight_matrix() {
    let cfg = linear();
    let mut params = ParamVector::zeros(&cfg);
    params.as_mut_slice()[0] = 2.0; // z₁ = 2x₁
    for x in [[0.0, 0.0, 0.0], [0.5, 0.1, -3.0]] {
        let j = diffnet::spatial_gradient(&params, &cfg, x).unwrap();
        assert_eq!(j, [[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    }
}

#[test]
fn skip_layer_with_zero_coordinate_columns_matches_the_plain_network() {
    let with_skip = small(2);
    let plain = small(0);
    let skipped = random_params(&with_skip, 5);
    let mut values = Vec::with_capacity(plain.param_count());
    for (ls, lp) in with_skip.layers().iter().zip(plain.layers()) {
        let src = skipped.as_slice();
        for r in 0..ls.outputs {
            let row = &src[ls.weight_offset + r * ls.inputs..][..ls.inputs];
            values.extend_from_slice(&row[..lp.inputs]);
        }
        values.extend_from_slice(&src[ls.bias_offset..ls.end()]);
    }
    let mut zeroed = skipped.clone();
    let skip_layer = with_skip.layers()[2];
    assert!(skip_layer.takes_coords);
    for r in 0..skip_layer.outputs {
        for c in skip_layer.inputs - 3..skip_layer.inputs {
            zeroed.as_mut_slice()[skip_layer.weight_offset + r * skip_layer.inputs + c] = 0.0;
        }
    }
    let plain_params = ParamVector::new(&plain, values).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let x = [0, 1, 2].map(|_| rng.random::<f64>() - 0.5);
        let a = diffnet::forward(&zeroed, &with_skip, x).unwrap().logits;
        let b = diffnet::forward(&plain_params, &plain, x).unwrap().logits;
        assert_eq!(a, b);
    }
}

/// Value `Σ z₁(xᵢ)`.
struct FirstLogit;

impl PointObjective for FirstLogit {
    fn spatial_seed(&self) -> Option<[f64; 2]> {
        None
    }

    fn evaluate(&self, logits: &[[f64; 2]], _spatial: Option<&[Vec3]>) -> Result<HeadAdjoint> {
        Ok(HeadAdjoint {
            value: logits.iter().map(|z| z[0]).sum(),
            logit_adjoint: vec![[1.0, 0.0]; logits.len()],
            tangent: None,
        })
    }
}

/// Value `Σ ‖∂z₁/∂x‖²`.
struct FirstLogitSlope;

impl PointObjective for FirstLogitSlope {
    fn spatial_seed(&self) -> Option<[f64; 2]> {
        Some([1.0, 0.0])
    }

    fn evaluate(&self, logits: &[[f64; 2]], spatial: Option<&[Vec3]>) -> Result<HeadAdjoint> {
        let g = spatial.unwrap();
        Ok(HeadAdjoint {
            value: g.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>()).sum(),
            logit_adjoint: vec![[0.0, 0.0]; logits.len()],
            tangent: Some(SpatialAdjoint {
                seed: [1.0, 0.0],
                directions: g.iter().map(|v| v.map(|c| 2.0 * c)).collect(),
            }),
        })
    }
}

#[test]
fn linear_logit_gradient_is_the_input_and_unit_bias() {
    let cfg = linear();
    let params = random_params(&cfg, 1);
    let x0 = [0.3, -0.2, 0.7];
    let g = diffnet::parameter_gradient(&params, &cfg, &FirstLogit, &[x0]).unwrap();
    assert_eq!(&g.gradient[0..3], &x0);
    assert_eq!(&g.gradient[3..6], &[0.0; 3]);
    assert_eq!(&g.gradient[6..8], &[1.0, 0.0]);
}

#[test]
fn squared_slope_gradient_is_twice_the_weight_row() {
    let cfg = linear();
    let params = random_params(&cfg, 2);
    let w = &params.as_slice()[0..3];
    let g = diffnet::parameter_gradient(&params, &cfg, &FirstLogitSlope, &[[0.1, 0.2, 0.3]]).unwrap();
    for k in 0..3 {
        assert!((g.gradient[k] - 2.0 * w[k]).abs() < 1e-15);
    }
    assert!(g.gradient[3..].iter().all(|v| *v == 0.0));
}

#[test]
fn squared_slope_gradient_matches_finite_differences_on_a_deep_network() {
    let cfg = small(1);
    let params = random_params(&cfg, 3);
    let points = [[0.1, -0.2, 0.05], [0.4, 0.3, -0.1]];
    let g = diffnet::parameter_gradient(&params, &cfg, &FirstLogitSlope, &points).unwrap();
    let value = |p: &[f64]| {
        let pv = ParamVector::new(&cfg, p.to_vec()).unwrap();
        points
            .iter()
            .map(|x| {
                let j = diffnet::spatial_gradient(&pv, &cfg, *x).unwrap()[0];
                j.iter().map(|c| c * c).sum::<f64>()
            })
            .sum::<f64>()
    };
    let h = 1e-6;
    let mut p = params.as_slice().to_vec();
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let up = value(&p);
        p[k] = orig - h;
        let down = value(&p);
        p[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - g.gradient[k]).abs() / fd.abs().max(1e-3);
        assert!(err < 1e-4, "param {k}: engine {} fd {fd}", g.gradient[k]);
    }
}

#[test]
fn evaluation_is_bitwise_deterministic_and_batch_independent() {
    let cfg = small(2);
    let params = random_params(&cfg, 4);
    let net = Network::new(&cfg, params.as_slice()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points: Vec<Vec3> = (0..37).map(|_| [0, 1, 2].map(|_| rng.random::<f64>())).collect();
    let batch = net.logits_batch(&points);
    assert_eq!(batch, net.logits_batch(&points));
    for (x, z) in points.iter().zip(&batch) {
        assert_eq!(net.forward(*x).logits, *z);
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = small(3);
    assert!(cfg.validate().is_err());
    cfg.skip_layer_index = 1;
    cfg.hidden_width = 2;
    assert!(cfg.validate().is_err());
    assert!(ParamVector::new(&linear(), vec![0.0; 3]).is_err());
    assert!(ParamVector::new(&linear(), vec![f64::NAN; 8]).is_err());
}

proptest! {
    #[test]
    fn affine_network_has_constant_jacobian(
        w in prop::collection::vec(-2.0f64..2.0, 8),
        x in prop::array::uniform3(-5.0f64..5.0),
        y in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let cfg = linear();
        let params = ParamVector::new(&cfg, w).unwrap();
        let a = diffnet::spatial_gradient(&params, &cfg, x).unwrap();
        let b = diffnet::spatial_gradient(&params, &cfg, y).unwrap();
        prop_assert_eq!(a, b);
    }
}
