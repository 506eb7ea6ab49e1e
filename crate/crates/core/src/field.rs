//! Occupancy posterior, margin function and the generalized Newton projection.
//!
//! Sign convention: label `y = 1` means inside. The margin `U = P(y=1) - P(y=0)` is
//! positive inside the shape and negative outside, so the extracted surface is the
//! zero set of `U` and mesh normals point towards `U < 0`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffnet::{Network, NetworkConfig, ParamVector};
use crate::geom::{self, Vec3};
use crate::{Error, Result};

/// Lower bound for probabilities fed to a logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// Default lower bound on `‖∇U‖²` for a Newton step.
pub const GRAD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Radius of the initial occupied sphere, normalized units.
    pub sphere_radius: f64,
    /// Scale applied to the approximate signed distance in the two-logit head.
    pub logit_sharpness: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            sphere_radius: 0.5,
            logit_sharpness: 2.0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sphere_radius > 0.0 && self.sphere_radius.is_finite()) {
            return Err(Error::Config("init sphere radius must be positive".into()));
        }
        if !(self.logit_sharpness > 0.0 && self.logit_sharpness.is_finite()) {
            return Err(Error::Config("init logit sharpness must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyField {
    pub cfg: NetworkConfig,
    pub params: ParamVector,
}

/// `‖∇U‖²` fell below the guard; the step is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerateGradient {
    pub grad_norm_sq: f64,
}

/// `(P(y=1), P(y=0))` from the logits, max-subtracted.
#[inline]
pub fn softmax2(logits: [f64; 2]) -> (f64, f64) {
    let m = logits[0].max(logits[1]);
    let e1 = libm::exp(logits[0] - m);
    let e0 = libm::exp(logits[1] - m);
    let s = e1 + e0;
    (e1 / s, e0 / s)
}

/// Margin from the logit difference `z₁ - z₀`.
#[inline]
pub fn margin_from_diff(diff: f64) -> f64 {
    libm::tanh(0.5 * diff)
}

/// `dU/d(z₁ - z₀) = 2·P(y=1)·P(y=0)`.
#[inline]
pub fn margin_slope_from_logits(logits: [f64; 2]) -> f64 {
    let (p1, p0) = softmax2(logits);
    2.0 * p1 * p0
}

/// Newton update from the margin value and its spatial gradient.
#[inline]
pub fn newton_update(q: Vec3, u: f64, grad_u: Vec3, grad_eps: f64) -> core::result::Result<Vec3, DegenerateGradient> {
    let n2 = geom::norm_sq(grad_u);
    if !(n2 >= grad_eps) {
        return Err(DegenerateGradient { grad_norm_sq: n2 });
    }
    Ok(geom::sub(q, geom::scale(grad_u, u / n2)))
}

impl OccupancyField {
    pub fn new(cfg: NetworkConfig, params: ParamVector) -> Result<Self> {
        if params.len() != cfg.param_count() {
            return Err(Error::Config(alloc::format!(
                "parameter vector has {} entries, configuration needs {}",
                params.len(),
                cfg.param_count()
            )));
        }
        cfg.validate()?;
        Ok(OccupancyField { cfg, params })
    }

    pub fn network(&self) -> Network<'_> {
        Network::new(&self.cfg, self.params.as_slice()).expect("field invariants checked at construction")
    }

    pub fn logits(&self, x: Vec3) -> [f64; 2] {
        self.network().forward(x).logits
    }

    pub fn occupancy_prob(&self, x: Vec3) -> (f64, f64) {
        softmax2(self.logits(x))
    }

    pub fn margin(&self, x: Vec3) -> f64 {
        let z = self.logits(x);
        margin_from_diff(z[0] - z[1])
    }

    pub fn margin_gradient(&self, x: Vec3) -> Vec3 {
        let (z, g) = self.network().logits_and_gradient_batch(&[x], [1.0, -1.0]);
        geom::scale(g[0], margin_slope_from_logits(z[0]))
    }

    /// One generalized Newton step on `U` from `q`, guarded by [`GRAD_EPS`].
    pub fn newton_step(&self, q: Vec3) -> core::result::Result<Vec3, DegenerateGradient> {
        self.newton_step_with_eps(q, GRAD_EPS)
    }

    pub fn newton_step_with_eps(&self, q: Vec3, grad_eps: f64) -> core::result::Result<Vec3, DegenerateGradient> {
        let (z, g) = self.network().logits_and_gradient_batch(&[q], [1.0, -1.0]);
        let u = margin_from_diff(z[0][0] - z[0][1]);
        let grad_u = geom::scale(g[0], margin_slope_from_logits(z[0]));
        newton_update(q, u, grad_u, grad_eps)
    }

    /// Margins for many points.
    pub fn margin_batch(&self, points: &[Vec3]) -> Vec<f64> {
        self.network()
            .logits_batch(points)
            .into_iter()
            .map(|z| margin_from_diff(z[0] - z[1]))
            .collect()
    }

    /// Occupancy probabilities for many points.
    pub fn prob_batch(&self, points: &[Vec3]) -> Vec<(f64, f64)> {
        self.network().logits_batch(points).into_iter().map(softmax2).collect()
    }
}

/// Points used to fit the initial head.
const INIT_FIT_POINTS: usize = 4096;

/// Sphere-biased initialization.
///
/// Hidden layers get zero biases and `N(0, 2/width)` weights; the coordinate columns of
/// the skip layer start at zero so the hidden stack behaves like a plain MLP. A scalar
/// head `g` over the last hidden layer is then fitted by least squares to `‖x‖ - r` on
/// samples of `[-1, 1]³` and of the ball of radius `2r`, and the two logits are set to `∓s·g`.
///
/// The usual closed-form head (weights `√π/√width`, bias `-r`) only matches `‖x‖ - r`
/// in the wide-network limit; at the widths used here it misplaces the initial
/// boundary by up to half the radius along some directions.
pub fn geometric_init<R: Rng + ?Sized>(cfg: &NetworkConfig, init: &InitConfig, rng: &mut R) -> Result<ParamVector> {
    cfg.validate()?;
    init.validate()?;
    let layers = cfg.layers();
    let mut params = ParamVector::zeros(cfg);
    let hidden = layers.len() - 1;

    for shape in &layers[..hidden] {
        let std = libm::sqrt(2.0) / libm::sqrt(shape.outputs as f64);
        let normal = Normal::new(0.0, std).expect("positive std");
        let coord_start = if shape.takes_coords && shape.inputs > 3 {
            shape.inputs - 3
        } else {
            shape.inputs
        };
        let values = params.as_mut_slice();
        for r in 0..shape.outputs {
            for c in 0..shape.inputs {
                let w = normal.sample(rng);
                values[shape.weight_offset + r * shape.inputs + c] = if c < coord_start { w } else { 0.0 };
            }
        }
    }

    // half uniform in the cube, half at uniform radii in [0, 2r] to pin the boundary
    let points: Vec<Vec3> = (0..INIT_FIT_POINTS)
        .map(|i| {
            let p = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
            if i % 2 == 0 {
                return p;
            }
            let radius = 2.0 * init.sphere_radius * rng.random::<f64>();
            geom::normalized(p).map_or(p, |d| geom::scale(d, radius))
        })
        .collect();
    let target: Vec<f64> = points.iter().map(|p| geom::norm(*p) - init.sphere_radius).collect();
    let features = Network::new(cfg, params.as_slice())?.head_inputs(&points);
    let head = &layers[hidden];
    let g = least_squares_with_bias(&features, head.inputs, &target)?;

    let s = init.logit_sharpness;
    let values = params.as_mut_slice();
    for c in 0..head.inputs {
        values[head.weight_offset + c] = -s * g[c];
        values[head.weight_offset + head.inputs + c] = s * g[c];
    }
    values[head.bias_offset] = -s * g[head.inputs];
    values[head.bias_offset + 1] = s * g[head.inputs];
    Ok(params)
}

/// Ridge-stabilized least squares `[F; 1]ᵀ·w ≈ y` for `F` stored `rows × samples`.
/// Returns the `rows` weights followed by the intercept.
fn least_squares_with_bias(features: &[f64], rows: usize, y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    let d = rows + 1;
    let feature = |r: usize, j: usize| if r < rows { features[r * n + j] } else { 1.0 };
    let mut a = alloc::vec![0.0; d * d];
    let mut rhs = alloc::vec![0.0; d];
    for r in 0..d {
        for c in 0..=r {
            let v: f64 = (0..n).map(|j| feature(r, j) * feature(c, j)).sum();
            a[r * d + c] = v;
            a[c * d + r] = v;
        }
        rhs[r] = (0..n).map(|j| feature(r, j) * y[j]).sum();
    }
    let trace: f64 = (0..d).map(|i| a[i * d + i]).sum();
    for i in 0..d {
        a[i * d + i] += 1e-10 * trace / d as f64;
    }
    // Cholesky a = L·Lᵀ in place (lower triangle)
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) {
            return Err(Error::Numeric {
                iteration: 0,
                what: "initial head fit is singular".into(),
            });
        }
        let diag = libm::sqrt(diag);
        a[j * d + j] = diag;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / diag;
        }
    }
    for i in 0..d {
        let mut v = rhs[i];
        for k in 0..i {
            v -= a[i * d + k] * rhs[k];
        }
        rhs[i] = v / a[i * d + i];
    }
    for i in (0..d).rev() {
        let mut v = rhs[i];
        for k in i + 1..d {
            v -= a[k * d + i] * rhs[k];
        }
        rhs[i] = v / a[i * d + i];
    }
    Ok(rhs)
}
