//! Training losses: the Newton-step sampling loss, entropy polarization and their
//! λ-weighted sum.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use crate::cloud::QueryPair;
use crate::diffnet::{HeadAdjoint, PointObjective, SpatialAdjoint};
use crate::field::{self, OccupancyField, GRAD_EPS, PROB_EPS};
use crate::geom::{self, Vec3};
use crate::{Error, Result};

/// Exponential decay of the entropy weight: `λ(i) = λ₀·exp(-κ·i/time_unit)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub kappa: f64,
    /// Iterations per schedule tick.
    pub time_unit: u64,
    pub lambda0: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kappa: 1.84e-2,
            time_unit: 100,
            lambda0: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config("kappa must be positive".into()));
        }
        if self.time_unit == 0 {
            return Err(Error::Config("time_unit must be at least 1".into()));
        }
        if !self.lambda0.is_finite() {
            return Err(Error::Config("lambda0 must be finite".into()));
        }
        Ok(())
    }
}

pub fn lambda_at(schedule: &ScheduleConfig, iteration: u64) -> f64 {
    schedule.lambda0 * libm::exp(-schedule.kappa * iteration as f64 / schedule.time_unit as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingOptions {
    /// Minimum `‖∇U‖²` for a pair to contribute.
    pub grad_eps: f64,
    /// Treat `∇U/‖∇U‖²` as a constant when differentiating (no second-order path).
    pub freeze_newton_direction: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            grad_eps: GRAD_EPS,
            freeze_newton_direction: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_samp: f64,
    pub l_entr: f64,
    pub lambda: f64,
    pub total: f64,
    pub skipped_degenerate: usize,
}

/// A loss value with its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Pairs excluded by the gradient guard (sampling loss only).
    pub skipped: usize,
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy(prob: (f64, f64)) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * libm::log(p) } else { 0.0 };
    term(prob.0) + term(prob.1)
}

/// Entropy with both probabilities clamped to `[ε, 1-ε]` before the logarithm.
pub fn clamped_entropy(prob: (f64, f64)) -> f64 {
    let c = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (a, b) = (c(prob.0), c(prob.1));
    -a * libm::log(a) - b * libm::log(b)
}

/// Mean squared distance between the Newton-projected queries and their targets.
pub struct SamplingObjective<'a> {
    pub pairs: &'a [QueryPair],
    pub options: SamplingOptions,
    skipped: Cell<usize>,
}

impl<'a> SamplingObjective<'a> {
    pub fn new(pairs: &'a [QueryPair], options: SamplingOptions) -> Self {
        SamplingObjective {
            pairs,
            options,
            skipped: Cell::new(0),
        }
    }

    pub fn queries(&self) -> Vec<Vec3> {
        self.pairs.iter().map(|p| p.query).collect()
    }

    pub fn skipped(&self) -> usize {
        self.skipped.get()
    }
}

impl PointObjective for SamplingObjective<'_> {
    fn spatial_seed(&self) -> Option<[f64; 2]> {
        Some([1.0, -1.0])
    }

    fn evaluate(&self, logits: &[[f64; 2]], spatial: Option<&[Vec3]>) -> Result<HeadAdjoint> {
        let grads = spatial.expect("sampling loss needs the spatial gradient");
        let n = self.pairs.len();
        let mut logit_adjoint = vec![[0.0; 2]; n];
        let mut directions = vec![[0.0; 3]; n];
        let mut sum = 0.0;
        let mut used = 0usize;
        // First pass: values; adjoints are scaled by 1/used afterwards.
        for (i, pair) in self.pairs.iter().enumerate() {
            let z = logits[i];
            let diff = z[0] - z[1];
            let u = field::margin_from_diff(diff);
            let slope = field::margin_slope_from_logits(z);
            let g = grads[i];
            let grad_u = geom::scale(g, slope);
            let Ok(projected) = field::newton_update(pair.query, u, grad_u, self.options.grad_eps) else {
                continue;
            };
            used += 1;
            let e = geom::sub(projected, pair.target);
            sum += geom::norm_sq(e);

            let g2 = geom::norm_sq(g);
            let eg = geom::dot(e, g);
            if self.options.freeze_newton_direction {
                // step = U·n with n fixed, dU/dd = slope
                let n2 = geom::norm_sq(grad_u);
                let en = geom::dot(e, grad_u) / n2;
                let dd = -2.0 * en * slope;
                logit_adjoint[i] = [dd, -dd];
            } else {
                // step = ρ(d)·g/‖g‖² with ρ = U/U' = sinh d
                let rho = u / slope;
                let dd = -2.0 * libm::cosh(diff) * eg / g2;
                logit_adjoint[i] = [dd, -dd];
                let a = -2.0 * rho / g2;
                let b = 4.0 * rho * eg / (g2 * g2);
                directions[i] = geom::add(geom::scale(e, a), geom::scale(g, b));
            }
        }
        self.skipped.set(n - used);
        if used == 0 {
            return Err(Error::Stall { iteration: 0, batch: n });
        }
        let inv = 1.0 / used as f64;
        for a in &mut logit_adjoint {
            a[0] *= inv;
            a[1] *= inv;
        }
        let tangent = if self.options.freeze_newton_direction {
            None
        } else {
            for d in &mut directions {
                *d = geom::scale(*d, inv);
            }
            Some(SpatialAdjoint {
                seed: [1.0, -1.0],
                directions,
            })
        };
        Ok(HeadAdjoint {
            value: sum * inv,
            logit_adjoint,
            tangent,
        })
    }
}

/// Mean entropy over the first `split` points minus mean entropy over the rest.
pub struct EntropyObjective {
    pub split: usize,
}

impl PointObjective for EntropyObjective {
    fn spatial_seed(&self) -> Option<[f64; 2]> {
        None
    }

    fn evaluate(&self, logits: &[[f64; 2]], _spatial: Option<&[Vec3]>) -> Result<HeadAdjoint> {
        let n = logits.len();
        let (n_free, n_cloud) = (self.split, n - self.split);
        if n_free == 0 || n_cloud == 0 {
            return Err(Error::Argument("entropy loss needs non-empty free-space and cloud batches".into()));
        }
        let mut free = 0.0;
        let mut surf = 0.0;
        let mut logit_adjoint = Vec::with_capacity(n);
        for (i, z) in logits.iter().enumerate() {
            let (p1, p0) = field::softmax2(*z);
            let h = clamped_entropy((p1, p0));
            // dH/d(z₁ - z₀) = -(z₁ - z₀)·p₁·p₀
            let dh = -(z[0] - z[1]) * p1 * p0;
            let w = if i < n_free {
                free += h;
                1.0 / n_free as f64
            } else {
                surf += h;
                -1.0 / n_cloud as f64
            };
            logit_adjoint.push([w * dh, -w * dh]);
        }
        Ok(HeadAdjoint {
            value: free / n_free as f64 - surf / n_cloud as f64,
            logit_adjoint,
            tangent: None,
        })
    }
}

pub fn sampling_loss(field: &OccupancyField, pairs: &[QueryPair], options: SamplingOptions) -> Result<LossTerm> {
    if pairs.is_empty() {
        return Err(Error::Argument("sampling loss needs a non-empty pair batch".into()));
    }
    let objective = SamplingObjective::new(pairs, options);
    let g = field.network().objective_gradient(&objective.queries(), &objective)?;
    Ok(LossTerm {
        value: g.value,
        gradient: g.gradient,
        skipped: objective.skipped(),
    })
}

pub fn entropy_loss(field: &OccupancyField, omega: &[Vec3], cloud: &[Vec3]) -> Result<LossTerm> {
    if omega.is_empty() || cloud.is_empty() {
        return Err(Error::Argument("entropy loss needs non-empty batches".into()));
    }
    let mut points = Vec::with_capacity(omega.len() + cloud.len());
    points.extend_from_slice(omega);
    points.extend_from_slice(cloud);
    let g = field
        .network()
        .objective_gradient(&points, &EntropyObjective { split: omega.len() })?;
    Ok(LossTerm {
        value: g.value,
        gradient: g.gradient,
        skipped: 0,
    })
}

/// `L_samp + λ(iteration)·L_entr` with its gradient.
pub fn total_loss(
    field: &OccupancyField,
    pairs: &[QueryPair],
    omega: &[Vec3],
    cloud: &[Vec3],
    schedule: &ScheduleConfig,
    iteration: u64,
    options: SamplingOptions,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let samp = sampling_loss(field, pairs, options)?;
    let entr = entropy_loss(field, omega, cloud)?;
    let lambda = lambda_at(schedule, iteration);
    let mut gradient = samp.gradient;
    for (g, e) in gradient.iter_mut().zip(&entr.gradient) {
        *g += lambda * e;
    }
    let breakdown = LossBreakdown {
        l_samp: samp.value,
        l_entr: entr.value,
        lambda,
        total: samp.value + lambda * entr.value,
        skipped_degenerate: samp.skipped,
    };
    Ok((breakdown, gradient))
}
