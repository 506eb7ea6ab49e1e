//! Fixed-architecture coordinate MLP with spatial and parameter gradients.
//!
//! The network maps a point `x ∈ R³` to two logits `(z₁, z₀)`, where `z₁` scores the
//! "inside" class. Hidden layers are dense with a shared activation; the input is
//! concatenated to the hidden state once more at `skip_layer_index` (0 disables that).
//!
//! # Parameter layout
//!
//! Parameters live in one flat vector, layer by layer from the input side. For every
//! layer the weight matrix comes first, row-major with shape `[outputs][inputs]`,
//! followed by the `outputs` biases. Layer `l` has `inputs = 3` for `l = 0`,
//! `hidden_width + 3` for the skip layer (hidden state first, then `x`), and
//! `hidden_width` otherwise. The final layer has two outputs: row 0 is `z₁`, row 1 is `z₀`.
//!
//! # Differentiation
//!
//! Batches are evaluated column-wise with dense matrix products. Parameter gradients
//! are reverse mode. Objectives that depend on the spatial gradient `∇ₓz` are handled by
//! pushing one forward-mode tangent along the objective's adjoint direction and then
//! running reverse mode over both the primal and tangent streams, which yields the exact
//! gradient of terms such as `‖∇ₓz‖²` with respect to the weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geom::Vec3;
use crate::math;
use crate::{Error, Result};

pub const INPUT_DIM: usize = 3;
pub const OUTPUT_DIM: usize = 2;

pub const DEFAULT_SOFTPLUS_BETA: f64 = 100.0;

/// Largest number of points pushed through the network at once by the chunked helpers.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `ln(1 + exp(βa)) / β`
    Softplus { beta: f64 },
    /// `max(0, a)`, with derivative 0 at `a = 0`.
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Softplus {
            beta: DEFAULT_SOFTPLUS_BETA,
        }
    }
}

impl Activation {
    /// Value and first derivative.
    #[inline]
    fn eval(self, a: f64) -> (f64, f64) {
        match self {
            Activation::Softplus { beta } => {
                let t = beta * a;
                let e = math::exp(-t.abs());
                let soft = math::ln_1p(e) / beta;
                if t > 0.0 {
                    (a + soft, 1.0 / (1.0 + e))
                } else {
                    (soft, e / (1.0 + e))
                }
            }
            Activation::Relu => {
                if a > 0.0 {
                    (a, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    /// Second derivative expressed through the first.
    #[inline]
    fn curvature(self, slope: f64) -> f64 {
        match self {
            Activation::Softplus { beta } => beta * slope * (1.0 - slope),
            Activation::Relu => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub num_hidden_layers: usize,
    pub hidden_width: usize,
    /// Hidden layer that receives `x` again next to the previous hidden state; 0 = none.
    /// With no hidden layers the network is a single affine map.
    pub skip_layer_index: usize,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_hidden_layers: 4,
            hidden_width: 32,
            skip_layer_index: 2,
            activation: Activation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    /// Whether the last three inputs of this layer are the raw coordinates.
    pub takes_coords: bool,
}

impl LayerShape {
    pub fn end(&self) -> usize {
        self.bias_offset + self.outputs
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_hidden_layers > 0 && self.hidden_width < 4 {
            return Err(Error::Config(format!(
                "hidden_width must be at least 4, got {}",
                self.hidden_width
            )));
        }
        if self.skip_layer_index > 0 && self.skip_layer_index >= self.num_hidden_layers {
            return Err(Error::Config(format!(
                "skip_layer_index {} must be below num_hidden_layers {}",
                self.skip_layer_index, self.num_hidden_layers
            )));
        }
        if let Activation::Softplus { beta } = self.activation {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::Config(format!("softplus beta must be positive, got {beta}")));
            }
        }
        Ok(())
    }

    /// Shapes of all layers, hidden layers first, output layer last.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::with_capacity(self.num_hidden_layers + 1);
        let mut offset = 0;
        for l in 0..=self.num_hidden_layers {
            let skip = self.skip_layer_index > 0 && l == self.skip_layer_index;
            let inputs = match l {
                0 => INPUT_DIM,
                _ if skip => self.hidden_width + INPUT_DIM,
                _ => self.hidden_width,
            };
            let outputs = if l == self.num_hidden_layers {
                OUTPUT_DIM
            } else {
                self.hidden_width
            };
            let shape = LayerShape {
                inputs,
                outputs,
                weight_offset: offset,
                bias_offset: offset + inputs * outputs,
                takes_coords: l == 0 || skip,
            };
            offset = shape.end();
            out.push(shape);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, LayerShape::end)
    }
}

/// Flat weights and biases in the canonical layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(cfg: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let expected = cfg.param_count();
        if values.len() != expected {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, configuration needs {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("parameter {i} is not finite")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(cfg: &NetworkConfig) -> Self {
        ParamVector(vec![0.0; cfg.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    /// `(z₁, z₀)`
    pub logits: [f64; 2],
    /// `∂logits/∂x`, row 0 for `z₁`.
    pub spatial_jacobian: Option<[Vec3; 2]>,
}

/// Per-sample adjoints handed back to the engine by a [`PointObjective`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAdjoint {
    pub value: f64,
    /// `∂value/∂(z₁, z₀)` per sample.
    pub logit_adjoint: Vec<[f64; 2]>,
    /// Spatial-gradient dependence: the value depends on `∇ₓ(seed·z)` with adjoint
    /// `directions[i]` at sample `i`.
    pub tangent: Option<SpatialAdjoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAdjoint {
    pub seed: [f64; 2],
    pub directions: Vec<Vec3>,
}

/// Scalar objective over a batch of points, expressed through the logits and,
/// optionally, the spatial gradient of one fixed combination `seed·z` of them.
pub trait PointObjective {
    /// Logit combination whose spatial gradient the objective reads.
    fn spatial_seed(&self) -> Option<[f64; 2]>;

    /// Value and adjoints. `spatial[i]` is `∇ₓ(seed·z)` at sample `i` when a seed is set.
    fn evaluate(&self, logits: &[[f64; 2]], spatial: Option<&[Vec3]>) -> Result<HeadAdjoint>;
}

/// Result of [`Network::objective_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Read-only view of a parameter vector under a configuration.
#[derive(Debug, Clone)]
pub struct Network<'a> {
    cfg: &'a NetworkConfig,
    params: &'a [f64],
    layers: Vec<LayerShape>,
}

/// Intermediate state of a batched forward pass.
struct Tape {
    batch: usize,
    /// Input matrix of every layer, `inputs × batch`.
    inputs: Vec<Vec<f64>>,
    /// Activation slopes of every hidden layer, `width × batch`.
    slopes: Vec<Vec<f64>>,
    logits: Vec<[f64; 2]>,
}

/// `c[m×n] = beta·c + a[m×k]·b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
    debug_assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the strides and extents are checked above against the slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            iteration: 0,
            what: format!("non-finite {what}"),
        })
    }
}

impl<'a> Network<'a> {
    pub fn new(cfg: &'a NetworkConfig, params: &'a [f64]) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg.layers();
        let expected = layers.last().map_or(0, LayerShape::end);
        if params.len() != expected {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, configuration needs {expected}",
                params.len()
            )));
        }
        Ok(Network { cfg, params, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        self.cfg
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    fn weights(&self, l: &LayerShape) -> &[f64] {
        &self.params[l.weight_offset..l.bias_offset]
    }

    fn biases(&self, l: &LayerShape) -> &[f64] {
        &self.params[l.bias_offset..l.end()]
    }

    fn coords_matrix(points: &[Vec3]) -> Vec<f64> {
        let b = points.len();
        let mut m = vec![0.0; INPUT_DIM * b];
        for (j, p) in points.iter().enumerate() {
            for k in 0..INPUT_DIM {
                m[k * b + j] = p[k];
            }
        }
        m
    }

    fn forward_tape(&self, points: &[Vec3]) -> Tape {
        let b = points.len();
        let coords = Self::coords_matrix(points);
        let act = self.cfg.activation;
        let hidden = self.layers.len() - 1;
        let width = self.cfg.hidden_width;

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(hidden);
        inputs.push(coords);

        for (l, shape) in self.layers.iter().enumerate().take(hidden) {
            let next = &self.layers[l + 1];
            let mut h = vec![0.0; next.inputs * b];
            gemm(
                shape.outputs,
                shape.inputs,
                b,
                self.weights(shape),
                (shape.inputs, 1),
                &inputs[l],
                (b, 1),
                0.0,
                &mut h,
                b,
            );
            let mut slope = vec![0.0; width * b];
            for (r, bias) in self.biases(shape).iter().enumerate() {
                let row = r * b..(r + 1) * b;
                for (out, s) in h[row.clone()].iter_mut().zip(&mut slope[row]) {
                    let (v, d) = act.eval(*out + bias);
                    *out = v;
                    *s = d;
                }
            }
            if next.takes_coords {
                h[width * b..].copy_from_slice(&inputs[0]);
            }
            slopes.push(slope);
            inputs.push(h);
        }

        let out_layer = &self.layers[hidden];
        let mut z = vec![0.0; OUTPUT_DIM * b];
        gemm(
            OUTPUT_DIM,
            out_layer.inputs,
            b,
            self.weights(out_layer),
            (out_layer.inputs, 1),
            &inputs[hidden],
            (b, 1),
            0.0,
            &mut z,
            b,
        );
        let bias = self.biases(out_layer);
        let logits = (0..b).map(|j| [z[j] + bias[0], z[b + j] + bias[1]]).collect();
        Tape {
            batch: b,
            inputs,
            slopes,
            logits,
        }
    }

    /// Gradient of `seed·z` with respect to the input coordinates, per sample.
    fn input_gradient(&self, tape: &Tape, seed: [f64; 2]) -> Vec<Vec3> {
        let b = tape.batch;
        let width = self.cfg.hidden_width;
        let hidden = self.layers.len() - 1;
        let mut grad = vec![[0.0; 3]; b];

        // Adjoint of the last hidden state is the same for every sample.
        let out_layer = &self.layers[hidden];
        let w = self.weights(out_layer);
        let mut upstream: Vec<f64> = vec![0.0; out_layer.inputs * b];
        for r in 0..out_layer.inputs {
            let g = seed[0] * w[r] + seed[1] * w[out_layer.inputs + r];
            upstream[r * b..(r + 1) * b].fill(g);
        }

        for l in (0..hidden).rev() {
            let shape = &self.layers[l];
            let next = &self.layers[l + 1];
            if next.takes_coords {
                for (k, row) in upstream[width * b..].chunks_exact(b).enumerate() {
                    for (g, v) in grad.iter_mut().zip(row) {
                        g[k] += v;
                    }
                }
            }
            let mut adj = upstream;
            adj.truncate(width * b);
            for (a, s) in adj.iter_mut().zip(&tape.slopes[l]) {
                *a *= s;
            }
            let mut below = vec![0.0; shape.inputs * b];
            gemm(
                shape.inputs,
                shape.outputs,
                b,
                self.weights(shape),
                (1, shape.inputs),
                &adj,
                (b, 1),
                0.0,
                &mut below,
                b,
            );
            upstream = below;
        }
        // Layer 0 consumes only the coordinates.
        for (k, row) in upstream.chunks_exact(b).enumerate() {
            for (g, v) in grad.iter_mut().zip(row) {
                g[k] += v;
            }
        }
        grad
    }

    /// Forward-mode tangents of every layer input along per-sample directions.
    /// Returns the tangent inputs and the tangent pre-activations of the hidden layers.
    fn tangent_pass(&self, tape: &Tape, directions: &[Vec3]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let b = tape.batch;
        let width = self.cfg.hidden_width;
        let hidden = self.layers.len() - 1;
        let dir = Self::coords_matrix(directions);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_tangents = Vec::with_capacity(hidden);
        inputs.push(dir);
        for l in 0..hidden {
            let shape = &self.layers[l];
            let mut pre = vec![0.0; shape.outputs * b];
            gemm(
                shape.outputs,
                shape.inputs,
                b,
                self.weights(shape),
                (shape.inputs, 1),
                &inputs[l],
                (b, 1),
                0.0,
                &mut pre,
                b,
            );
            let next = &self.layers[l + 1];
            let mut h = vec![0.0; next.inputs * b];
            for ((out, p), s) in h[..width * b].iter_mut().zip(&pre).zip(&tape.slopes[l]) {
                *out = p * s;
            }
            if next.takes_coords {
                h[width * b..].copy_from_slice(&inputs[0]);
            }
            pre_tangents.push(pre);
            inputs.push(h);
        }
        (inputs, pre_tangents)
    }

    /// Reverse pass over the primal stream and, when present, one tangent stream.
    fn reverse(
        &self,
        tape: &Tape,
        logit_adjoint: &[[f64; 2]],
        tangent: Option<(&[Vec<f64>], &[Vec<f64>], [f64; 2])>,
        grad: &mut [f64],
    ) {
        let b = tape.batch;
        let width = self.cfg.hidden_width;
        let hidden = self.layers.len() - 1;
        let act = self.cfg.activation;

        // Output-layer adjoints, 2 × b each.
        let mut adj_p = vec![0.0; OUTPUT_DIM * b];
        for (j, a) in logit_adjoint.iter().enumerate() {
            adj_p[j] = a[0];
            adj_p[b + j] = a[1];
        }
        let mut adj_t = tangent.map(|(_, _, seed)| {
            let mut m = vec![0.0; OUTPUT_DIM * b];
            m[..b].fill(seed[0]);
            m[b..].fill(seed[1]);
            m
        });

        for l in (0..=hidden).rev() {
            let shape = &self.layers[l];
            let (gw, rest) = grad[shape.weight_offset..shape.end()].split_at_mut(shape.bias_offset - shape.weight_offset);
            // dW += A_p · U_pᵀ (+ A_t · U_tᵀ)
            gemm(
                shape.outputs,
                b,
                shape.inputs,
                &adj_p,
                (b, 1),
                &tape.inputs[l],
                (1, b),
                1.0,
                gw,
                shape.inputs,
            );
            if let (Some(at), Some((tin, _, _))) = (&adj_t, tangent) {
                gemm(
                    shape.outputs,
                    b,
                    shape.inputs,
                    at,
                    (b, 1),
                    &tin[l],
                    (1, b),
                    1.0,
                    gw,
                    shape.inputs,
                );
            }
            for (gb, row) in rest.iter_mut().zip(adj_p.chunks_exact(b)) {
                *gb += row.iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }

            // Propagate to the hidden state below: U = Wᵀ A.
            let w = self.weights(shape);
            let mut up_p = vec![0.0; shape.inputs * b];
            gemm(shape.inputs, shape.outputs, b, w, (1, shape.inputs), &adj_p, (b, 1), 0.0, &mut up_p, b);
            let up_t = adj_t.as_ref().map(|at| {
                let mut m = vec![0.0; shape.inputs * b];
                gemm(shape.inputs, shape.outputs, b, w, (1, shape.inputs), at, (b, 1), 0.0, &mut m, b);
                m
            });

            // Through the activation of hidden layer l-1, in place on the first rows.
            let slope = &tape.slopes[l - 1];
            up_p.truncate(width * b);
            match (up_t, tangent) {
                (Some(mut ut), Some((_, pre_t, _))) => {
                    ut.truncate(width * b);
                    for (((p, t), &s), pt) in up_p.iter_mut().zip(&mut ut).zip(slope).zip(&pre_t[l - 1]) {
                        *p = *p * s + *t * act.curvature(s) * pt;
                        *t *= s;
                    }
                    adj_t = Some(ut);
                }
                _ => {
                    for (p, s) in up_p.iter_mut().zip(slope) {
                        *p *= s;
                    }
                }
            }
            adj_p = up_p;
        }
    }

    /// Inputs of the output layer, `features × points` with one row per feature.
    pub fn head_inputs(&self, points: &[Vec3]) -> Vec<f64> {
        self.forward_tape(points).inputs.pop().expect("output layer input")
    }

    /// Logits for a batch of points.
    pub fn logits_batch(&self, points: &[Vec3]) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            out.extend(self.forward_tape(chunk).logits);
        }
        out
    }

    /// Logits and, per sample, the spatial gradient of `seed·z`.
    pub fn logits_and_gradient_batch(&self, points: &[Vec3], seed: [f64; 2]) -> (Vec<[f64; 2]>, Vec<Vec3>) {
        let mut logits = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let tape = self.forward_tape(chunk);
            grads.extend(self.input_gradient(&tape, seed));
            logits.extend(tape.logits);
        }
        (logits, grads)
    }

    pub fn forward(&self, x: Vec3) -> EvalRecord {
        EvalRecord {
            logits: self.forward_tape(&[x]).logits[0],
            spatial_jacobian: None,
        }
    }

    pub fn eval_with_jacobian(&self, x: Vec3) -> EvalRecord {
        let tape = self.forward_tape(&[x]);
        let r1 = self.input_gradient(&tape, [1.0, 0.0])[0];
        let r0 = self.input_gradient(&tape, [0.0, 1.0])[0];
        EvalRecord {
            logits: tape.logits[0],
            spatial_jacobian: Some([r1, r0]),
        }
    }

    /// Value and exact parameter gradient of `objective` over `points`.
    pub fn objective_gradient(&self, points: &[Vec3], objective: &dyn PointObjective) -> Result<ObjectiveGradient> {
        let mut gradient = vec![0.0; self.params.len()];
        let value = self.accumulate_gradient(points, objective, 1.0, &mut gradient)?;
        Ok(ObjectiveGradient { value, gradient })
    }

    /// Adds `weight · ∇θ objective` to `gradient` and returns the objective value.
    pub fn accumulate_gradient(
        &self,
        points: &[Vec3],
        objective: &dyn PointObjective,
        weight: f64,
        gradient: &mut [f64],
    ) -> Result<f64> {
        if gradient.len() != self.params.len() {
            return Err(Error::Config("gradient buffer does not match the parameter count".into()));
        }
        let tape = self.forward_tape(points);
        if !tape.logits.iter().flatten().all(|z| z.is_finite()) {
            return Err(Error::Numeric {
                iteration: 0,
                what: "non-finite logits".into(),
            });
        }
        let spatial = objective.spatial_seed().map(|seed| self.input_gradient(&tape, seed));
        let head = objective.evaluate(&tape.logits, spatial.as_deref())?;
        if !head.value.is_finite() {
            return Err(Error::Numeric {
                iteration: 0,
                what: "non-finite objective value".into(),
            });
        }
        let mut adjoint = head.logit_adjoint;
        for a in &mut adjoint {
            a[0] *= weight;
            a[1] *= weight;
        }
        match head.tangent {
            Some(t) => {
                let dirs: Vec<Vec3> = t
                    .directions
                    .iter()
                    .map(|d| [d[0] * weight, d[1] * weight, d[2] * weight])
                    .collect();
                let (tin, tpre) = self.tangent_pass(&tape, &dirs);
                self.reverse(&tape, &adjoint, Some((&tin, &tpre, t.seed)), gradient);
            }
            None => self.reverse(&tape, &adjoint, None, gradient),
        }
        check_finite(gradient, "parameter gradient")?;
        Ok(head.value)
    }
}

/// Logits at `x` (jacobian not computed).
pub fn forward(params: &ParamVector, cfg: &NetworkConfig, x: Vec3) -> Result<EvalRecord> {
    Ok(Network::new(cfg, params.as_slice())?.forward(x))
}

/// `∂(z₁, z₀)/∂x` at `x`.
pub fn spatial_gradient(params: &ParamVector, cfg: &NetworkConfig, x: Vec3) -> Result<[Vec3; 2]> {
    let rec = Network::new(cfg, params.as_slice())?.eval_with_jacobian(x);
    Ok(rec.spatial_jacobian.expect("jacobian requested"))
}

/// Exact gradient of a batch objective with respect to every parameter.
pub fn parameter_gradient(
    params: &ParamVector,
    cfg: &NetworkConfig,
    objective: &dyn PointObjective,
    batch: &[Vec3],
) -> Result<ObjectiveGradient> {
    Network::new(cfg, params.as_slice())?.objective_gradient(batch, objective)
}
