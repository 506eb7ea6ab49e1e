//! Independent references for the tests: a straight-line scalar version of the
//! coordinate MLP and brute-force metrics.
//!
//! The MLP reference evaluates one point at a time with plain loops and carries forward-mode tangents
//! for the three input directions, so it shares no code with the batched engine.

#![allow(dead_code)]

pub mod brute;

/// (value, d/dx, d²/dx²) of softplus with sharpness `beta`.
fn softplus(a: f64, beta: f64) -> (f64, f64) {
    let t = beta * a;
    let v = if t > 30.0 { a } else { (1.0 + t.exp()).ln() / beta };
    let s = 1.0 / (1.0 + (-t).exp());
    (v, s)
}

pub struct ScalarMlp<'a> {
    pub hidden_layers: usize,
    pub width: usize,
    pub skip: usize,
    pub beta: Option<f64>,
    pub params: &'a [f64],
}

pub struct Output {
    pub logits: [f64; 2],
    /// `jac[k][j] = ∂z_k/∂x_j`
    pub jac: [[f64; 3]; 2],
}

impl ScalarMlp<'_> {
    fn act(&self, a: f64) -> (f64, f64) {
        match self.beta {
            Some(b) => softplus(a, b),
            None => {
                if a > 0.0 {
                    (a, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> Output {
        let mut offset = 0;
        // value plus tangents along e_0, e_1, e_2
        let mut h: Vec<[f64; 4]> = (0..3)
            .map(|k| {
                let mut t = [x[k], 0.0, 0.0, 0.0];
                t[k + 1] = 1.0;
                t
            })
            .collect();
        for l in 0..=self.hidden_layers {
            if l > 0 && self.skip > 0 && l == self.skip {
                for k in 0..3 {
                    let mut t = [x[k], 0.0, 0.0, 0.0];
                    t[k + 1] = 1.0;
                    h.push(t);
                }
            }
            let n_in = h.len();
            let n_out = if l == self.hidden_layers { 2 } else { self.width };
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next = Vec::with_capacity(n_out);
            for r in 0..n_out {
                let mut acc = [b[r], 0.0, 0.0, 0.0];
                for c in 0..n_in {
                    for s in 0..4 {
                        acc[s] += w[r * n_in + c] * h[c][s];
                    }
                }
                if l < self.hidden_layers {
                    let (v, d) = self.act(acc[0]);
                    acc = [v, d * acc[1], d * acc[2], d * acc[3]];
                }
                next.push(acc);
            }
            h = next;
        }
        assert_eq!(offset, self.params.len(), "parameter count mismatch");
        Output {
            logits: [h[0][0], h[1][0]],
            jac: [[h[0][1], h[0][2], h[0][3]], [h[1][1], h[1][2], h[1][3]]],
        }
    }

    /// Margin `tanh((z₁-z₀)/2)` and its spatial gradient.
    pub fn margin(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let o = self.eval(x);
        let d = o.logits[0] - o.logits[1];
        let u = (0.5 * d).tanh();
        let s = 0.5 * (1.0 - u * u);
        let g = [0, 1, 2].map(|j| s * (o.jac[0][j] - o.jac[1][j]));
        (u, g)
    }

    /// Mean over pairs of ‖q - U∇U/‖∇U‖² - p‖².
    pub fn sampling_loss(&self, pairs: &[([f64; 3], [f64; 3])]) -> f64 {
        let mut sum = 0.0;
        for (q, p) in pairs {
            let (u, g) = self.margin(*q);
            let n2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            let mut e2 = 0.0;
            for k in 0..3 {
                let e = q[k] - u * g[k] / n2 - p[k];
                e2 += e * e;
            }
            sum += e2;
        }
        sum / pairs.len() as f64
    }

    fn entropy(&self, x: [f64; 3]) -> f64 {
        let z = self.eval(x).logits;
        let p1 = 1.0 / (1.0 + (z[1] - z[0]).exp());
        let p0 = 1.0 - p1;
        -(p1 * p1.ln() + p0 * p0.ln())
    }

    /// Mean entropy over `free` minus mean entropy over `surface`.
    pub fn entropy_loss(&self, free: &[[f64; 3]], surface: &[[f64; 3]]) -> f64 {
        let a: f64 = free.iter().map(|x| self.entropy(*x)).sum::<f64>() / free.len() as f64;
        let b: f64 = surface.iter().map(|x| self.entropy(*x)).sum::<f64>() / surface.len() as f64;
        a - b
    }
}

/// Central finite-difference gradient of `f` over every parameter.
pub fn fd_gradient(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// max |a - b| / max(|b|, floor), the floor guarding entries that are nearly zero.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
