//! Plain-text run configuration: one `key = value` per line, `#` comments.
//!
//! Every tunable default of training, the network, initialization, the λ schedule,
//! mesh extraction and evaluation has exactly one key. Unknown or repeated keys are
//! rejected. [`RunConfig::to_canonical`] lists all keys in a fixed order and parses back
//! to an identical configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use occfit_core::diffnet::{Activation, DEFAULT_SOFTPLUS_BETA};
use occfit_core::trainer::FitConfig;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: 100_000,
            tau: occfit_core::metrics::DEFAULT_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fit: FitConfig,
    /// Marching-cubes cells per axis.
    pub grid_resolution: usize,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fit: FitConfig::default(),
            grid_resolution: 128,
            eval: EvalOptions::default(),
        }
    }
}

/// All keys in canonical order.
pub const KEYS: &[&str] = &[
    "n_iterations",
    "learning_rate",
    "batch_pairs",
    "batch_omega",
    "batch_cloud",
    "pool_pairs",
    "pool_omega",
    "k",
    "padding_fraction",
    "seed",
    "checkpoint_every",
    "log_every",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "num_hidden_layers",
    "hidden_width",
    "skip_layer_index",
    "activation",
    "softplus_beta",
    "sphere_radius",
    "logit_sharpness",
    "kappa",
    "time_unit",
    "lambda0",
    "grad_eps",
    "freeze_newton_direction",
    "grid_resolution",
    "eval_samples",
    "eval_tau",
    "eval_seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_real(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !v.is_finite() {
        return Err(Error::Config(format!("value for key {key} must be finite")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        let f = &self.fit;
        let t = &f.trainer;
        let beta = match f.network.activation {
            Activation::Softplus { beta } => beta,
            Activation::Relu => DEFAULT_SOFTPLUS_BETA,
        };
        Some(match key {
            "n_iterations" => t.n_iterations.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "batch_pairs" => t.batch_pairs.to_string(),
            "batch_omega" => t.batch_omega.to_string(),
            "batch_cloud" => t.batch_cloud.map_or("auto".into(), |b| b.to_string()),
            "pool_pairs" => t.pool_pairs.to_string(),
            "pool_omega" => t.pool_omega.to_string(),
            "k" => t.k.to_string(),
            "padding_fraction" => t.padding_fraction.to_string(),
            "seed" => t.seed.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "log_every" => t.log_every.to_string(),
            "adam_beta1" => t.adam.beta1.to_string(),
            "adam_beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "num_hidden_layers" => f.network.num_hidden_layers.to_string(),
            "hidden_width" => f.network.hidden_width.to_string(),
            "skip_layer_index" => f.network.skip_layer_index.to_string(),
            "activation" => match f.network.activation {
                Activation::Softplus { .. } => "softplus".into(),
                Activation::Relu => "relu".into(),
            },
            "softplus_beta" => beta.to_string(),
            "sphere_radius" => f.init.sphere_radius.to_string(),
            "logit_sharpness" => f.init.logit_sharpness.to_string(),
            "kappa" => f.schedule.kappa.to_string(),
            "time_unit" => f.schedule.time_unit.to_string(),
            "lambda0" => f.schedule.lambda0.to_string(),
            "grad_eps" => f.sampling.grad_eps.to_string(),
            "freeze_newton_direction" => f.sampling.freeze_newton_direction.to_string(),
            "grid_resolution" => self.grid_resolution.to_string(),
            "eval_samples" => self.eval.samples.to_string(),
            "eval_tau" => self.eval.tau.to_string(),
            "eval_seed" => self.eval.seed.to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.fit;
        let t = &mut f.trainer;
        match key {
            "n_iterations" => t.n_iterations = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse_real(key, value)?,
            "batch_pairs" => t.batch_pairs = parse(key, value)?,
            "batch_omega" => t.batch_omega = parse(key, value)?,
            "batch_cloud" => {
                t.batch_cloud = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "pool_pairs" => t.pool_pairs = parse(key, value)?,
            "pool_omega" => t.pool_omega = parse(key, value)?,
            "k" => t.k = parse(key, value)?,
            "padding_fraction" => t.padding_fraction = parse_real(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "adam_beta1" => t.adam.beta1 = parse_real(key, value)?,
            "adam_beta2" => t.adam.beta2 = parse_real(key, value)?,
            "adam_eps" => t.adam.eps = parse_real(key, value)?,
            "num_hidden_layers" => f.network.num_hidden_layers = parse(key, value)?,
            "hidden_width" => f.network.hidden_width = parse(key, value)?,
            "skip_layer_index" => f.network.skip_layer_index = parse(key, value)?,
            "activation" => {
                let beta = match f.network.activation {
                    Activation::Softplus { beta } => beta,
                    Activation::Relu => DEFAULT_SOFTPLUS_BETA,
                };
                f.network.activation = match value {
                    "softplus" => Activation::Softplus { beta },
                    "relu" => Activation::Relu,
                    _ => return Err(Error::Config(format!("activation must be softplus or relu, got {value:?}"))),
                };
            }
            "softplus_beta" => {
                let beta = parse_real(key, value)?;
                if let Activation::Softplus { beta: b } = &mut f.network.activation {
                    *b = beta;
                }
            }
            "sphere_radius" => f.init.sphere_radius = parse_real(key, value)?,
            "logit_sharpness" => f.init.logit_sharpness = parse_real(key, value)?,
            "kappa" => f.schedule.kappa = parse_real(key, value)?,
            "time_unit" => f.schedule.time_unit = parse(key, value)?,
            "lambda0" => f.schedule.lambda0 = parse_real(key, value)?,
            "grad_eps" => f.sampling.grad_eps = parse_real(key, value)?,
            "freeze_newton_direction" => f.sampling.freeze_newton_direction = parse(key, value)?,
            "grid_resolution" => self.grid_resolution = parse(key, value)?,
            "eval_samples" => self.eval.samples = parse(key, value)?,
            "eval_tau" => self.eval.tau = parse_real(key, value)?,
            "eval_seed" => self.eval.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        // `softplus_beta` may precede `activation = softplus`; apply it last.
        let mut beta = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", i + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", i + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key {key:?} given twice", i + 1)));
            }
            if key == "softplus_beta" {
                beta = Some(value.to_string());
                continue;
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        if let Some(v) = beta {
            cfg.set("softplus_beta", &v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_canonical_form() {
        let cfg = RunConfig::default();
        let text = cfg.to_canonical();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn every_key_is_readable_and_writable() {
        for key in KEYS {
            let mut cfg = RunConfig::default();
            let value = cfg.get(key).unwrap();
            cfg.set(key, &value).unwrap();
            assert_eq!(cfg, RunConfig::default(), "{key}");
        }
    }

    #[test]
    fn overrides_change_exactly_one_field() {
        let overrides = [
            ("n_iterations", "7"),
            ("learning_rate", "0.5"),
            ("batch_pairs", "11"),
            ("batch_omega", "12"),
            ("batch_cloud", "13"),
            ("pool_pairs", "14"),
            ("pool_omega", "15"),
            ("k", "3"),
            ("padding_fraction", "0.25"),
            ("seed", "99"),
            ("checkpoint_every", "5"),
            ("log_every", "6"),
            ("adam_beta1", "0.8"),
            ("adam_beta2", "0.99"),
            ("adam_eps", "1e-7"),
            ("num_hidden_layers", "5"),
            ("hidden_width", "17"),
            ("skip_layer_index", "3"),
            ("activation", "relu"),
            ("softplus_beta", "50"),
            ("sphere_radius", "0.3"),
            ("logit_sharpness", "4"),
            ("kappa", "0.02"),
            ("time_unit", "10"),
            ("lambda0", "2"),
            ("grad_eps", "1e-9"),
            ("freeze_newton_direction", "true"),
            ("grid_resolution", "32"),
            ("eval_samples", "1000"),
            ("eval_tau", "0.02"),
            ("eval_seed", "4"),
        ];
        assert_eq!(overrides.len(), KEYS.len());
        let base = RunConfig::default();
        for (key, value) in overrides {
            let cfg = RunConfig::parse(&format!("{key} = {value}\n")).unwrap();
            let got = cfg.get(key).unwrap();
            match (got.parse::<f64>(), value.parse::<f64>()) {
                (Ok(a), Ok(b)) => assert_eq!(a, b, "{key}"),
                _ => assert_eq!(got, value, "{key}"),
            }
            for other in KEYS.iter().filter(|k| **k != key) {
                if (key, *other) == ("activation", "softplus_beta") {
                    continue;
                }
                assert_eq!(cfg.get(other), base.get(other), "{key} changed {other}");
            }
            assert_eq!(RunConfig::parse(&cfg.to_canonical()).unwrap(), cfg);
        }
    }

    #[test]
    fn comments_blank_lines_and_order_are_accepted() {
        let cfg = RunConfig::parse("# run\n\nsoftplus_beta = 20 # sharper\nactivation = softplus\n").unwrap();
        assert_eq!(cfg.fit.network.activation, Activation::Softplus { beta: 20.0 });
    }

    #[test]
    fn unknown_repeated_and_malformed_lines_are_rejected() {
        let err = RunConfig::parse("n_iterations = 5\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::parse("k = 3\nk = 4\n").is_err());
        assert!(RunConfig::parse("k 3\n").is_err());
        assert!(RunConfig::parse("k = three\n").is_err());
        assert!(RunConfig::parse("learning_rate = inf\n").is_err());
    }
}
