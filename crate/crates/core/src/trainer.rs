//! The optimization loop: local scales, pools, sphere initialization, then a fixed
//! number of Adam steps on `L_samp + λ·L_entr` over batches drawn from the pools.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{self, PointCloud, QueryPair};
use crate::diffnet::{NetworkConfig, ParamVector};
use crate::field::{self, InitConfig, OccupancyField};
use crate::geom::{Aabb, Vec3};
use crate::objective::{self, LossBreakdown, SamplingOptions, ScheduleConfig};
use crate::{Error, Result};

/// RNG stream used for initialization and pool generation.
const SETUP_STREAM: u64 = 0;
/// RNG stream used for batch sampling inside the loop.
const BATCH_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub n_iterations: u64,
    pub learning_rate: f64,
    pub batch_pairs: usize,
    pub batch_omega: usize,
    /// `None` means `min(|P|, 1000)`.
    pub batch_cloud: Option<usize>,
    pub pool_pairs: usize,
    pub pool_omega: usize,
    /// Neighbourhood size for the local scales, the point itself included.
    pub k: usize,
    pub padding_fraction: f64,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            n_iterations: 40_000,
            learning_rate: 1e-3,
            batch_pairs: 1_000,
            batch_omega: 1_000,
            batch_cloud: None,
            pool_pairs: 1_000_000,
            pool_omega: 10_000,
            k: 51,
            padding_fraction: 0.1,
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn cloud_batch(&self, cloud_len: usize) -> usize {
        self.batch_cloud.unwrap_or(cloud_len.min(1_000))
    }

    pub fn validate(&self, cloud_len: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_pairs == 0 || self.batch_pairs > self.pool_pairs {
            return fail(format!(
                "batch_pairs ({}) must be in 1..=pool_pairs ({})",
                self.batch_pairs, self.pool_pairs
            ));
        }
        if self.batch_omega == 0 || self.batch_omega > self.pool_omega {
            return fail(format!(
                "batch_omega ({}) must be in 1..=pool_omega ({})",
                self.batch_omega, self.pool_omega
            ));
        }
        let bc = self.cloud_batch(cloud_len);
        if bc == 0 || bc > cloud_len {
            return fail(format!("batch_cloud ({bc}) must be in 1..=|P| ({cloud_len})"));
        }
        if self.k < 2 || self.k > cloud_len {
            return fail(format!("K ({}) must be in 2..=|P| ({cloud_len})", self.k));
        }
        if self.log_every == 0 {
            return fail("log_every must be at least 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return fail("adam betas must be in [0, 1) and eps positive".into());
        }
        Ok(())
    }
}

/// Everything [`fit`] needs besides the cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitConfig {
    pub trainer: TrainerConfig,
    pub network: NetworkConfig,
    pub init: InitConfig,
    pub schedule: ScheduleConfig,
    pub sampling: SamplingOptions,
}

impl FitConfig {
    pub fn validate(&self, cloud_len: usize) -> Result<()> {
        self.trainer.validate(cloud_len)?;
        self.network.validate()?;
        self.init.validate()?;
        self.schedule.validate()
    }
}

/// Serializable ChaCha position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamVector,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Completed iterations.
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: ParamVector, seed: u64) -> Self {
        let n = params.len();
        TrainState {
            params,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            iteration: 0,
            rng: seeded(seed, BATCH_STREAM),
        }
    }
}

/// One bias-corrected Adam update; advances `state.iteration`.
pub fn adam_step(state: &mut TrainState, gradient: &[f64], learning_rate: f64, adam: &AdamConfig) -> Result<()> {
    if gradient.len() != state.params.len() {
        return Err(Error::Config("gradient length does not match the parameters".into()));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            iteration: state.iteration,
            what: format!("non-finite gradient entry {i}"),
        });
    }
    let t = (state.iteration + 1) as i32;
    let c1 = 1.0 - libm::pow(adam.beta1, t as f64);
    let c2 = 1.0 - libm::pow(adam.beta2, t as f64);
    let params = state.params.as_mut_slice();
    for (((p, m), v), g) in params
        .iter_mut()
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
        .zip(gradient)
    {
        *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
        *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + adam.eps);
    }
    state.iteration += 1;
    Ok(())
}

/// Pools generated once before the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub pairs: Vec<QueryPair>,
    pub omega: Vec<Vec3>,
    pub bounds: Aabb,
}

/// Local scales, pair pool, uniform pool and initial parameters, all from `seed`.
pub fn prepare(cloud: &PointCloud, config: &FitConfig) -> Result<(Pools, ParamVector)> {
    config.validate(cloud.len())?;
    let t = &config.trainer;
    let mut rng = seeded(t.seed, SETUP_STREAM);
    let sigmas = cloud::compute_sigmas(cloud, t.k)?;
    let pairs = cloud::build_pairs(cloud, &sigmas, t.pool_pairs, &mut rng)?;
    let (omega, bounds) = cloud::build_uniform_pool(cloud, t.pool_omega, t.padding_fraction, &mut rng)?;
    let params = field::geometric_init(&config.network, &config.init, &mut rng)?;
    Ok((Pools { pairs, omega, bounds }, params))
}

pub trait TrainObserver {
    /// Called for every logged iteration (`iteration % log_every == 0` and the last one).
    fn on_log(&mut self, _iteration: u64, _loss: &LossBreakdown) -> Result<()> {
        Ok(())
    }

    /// Called after every `checkpoint_every` completed iterations.
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub field: OccupancyField,
    pub state: TrainState,
    pub log: Vec<(u64, LossBreakdown)>,
    pub bounds: Aabb,
}

/// Trains from scratch.
pub fn fit(cloud: &PointCloud, config: &FitConfig, observer: &mut dyn TrainObserver) -> Result<FitOutput> {
    let (pools, params) = prepare(cloud, config)?;
    let state = TrainState::new(params, config.trainer.seed);
    run(cloud, config, &pools, state, observer)
}

/// Continues from a saved state; pools are regenerated from the seed.
pub fn resume(
    cloud: &PointCloud,
    config: &FitConfig,
    state: TrainState,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutput> {
    let (pools, _) = prepare(cloud, config)?;
    if state.params.len() != config.network.param_count() {
        return Err(Error::Config("saved parameters do not match the network configuration".into()));
    }
    run(cloud, config, &pools, state, observer)
}

fn draw<T: Copy, R: Rng + ?Sized>(pool: &[T], n: usize, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

fn run(
    cloud: &PointCloud,
    config: &FitConfig,
    pools: &Pools,
    mut state: TrainState,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutput> {
    let t = &config.trainer;
    let n_cloud = t.cloud_batch(cloud.len());
    let mut log = Vec::new();
    if state.iteration > t.n_iterations {
        return Err(Error::Config(format!(
            "saved state is at iteration {}, past the configured {}",
            state.iteration, t.n_iterations
        )));
    }

    while state.iteration < t.n_iterations {
        let i = state.iteration;
        let pair_batch = draw(&pools.pairs, t.batch_pairs, &mut state.rng);
        let omega_batch = draw(&pools.omega, t.batch_omega, &mut state.rng);
        let cloud_batch = draw(cloud.points(), n_cloud, &mut state.rng);

        let field = OccupancyField {
            cfg: config.network.clone(),
            params: state.params.clone(),
        };
        let (loss, gradient) = objective::total_loss(
            &field,
            &pair_batch,
            &omega_batch,
            &cloud_batch,
            &config.schedule,
            i,
            config.sampling,
        )
        .map_err(|e| at_iteration(e, i))?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric {
                iteration: i,
                what: "non-finite total loss".into(),
            });
        }
        if i.is_multiple_of(t.log_every) || i + 1 == t.n_iterations {
            observer.on_log(i, &loss)?;
            log.push((i, loss));
        }
        adam_step(&mut state, &gradient, t.learning_rate, &t.adam)?;
        if t.checkpoint_every > 0 && state.iteration.is_multiple_of(t.checkpoint_every) {
            observer.on_checkpoint(&state)?;
        }
    }

    Ok(FitOutput {
        field: OccupancyField {
            cfg: config.network.clone(),
            params: state.params.clone(),
        },
        state,
        log,
        bounds: pools.bounds,
    })
}

fn at_iteration(e: Error, iteration: u64) -> Error {
    match e {
        Error::Numeric { what, .. } => Error::Numeric { iteration, what },
        Error::Stall { batch, .. } => Error::Stall { iteration, batch },
        other => other,
    }
}
