//! Slot-by-slot simulation of the queue under a threshold policy, with
//! replicated runs and a Student-t confidence interval on the mean cost.
//!
//! Randomness comes from a self-contained SplitMix64 generator so that a
//! (seed, replication) pair produces the same trajectory on every platform.
//! Each slot draws the truck arrival first, then the platoon passing, in
//! that fixed order; changing the draw order changes trajectories, so it is
//! part of the reproducibility contract.

use crate::error::{Error, Result};
use crate::model::{ModelParams, QueueState, SlotEvent};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// SplitMix64: increments a 64-bit state by a fixed odd constant and
/// finalizes it with two xor-shift multiplies. Passes through every seed's
/// full 2^64 period.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, prob: f64) -> bool {
        self.next_unit() < prob
    }
}

/// Seed for replication `index` under `base`: successive outputs of a
/// SplitMix64 stream seeded with `base`, so replications are decorrelated
/// but fully determined by (base, index).
pub fn replication_seed(base: u64, index: usize) -> u64 {
    let mut rng = SplitMix64::new(base);
    let mut seed = rng.next_u64();
    for _ in 0..index {
        seed = rng.next_u64();
    }
    seed
}

/// One simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunResult {
    /// Average per-slot cost over the measured slots.
    pub mean_cost: f64,
    pub final_queue: QueueState,
    /// Largest queue observed at any slot boundary after warmup.
    pub max_queue: QueueState,
}

/// Simulates `slots` slots under threshold `m` from an empty queue. Output
/// is bit-deterministic in (params, m, slots, seed).
pub fn simulate_run(params: &ModelParams, m: usize, slots: u64, seed: u64) -> Result<RunResult> {
    run_after_warmup(params, m, slots, 0, seed)
}

/// Run kernel with `warmup` unmeasured slots before the measured window.
fn run_after_warmup(
    params: &ModelParams,
    m: usize,
    slots: u64,
    warmup: u64,
    seed: u64,
) -> Result<RunResult> {
    if slots == 0 {
        return Err(Error::BadInput("slot count must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut x: QueueState = 0;
    for _ in 0..warmup {
        x = step(&mut rng, params, m, x)?.0;
    }
    let mut total = 0.0;
    let mut max_queue = x;
    for _ in 0..slots {
        let (next, cost) = step(&mut rng, params, m, x)?;
        total += cost;
        x = next;
        max_queue = max_queue.max(x);
    }
    Ok(RunResult {
        mean_cost: total / slots as f64,
        final_queue: x,
        max_queue,
    })
}

/// Draws one slot's arrivals (truck first, then platoon), applies the
/// threshold rule, and returns the next state with the slot's cost.
fn step(
    rng: &mut SplitMix64,
    params: &ModelParams,
    m: usize,
    x: QueueState,
) -> Result<(QueueState, f64)> {
    let truck = rng.bernoulli(params.p());
    let platoon = rng.bernoulli(params.q());
    let event = SlotEvent::from_arrivals(truck, platoon);
    let action = crate::model::threshold_action(x, event, m);
    let out = crate::model::transition_step(x, event, action, params)?;
    Ok((out.next_state, out.cost))
}

/// Replicated-run configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub replications: usize,
    pub slots: u64,
    pub warmup: u64,
    pub base_seed: u64,
    /// Two-sided confidence level for the interval on the grand mean.
    pub confidence: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            replications: 30,
            slots: 1_000_000,
            warmup: 0,
            base_seed: 42,
            confidence: 0.99,
        }
    }
}

/// Aggregate over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub per_replication_means: Vec<f64>,
    pub final_queue_lengths: Vec<QueueState>,
    pub max_queue: QueueState,
    pub grand_mean: f64,
    /// Student-t half width at the configured confidence; None for a single
    /// replication, where the sample variance is undefined.
    pub ci_half_width: Option<f64>,
    pub slots_per_replication: u64,
}

impl SimSummary {
    pub fn ci_bounds(&self) -> Option<(f64, f64)> {
        self.ci_half_width
            .map(|h| (self.grand_mean - h, self.grand_mean + h))
    }
}

/// Runs independent replications of the threshold policy and summarizes
/// the per-replication mean costs.
pub fn simulate_replications(
    params: &ModelParams,
    m: usize,
    config: &SimConfig,
) -> Result<SimSummary> {
    if config.replications == 0 {
        return Err(Error::BadInput("replication count must be positive".into()));
    }
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(Error::BadInput(format!(
            "confidence must lie strictly between 0 and 1, got {}",
            config.confidence
        )));
    }
    let mut means = Vec::with_capacity(config.replications);
    let mut finals = Vec::with_capacity(config.replications);
    let mut max_queue = 0;
    for i in 0..config.replications {
        let seed = replication_seed(config.base_seed, i);
        let run = run_after_warmup(params, m, config.slots, config.warmup, seed)?;
        means.push(run.mean_cost);
        finals.push(run.final_queue);
        max_queue = max_queue.max(run.max_queue);
    }
    let n = means.len() as f64;
    let grand_mean = means.iter().sum::<f64>() / n;
    let ci_half_width = if means.len() >= 2 {
        let var = means.iter().map(|v| (v - grand_mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| Error::BadInput(format!("t distribution: {e}")))?
            .inverse_cdf(0.5 + config.confidence / 2.0);
        Some(t * se)
    } else {
        None
    };
    Ok(SimSummary {
        per_replication_means: means,
        final_queue_lengths: finals,
        max_queue,
        grand_mean,
        ci_half_width,
        slots_per_replication: config.slots,
    })
}
