//! Finite-horizon and discounted value iteration on a truncated queue, with
//! structural diagnostics: greedy policy extraction, threshold extraction,
//! convexity checking, and the hold/dispatch decision gap.
//!
//! The state space is truncated to 0..=x_max with a lossy cap: a truck
//! arriving while the queue sits at x_max is discarded. Under any policy
//! that dispatches above its threshold the queue drifts down from high
//! states, so the cap only distorts the top of the table; the margin in
//! `TruncationConfig` is the buffer that must separate the extracted
//! threshold from x_max before a solve is trusted.

use crate::error::{Error, Result};
use crate::model::{Action, ModelParams, SlotEvent};

/// Hard cap on value-iteration sweeps before giving up.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Tolerance for the convexity check on second differences.
pub const SECOND_DIFF_TOL: f64 = 1e-9;

/// State-space truncation: states 0..=x_max, with `margin` the number of
/// top states that must stay clear of the extracted threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationConfig {
    x_max: usize,
    margin: usize,
}

impl TruncationConfig {
    /// Truncation at `x_max` with the default safety margin of 10 states.
    pub fn new(x_max: usize) -> Self {
        Self::with_margin(x_max, 10)
    }

    pub fn with_margin(x_max: usize, margin: usize) -> Self {
        assert!(x_max >= 2, "truncation needs at least states 0, 1, 2");
        assert!(margin <= x_max, "margin cannot exceed x_max");
        TruncationConfig { x_max, margin }
    }

    pub fn x_max(&self) -> usize {
        self.x_max
    }

    pub fn margin(&self) -> usize {
        self.margin
    }
}

/// Cost-to-go table over queue states 0..=x_max.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Vec<f64>,
    beta: f64,
    /// Stages applied for a finite-horizon table, sweeps for a discounted one.
    stage: usize,
}

impl ValueTable {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn stage(&self) -> usize {
        self.stage
    }
}

/// Chosen action per post-arrival queue length, one row per contingency
/// (platoon passing this slot or not). Index is the post-arrival queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    platoon: Vec<Action>,
    no_platoon: Vec<Action>,
}

impl PolicyTable {
    pub fn len(&self) -> usize {
        self.platoon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.platoon.is_empty()
    }

    pub fn platoon_action(&self, y: usize) -> Action {
        self.platoon[y]
    }

    pub fn no_platoon_action(&self, y: usize) -> Action {
        self.no_platoon[y]
    }

    /// Largest post-arrival queue the no-platoon contingency holds at,
    /// ignoring the capped top state (its action reflects the boundary
    /// rule, not the model).
    fn last_hold_below_cap(&self) -> usize {
        let mut last = 0;
        for y in 0..self.no_platoon.len() - 1 {
            if self.no_platoon[y] == Action::Hold {
                last = y;
            }
        }
        last
    }
}

/// Converged discounted solve.
#[derive(Debug, Clone)]
pub struct DiscountedSolve {
    pub values: ValueTable,
    pub policy: PolicyTable,
    pub sweeps: usize,
    pub residual: f64,
    /// True when the no-platoon hold region clears the truncation margin,
    /// i.e. the extracted threshold can be trusted at this x_max.
    pub reliable: bool,
}

/// One stage of a finite-horizon solve.
#[derive(Debug, Clone)]
pub struct FiniteHorizonSolve {
    pub tables: Vec<ValueTable>,
    pub policies: Vec<PolicyTable>,
    /// True when every stage policy's no-platoon hold region clears the
    /// truncation margin. Early stages of an expensive-premium solve hold
    /// everywhere, so short horizons are typically flagged unreliable.
    pub reliable: bool,
}

/// Best achievable cost at post-arrival queue `y`: hold, or (if the queue is
/// nonempty) dispatch one truck, paying the premium unless a platoon passes.
fn contingent_value(j: &[f64], y: usize, platoon: bool, params: &ModelParams) -> f64 {
    let hold = y as f64 + params.beta() * j[y];
    if y == 0 {
        return hold;
    }
    let premium = if platoon { 0.0 } else { params.kappa() };
    let dispatch = (y - 1) as f64 + premium + params.beta() * j[y - 1];
    hold.min(dispatch)
}

/// One backward-induction sweep: out[x] = sum over events of
/// P(event) * min_action [cost(y, a) + beta * j[a(y)]], where y is the
/// post-arrival queue, capped at x_max.
fn sweep(j: &[f64], out: &mut [f64], params: &ModelParams) {
    let x_max = j.len() - 1;
    let probs: Vec<(f64, bool, bool)> = SlotEvent::ALL
        .iter()
        .map(|ev| (ev.probability(params), ev.truck_arrives(), ev.platoon_arrives()))
        .collect();
    for x in 0..=x_max {
        let mut v = 0.0;
        for &(prob, truck, platoon) in &probs {
            let y = (x + usize::from(truck)).min(x_max);
            v += prob * contingent_value(j, y, platoon, params);
        }
        out[x] = v;
    }
}

/// Minimizing action per contingency against the continuation table `j`.
/// Ties break toward Hold.
fn greedy_policy(j: &[f64], params: &ModelParams) -> PolicyTable {
    let n = j.len();
    let mut platoon = vec![Action::Hold; n];
    let mut no_platoon = vec![Action::Hold; n];
    for y in 1..n {
        let hold = y as f64 + params.beta() * j[y];
        let base = (y - 1) as f64 + params.beta() * j[y - 1];
        if base < hold {
            platoon[y] = Action::Dispatch;
        }
        if base + params.kappa() < hold {
            no_platoon[y] = Action::Dispatch;
        }
    }
    PolicyTable { platoon, no_platoon }
}

fn threshold_reliable(policy: &PolicyTable, trunc: &TruncationConfig) -> bool {
    policy.last_hold_below_cap() + trunc.margin() <= trunc.x_max()
}

/// Backward induction for `horizon` stages from the zero table. Returns the
/// stage tables J_1..J_N and the stage policies (the minimizers used to
/// compute each table from its predecessor).
pub fn value_iterate_finite(
    params: &ModelParams,
    trunc: &TruncationConfig,
    horizon: usize,
) -> FiniteHorizonSolve {
    assert!(horizon >= 1, "horizon must be at least 1");
    let n = trunc.x_max() + 1;
    let mut prev = vec![0.0; n];
    let mut tables = Vec::with_capacity(horizon);
    let mut policies = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        policies.push(greedy_policy(&prev, params));
        let mut next = vec![0.0; n];
        sweep(&prev, &mut next, params);
        tables.push(ValueTable {
            values: next.clone(),
            beta: params.beta(),
            stage: k,
        });
        prev = next;
    }
    let reliable = policies.iter().all(|p| threshold_reliable(p, trunc));
    FiniteHorizonSolve {
        tables,
        policies,
        reliable,
    }
}

/// Discounted value iteration to within `tol` of the optimal cost. Stops
/// when successive sweeps differ by less than tol * (1 - beta) / (2 beta)
/// in sup norm, which bounds the greedy policy's suboptimality by `tol`.
pub fn value_iterate_discounted(
    params: &ModelParams,
    trunc: &TruncationConfig,
    tol: f64,
) -> Result<DiscountedSolve> {
    assert!(tol > 0.0, "tolerance must be positive");
    let beta = params.beta();
    let stop = tol * (1.0 - beta) / (2.0 * beta);
    let n = trunc.x_max() + 1;
    let mut j = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for sweeps in 1..=MAX_SWEEPS {
        sweep(&j, &mut next, params);
        residual = j
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut j, &mut next);
        if residual < stop {
            let policy = greedy_policy(&j, params);
            let reliable = threshold_reliable(&policy, trunc);
            return Ok(DiscountedSolve {
                values: ValueTable {
                    values: j,
                    beta,
                    stage: sweeps,
                },
                policy,
                sweeps,
                residual,
                reliable,
            });
        }
    }
    Err(Error::NoConvergence {
        sweeps: MAX_SWEEPS,
        residual,
    })
}

/// Decision gap Delta(x): the event-probability-weighted sum of one-step
/// value differences between starting the slot at x and at x - 1, with each
/// contingency resolved to its best action (so platoon slots are taken
/// post-dispatch). The no-platoon contingency holds at post-arrival queue x
/// exactly when Delta(x) <= (kappa - 1) / beta. Since the weighted sum is
/// one application of the slot recursion, Delta(x) collapses to
/// J(x) - J(x-1) at the fixed point.
///
/// Defined for 1 <= x <= x_max - 1; the capped top state is excluded.
pub fn q_difference(values: &ValueTable, x: usize, params: &ModelParams) -> Result<f64> {
    let max = values.len().saturating_sub(2);
    if x < 1 || x > max {
        return Err(Error::StateOutOfRange {
            what: "decision gap",
            x,
            max,
        });
    }
    let j = values.values();
    let x_max = j.len() - 1;
    let mut sum = 0.0;
    for ev in SlotEvent::ALL {
        let t = usize::from(ev.truck_arrives());
        let hi = (x + t).min(x_max);
        let lo = (x - 1 + t).min(x_max);
        sum += ev.probability(params)
            * (contingent_value(j, hi, ev.platoon_arrives(), params)
                - contingent_value(j, lo, ev.platoon_arrives(), params));
    }
    Ok(sum)
}

/// Convexity diagnostic for a value table slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityReport {
    pub convex: bool,
    pub min_second_difference: f64,
    /// State at which the minimum second difference occurs.
    pub argmin: usize,
}

/// Checks discrete convexity of `values`: second differences
/// values[x+1] + values[x-1] - 2 values[x] must be at least -1e-9 at every
/// interior point of the given slice. Callers pass the region they trust;
/// for a solve truncated at x_max that is everything below the capped top
/// state, whose entry follows the boundary rule rather than the model.
pub fn check_convexity(values: &[f64]) -> ConvexityReport {
    assert!(values.len() >= 3, "convexity needs at least three states");
    let mut min_sd = f64::INFINITY;
    let mut argmin = 1;
    for x in 1..values.len() - 1 {
        let sd = values[x + 1] + values[x - 1] - 2.0 * values[x];
        if sd < min_sd {
            min_sd = sd;
            argmin = x;
        }
    }
    ConvexityReport {
        convex: min_sd >= -SECOND_DIFF_TOL,
        min_second_difference: min_sd,
        argmin,
    }
}

/// Extracts the threshold from a policy table: the unique m with the
/// no-platoon contingency holding for every post-arrival queue y <= m and
/// dispatching for every y > m. A hold run ending at the capped state is
/// ignored: the cap discards arrivals, which makes holding there spuriously
/// cheap, so those actions mirror the boundary rule rather than the model
/// (the reliability flag reports when such a run exists). Returns x_max when
/// no dispatch appears at all, meaning no finite threshold is certified
/// within the truncated range.
///
/// Errors list every state breaking the hold-prefix / dispatch-suffix
/// structure or the dispatch-with-platoon rule.
pub fn extract_threshold(policy: &PolicyTable) -> Result<usize> {
    let x_max = policy.len() - 1;
    let mut offenders = Vec::new();
    for y in 1..=x_max {
        if policy.platoon_action(y) == Action::Hold {
            offenders.push(y);
        }
    }
    if policy.no_platoon_action(0) == Action::Dispatch {
        offenders.push(0);
    }
    let mut top = x_max;
    while top > 0 && policy.no_platoon_action(top) == Action::Hold {
        top -= 1;
    }
    let first_dispatch = (1..=top).find(|&y| policy.no_platoon_action(y) == Action::Dispatch);
    let m = match first_dispatch {
        Some(d) => {
            for y in d + 1..=top {
                if policy.no_platoon_action(y) == Action::Hold {
                    offenders.push(y);
                }
            }
            d - 1
        }
        None => x_max,
    };
    if offenders.is_empty() {
        Ok(m)
    } else {
        offenders.sort_unstable();
        offenders.dedup();
        Err(Error::NotThreshold { offenders })
    }
}
