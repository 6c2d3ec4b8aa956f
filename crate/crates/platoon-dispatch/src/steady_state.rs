//! Long-run behavior of threshold policies: stationary distribution of the
//! induced queue chain, expected slot cost, average cost per slot in closed
//! form and via an independent linear-solve oracle, the optimal-threshold
//! search, and the large-threshold limit.
//!
//! Under the threshold policy with threshold m the queue never climbs above
//! m when started at or below it: a truck arriving at queue m is dispatched
//! in the same slot. The chain restricted to 0..=m is therefore closed, and
//! its stationary distribution is geometric with ratio A = p(1-q)/((1-p)q).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, ModelParams, QueueState, SlotEvent};

/// Detection tolerance for the p = q case, applied to |A - 1|.
const A_UNIT_TOL: f64 = 1e-12;

/// Geometric ratio A = p(1-q) / ((1-p)q) of the stationary distribution.
///
/// Equals the odds of the queue stepping up (truck arrives, no platoon)
/// against stepping down (platoon arrives, no truck) below the threshold.
pub fn factor_a(params: &ModelParams) -> f64 {
    let (p, q) = (params.p(), params.q());
    p * (1.0 - q) / ((1.0 - p) * q)
}

/// Stationary distribution of the induced chain on 0..=m, in closed form:
/// f(x) = A^x f(0), normalized. For |A - 1| below the detection tolerance
/// the distribution is exactly uniform.
///
/// Normalization always divides by the summed geometric weights rather than
/// the ratio (A^(m+1) - 1)/(A - 1), which loses precision near A = 1; for
/// A > 1 the weights are anchored at the top state so they stay bounded.
pub fn stationary_closed_form(params: &ModelParams, m: usize) -> Vec<f64> {
    let a = factor_a(params);
    if (a - 1.0).abs() < A_UNIT_TOL {
        return vec![1.0 / (m as f64 + 1.0); m + 1];
    }
    let anchor = if a > 1.0 { m as i32 } else { 0 };
    let weights: Vec<f64> = (0..=m as i32).map(|x| a.powi(x - anchor)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// One-step transition matrix of the queue chain induced by the threshold
/// policy with threshold `m`, on states 0..=top, built by enumerating the
/// four slot events through the policy and the transition map.
///
/// Requires top >= m so the state space is closed under the dynamics.
pub fn transition_matrix(params: &ModelParams, m: usize, top: usize) -> Vec<Vec<f64>> {
    assert!(top >= m, "state space 0..={top} is not closed for threshold {m}");
    let mut rows = vec![vec![0.0; top + 1]; top + 1];
    for x in 0..=top {
        for ev in SlotEvent::ALL {
            let action = model::threshold_action(x, ev, m);
            let out = model::transition_step(x, ev, action, params)
                .expect("threshold policy never dispatches from an empty queue");
            debug_assert!(out.next_state <= top);
            rows[x][out.next_state] += ev.probability(params);
        }
    }
    rows
}

/// Stationary distribution on 0..=m obtained independently of the closed
/// form: a direct linear solve of the balance equations f P = f, sum(f) = 1,
/// with one step of iterative refinement.
pub fn stationary_oracle(params: &ModelParams, m: usize) -> Result<Vec<f64>> {
    let p = transition_matrix(params, m, m);
    let n = m + 1;
    // (P^T - I) f = 0 with the last balance row replaced by normalization
    let mut mat = DMatrix::<f64>::from_fn(n, n, |i, j| {
        let v = p[j][i];
        if i == j {
            v - 1.0
        } else {
            v
        }
    });
    for j in 0..n {
        mat[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;

    let lu = mat.clone().lu();
    let mut f = lu.solve(&b).ok_or(Error::SingularBalance { m })?;
    let residual = &b - &mat * &f;
    if let Some(correction) = lu.solve(&residual) {
        f += correction;
    }
    Ok(f.iter().copied().collect())
}

/// Expected one-slot cost at queue state `x` under the threshold policy with
/// threshold `m`, by enumerating the four slot events. Defined on the
/// recurrent states 0..=m.
pub fn expected_slot_cost(x: QueueState, m: usize, params: &ModelParams) -> Result<f64> {
    if x > m {
        return Err(Error::StateOutOfRange {
            what: "expected slot cost (recurrent states only)",
            x,
            max: m,
        });
    }
    let mut cost = 0.0;
    for ev in SlotEvent::ALL {
        let action = model::threshold_action(x, ev, m);
        let out = model::transition_step(x, ev, action, params)
            .expect("threshold policy never dispatches from an empty queue");
        cost += ev.probability(params) * out.cost;
    }
    Ok(cost)
}

/// Which closed-form branch `average_cost_closed_form` evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostBranch {
    MZero,
    MOne,
    PEqQ,
    PNeQ,
}

impl CostBranch {
    pub fn label(self) -> &'static str {
        match self {
            CostBranch::MZero => "m0",
            CostBranch::MOne => "m1",
            CostBranch::PEqQ => "p-eq-q",
            CostBranch::PNeQ => "p-ne-q",
        }
    }
}

/// Long-run average cost per slot of the threshold policy, evaluated from
/// the published four-branch closed form, together with the branch taken.
///
/// The p = q, m >= 2 branch is reproduced verbatim even though it exceeds
/// the exact value by p(1-p)/(m+1); see `closed_form_discrepancy`. The other
/// three branches agree with `average_cost_oracle` to rounding error.
pub fn average_cost_closed_form(params: &ModelParams, m: usize) -> (f64, CostBranch) {
    let (p, q, kappa) = (params.p(), params.q(), params.kappa());
    let a = factor_a(params);
    if m == 0 {
        return (p * (1.0 - q) * kappa, CostBranch::MZero);
    }
    if m == 1 {
        let j = (p * (1.0 - q)
            + a * (p * (1.0 - q) * (1.0 + kappa) + (1.0 - p) * (1.0 - q) + p * q))
            / (a + 1.0);
        return (j, CostBranch::MOne);
    }
    let mf = m as f64;
    if (a - 1.0).abs() < A_UNIT_TOL {
        let j = (mf * mf + mf - 2.0 * (kappa + 1.0) * (p - 1.0) * p) / (2.0 * (mf + 1.0));
        return (j, CostBranch::PEqQ);
    }
    let am = a.powi(m as i32);
    let am1 = am * a;
    let t1 = p * (1.0 - q) * (1.0 - a) / (1.0 - am1);
    let t2 = (a * a * (q - p) + a * (1.0 + p - q) + am * (q - p - mf) + am1 * (mf + p - q - 1.0))
        / ((1.0 - a) * (1.0 - am1));
    let t3 = (mf - q + p * q * (1.0 - kappa) + p * kappa) * (am - am1) / (1.0 - am1);
    (t1 + t2 + t3, CostBranch::PNeQ)
}

/// Known excess of the published p = q, m >= 2 closed-form branch over the
/// exact average cost: p(1-p)/(m+1). Returns None for the exact branches.
pub fn closed_form_discrepancy(params: &ModelParams, m: usize) -> Option<f64> {
    let a = factor_a(params);
    if m >= 2 && (a - 1.0).abs() < A_UNIT_TOL {
        let p = params.p();
        Some(p * (1.0 - p) / (m as f64 + 1.0))
    } else {
        None
    }
}

/// Long-run average cost per slot of the threshold policy, computed without
/// the closed form: stationary distribution from the balance-equation solve,
/// slot costs from event enumeration. This is the canonical value whenever
/// the closed form is in doubt.
pub fn average_cost_oracle(params: &ModelParams, m: usize) -> Result<f64> {
    let f = stationary_oracle(params, m)?;
    let mut j = 0.0;
    for (x, fx) in f.iter().enumerate() {
        j += fx * expected_slot_cost(x, m, params)?;
    }
    Ok(j)
}

/// Large-threshold behavior of the average cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AsymptoticCost {
    /// p >= q: holding capacity cannot keep up and the cost curve grows
    /// without bound as m grows.
    Diverges,
    /// p < q: the cost curve approaches this finite limit as m grows.
    ConvergesTo(f64),
}

/// Limit of the average cost as the threshold grows.
pub fn asymptotic_limit(params: &ModelParams) -> AsymptoticCost {
    let (p, q) = (params.p(), params.q());
    if p >= q {
        return AsymptoticCost::Diverges;
    }
    let a = factor_a(params);
    let limit =
        p * (1.0 - q) * (1.0 - a) + (a * a * (q - p) + a * (1.0 + p - q)) / (1.0 - a);
    AsymptoticCost::ConvergesTo(limit)
}

/// Result of `find_optimal_threshold`: the optimal threshold and the oracle
/// cost curve J(0), J(1), ..., J(m_star + 1) examined on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub m_star: usize,
    pub curve: Vec<f64>,
}

/// Finds the optimal threshold as the first m whose average cost increases:
/// J(m) < J(m+1). Costs come from the oracle route. Errors with the partial
/// curve if no increase appears by `m_cap`.
pub fn find_optimal_threshold(params: &ModelParams, m_cap: usize) -> Result<ThresholdSearch> {
    assert!(m_cap >= 1, "search cap must be at least 1");
    let mut curve = vec![average_cost_oracle(params, 0)?];
    for m in 0..=m_cap {
        let next = average_cost_oracle(params, m + 1)?;
        curve.push(next);
        if curve[m] < next {
            return Ok(ThresholdSearch { m_star: m, curve });
        }
    }
    Err(Error::SearchCapExceeded { cap: m_cap, curve })
}
