//! Single-station dispatch model: slot events, costs, transitions, and the
//! threshold policy family.
//!
//! Time is slotted. In each slot at most one truck and at most one platoon
//! arrive, and the truck is queued before the platoon passes. The dispatcher
//! sees the slot's arrivals and then either holds the queue or dispatches
//! exactly one truck. A truck dispatched alongside a passing platoon rides in
//! its slipstream for free; a solo dispatch pays the fixed premium `kappa`.
//! Holding charges one unit per waiting truck. Costs and the action both
//! apply to the post-arrival queue.

use serde::Serialize;

use crate::error::{Error, Result};

/// Number of trucks waiting at a slot boundary.
pub type QueueState = usize;

/// Validated model parameters.
///
/// `p` and `q` are the per-slot truck and platoon arrival probabilities,
/// `kappa` the solo-dispatch premium, `beta` the per-slot discount factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    p: f64,
    q: f64,
    kappa: f64,
    beta: f64,
}

impl ModelParams {
    pub fn new(p: f64, q: f64, kappa: f64, beta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParam {
                field: "p",
                value: p,
                requirement: "truck arrival probability must lie strictly inside (0, 1)",
            });
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParam {
                field: "q",
                value: q,
                requirement: "platoon arrival probability must lie strictly inside (0, 1)",
            });
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::InvalidParam {
                field: "kappa",
                value: kappa,
                requirement: "solo-dispatch premium must be finite and nonnegative",
            });
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParam {
                field: "beta",
                value: beta,
                requirement: "discount factor must lie strictly inside (0, 1)",
            });
        }
        Ok(ModelParams { p, q, kappa, beta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Joint arrival outcome of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SlotEvent {
    NoArrivals,
    PlatoonOnly,
    TruckOnly,
    Both,
}

impl SlotEvent {
    pub const ALL: [SlotEvent; 4] = [
        SlotEvent::NoArrivals,
        SlotEvent::PlatoonOnly,
        SlotEvent::TruckOnly,
        SlotEvent::Both,
    ];

    pub fn from_arrivals(truck: bool, platoon: bool) -> SlotEvent {
        match (truck, platoon) {
            (false, false) => SlotEvent::NoArrivals,
            (false, true) => SlotEvent::PlatoonOnly,
            (true, false) => SlotEvent::TruckOnly,
            (true, true) => SlotEvent::Both,
        }
    }

    pub fn truck_arrives(self) -> bool {
        matches!(self, SlotEvent::TruckOnly | SlotEvent::Both)
    }

    pub fn platoon_arrives(self) -> bool {
        matches!(self, SlotEvent::PlatoonOnly | SlotEvent::Both)
    }

    /// Probability of this event under independent per-slot arrivals.
    pub fn probability(self, params: &ModelParams) -> f64 {
        let (p, q) = (params.p(), params.q());
        match self {
            SlotEvent::NoArrivals => (1.0 - p) * (1.0 - q),
            SlotEvent::PlatoonOnly => (1.0 - p) * q,
            SlotEvent::TruckOnly => p * (1.0 - q),
            SlotEvent::Both => p * q,
        }
    }
}

/// The four slot events with their probabilities, in `SlotEvent::ALL` order.
pub fn event_distribution(params: &ModelParams) -> [(SlotEvent, f64); 4] {
    SlotEvent::ALL.map(|ev| (ev, ev.probability(params)))
}

/// Dispatcher decision for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Hold,
    Dispatch,
}

/// Next state and realized cost of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub next_state: QueueState,
    pub cost: f64,
}

/// Queue length after the slot's arrivals, before the action is applied.
pub fn post_arrival(x: QueueState, event: SlotEvent) -> QueueState {
    x + usize::from(event.truck_arrives())
}

/// Applies `action` to the post-arrival queue and returns the slot outcome.
///
/// Holding costs the post-arrival queue length y; dispatching removes one
/// truck and costs y - 1, plus `kappa` when no platoon passed this slot.
/// At most one truck leaves per slot, and dispatch requires y >= 1.
pub fn transition_step(
    x: QueueState,
    event: SlotEvent,
    action: Action,
    params: &ModelParams,
) -> Result<SlotOutcome> {
    let y = post_arrival(x, event);
    match action {
        Action::Hold => Ok(SlotOutcome {
            next_state: y,
            cost: y as f64,
        }),
        Action::Dispatch => {
            if y == 0 {
                return Err(Error::EmptyDispatch);
            }
            let premium = if event.platoon_arrives() {
                0.0
            } else {
                params.kappa()
            };
            Ok(SlotOutcome {
                next_state: y - 1,
                cost: (y - 1) as f64 + premium,
            })
        }
    }
}

/// Action of the threshold policy with threshold `m`.
///
/// A truck is always dispatched with a passing platoon when the post-arrival
/// queue is nonempty; a solo dispatch happens exactly when the post-arrival
/// queue exceeds `m`.
pub fn threshold_action(x: QueueState, event: SlotEvent, m: usize) -> Action {
    let y = post_arrival(x, event);
    if event.platoon_arrives() && y >= 1 {
        Action::Dispatch
    } else if y > m {
        Action::Dispatch
    } else {
        Action::Hold
    }
}
