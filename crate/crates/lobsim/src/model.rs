//! Core state, scaling, and event types plus the model-specification trait
//! that concrete order book models implement.

use crate::error::{LobError, Result};
use crate::gridfn::GridFunction;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Full book state: best prices, relative volume densities, elapsed
/// physical time. Densities are measured at distances relative to the
/// best price of their own side; negative distances form the shadow book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LOBState {
    pub bid: f64,
    pub vb: GridFunction,
    pub ask: f64,
    pub va: GridFunction,
    pub time: f64,
}

impl LOBState {
    pub fn spread(&self) -> f64 {
        self.ask - self.bid
    }

    /// Standing volume within depth `h` of the best bid.
    pub fn vol_bid(&self, h: f64) -> f64 {
        self.vb.integrate(0.0, h)
    }

    pub fn vol_ask(&self, h: f64) -> f64 {
        self.va.integrate(0.0, h)
    }

    /// Order imbalance: bid share of the top-of-book volume over depth `h`.
    pub fn imbalance(&self, h: f64) -> Result<f64> {
        assert!(h > 0.0);
        let b = self.vol_bid(h);
        let a = self.vol_ask(h);
        if b + a <= 0.0 {
            return Err(LobError::UndefinedImbalance);
        }
        Ok(b / (b + a))
    }

    pub fn is_finite(&self) -> bool {
        self.bid.is_finite()
            && self.ask.is_finite()
            && self.time.is_finite()
            && self.vb.is_finite()
            && self.va.is_finite()
    }
}

/// Scaling parameters of the n-th model in the high-frequency sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub n: u32,
    /// Tick-time step (unscaled interarrival unit).
    pub dt: f64,
    /// Tick size (price grid resolution).
    pub dx: f64,
    /// Volume unit of a single passive order.
    pub dv: f64,
    /// Small/large price-change threshold.
    pub delta_n: f64,
    /// Lower bound imposed on the diffusion coefficients.
    pub eta_n: f64,
    /// Time horizon.
    pub t_horizon: f64,
    /// Bound on the support of the driving jump measures.
    pub m_bound: f64,
}

impl ScalingParams {
    /// Standard scaling: dx = 1/n, dt = dv = n^(-5/2), delta_n = dx,
    /// eta_n = dx * n^(1/4) (so delta_n/eta_n -> 0).
    pub fn hf(n: u32, t_horizon: f64, m_bound: f64) -> Self {
        let nf = n as f64;
        let dx = 1.0 / nf;
        let dt = nf.powf(-2.5);
        ScalingParams {
            n,
            dt,
            dx,
            dv: dt,
            delta_n: dx,
            eta_n: dx * nf.powf(0.25),
            t_horizon,
            m_bound,
        }
    }

    /// Number of tick steps within the horizon.
    pub fn ticks(&self) -> usize {
        // tolerate representation error in T/dt that lands just below an
        // integer (e.g. 2 / 1e-5)
        let r = self.t_horizon / self.dt;
        (r + 1e-9 + 1e-12 * r).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: &str| {
            Err(LobError::ParameterError(format!(
                "scaling: {reason} (n={})",
                self.n
            )))
        };
        if !(self.dt > 0.0 && self.dx > 0.0 && self.dv > 0.0) {
            return err("dt, dx, dv must be positive");
        }
        if !(self.t_horizon > 0.0 && self.m_bound > 0.0) {
            return err("T and M must be positive");
        }
        if self.dx > self.delta_n {
            return err("tick size must not exceed the small-jump threshold");
        }
        if self.delta_n >= self.eta_n {
            return err("delta_n/eta_n must be < 1");
        }
        Ok(())
    }
}

/// Which side of the book a coefficient or event refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

/// Event taxonomy: A/C move the bid/ask by `xi` ticks and shift the relative
/// density of that side; B/D place (`omega` > 0) or cancel (`omega` < 0)
/// volume at distance `pi` relative to the best price of that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    A,
    B,
    C,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventBody {
    /// Price move by `xi` ticks (kinds A and C).
    Move { xi: i64 },
    /// Passive placement/cancellation of size `omega` at relative level `pi`
    /// (kinds B and D).
    Place { omega: f64, pi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub body: EventBody,
    /// Interarrival multiplier: physical duration of the step is phi_dur * dt.
    pub phi_dur: f64,
}

impl Event {
    pub fn bid_move(xi: i64, phi_dur: f64) -> Self {
        Event {
            kind: EventKind::A,
            body: EventBody::Move { xi },
            phi_dur,
        }
    }

    pub fn ask_move(xi: i64, phi_dur: f64) -> Self {
        Event {
            kind: EventKind::C,
            body: EventBody::Move { xi },
            phi_dur,
        }
    }

    pub fn bid_place(omega: f64, pi: f64, phi_dur: f64) -> Self {
        Event {
            kind: EventKind::B,
            body: EventBody::Place { omega, pi },
            phi_dur,
        }
    }

    pub fn ask_place(omega: f64, pi: f64, phi_dur: f64) -> Self {
        Event {
            kind: EventKind::D,
            body: EventBody::Place { omega, pi },
            phi_dur,
        }
    }

    /// Signed tick move of the bid (zero unless kind A).
    pub fn bid_ticks(&self) -> i64 {
        match (self.kind, self.body) {
            (EventKind::A, EventBody::Move { xi }) => xi,
            _ => 0,
        }
    }

    /// Signed tick move of the ask (zero unless kind C).
    pub fn ask_ticks(&self) -> i64 {
        match (self.kind, self.body) {
            (EventKind::C, EventBody::Move { xi }) => xi,
            _ => 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        let body_ok = match self.body {
            EventBody::Move { .. } => true,
            EventBody::Place { omega, pi } => omega.is_finite() && pi.is_finite(),
        };
        body_ok && self.phi_dur.is_finite() && self.phi_dur > 0.0
    }
}

/// One simulated path, recorded on the deterministic tick grid.
///
/// Events are kept in full so any intermediate state can be reconstructed;
/// full density states are retained only at thinned snapshot indices to
/// bound memory. Scalar series (bid, ask, tau) are kept per tick.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ScalingParams,
    pub initial: LOBState,
    /// events[k-1] maps state k-1 to state k.
    pub events: Vec<Event>,
    /// Physical time after k events; tau[0] = 0.
    pub tau: Vec<f64>,
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
    /// (tick index, full state) pairs, ascending, always containing index 0.
    pub snapshots: Vec<(usize, LOBState)>,
    /// True when cumulative physical time passed the horizon before the
    /// final tick; the path is recorded in full and flagged, not truncated.
    pub clock_overrun: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Contract a concrete order book model implements to drive the simulator
/// and the statistical diagnostics.
///
/// `Aux` carries an exogenous factor (e.g. an external event counter) that
/// influences sampling but is not part of the book state.
pub trait ModelSpec: Sync {
    type Aux: Clone + Send + Sync;

    fn scaling(&self) -> &ScalingParams;

    /// Sample the next event given the current state and exogenous factor.
    fn sample_event(
        &self,
        s: &LOBState,
        aux: &Self::Aux,
        rng: &mut dyn RngCore,
    ) -> Result<Event>;

    /// Advance the exogenous factor by one tick.
    fn update_aux(&self, aux: &mut Self::Aux, rng: &mut dyn RngCore);

    /// Conditional mean of the interarrival multiplier at state `s`.
    fn mean_interarrival(&self, s: &LOBState) -> f64;

    /// Drift coefficient of the small price changes (per side).
    fn small_drift(&self, s: &LOBState, side: Side) -> Result<f64>;

    /// Diffusion coefficient of the small price changes (per side).
    fn small_vol(&self, s: &LOBState, side: Side) -> Result<f64>;

    /// Conditional mean of the placement/cancellation operator at `s`.
    fn placement_mean(&self, s: &LOBState, side: Side) -> Result<GridFunction>;

    /// Large-jump kernel at `s`: (tick offset, probability mass per tick-step)
    /// atoms. Masses are the per-step event probabilities divided by dt.
    fn large_kernel(
        &self,
        s: &LOBState,
        aux: &Self::Aux,
        side: Side,
    ) -> Result<Vec<(i64, f64)>>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly_book(scale: f64, spacing: f64) -> GridFunction {
        GridFunction::from_density(spacing, -8.0, 8.0, move |x| {
            if (-4.0..4.0).contains(&x) {
                scale * (x - 4.0).powi(2) * (x + 4.0).powi(2)
            } else {
                0.0
            }
        })
    }

    fn state(bid: f64, ask: f64, vb: GridFunction, va: GridFunction) -> LOBState {
        LOBState {
            bid,
            vb,
            ask,
            va,
            time: 0.0,
        }
    }

    #[test]
    fn spread_of_reference_initial_prices() {
        let s = state(6.9, 7.0, poly_book(0.0075, 0.01), poly_book(0.0025, 0.01));
        assert!((s.spread() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn imbalance_of_constant_densities() {
        let c = 0.4;
        let vb = GridFunction::from_density(0.05, -2.0, 2.0, move |_| 3.0 * c);
        let va = GridFunction::from_density(0.05, -2.0, 2.0, move |_| c);
        let s = state(1.0, 1.1, vb, va);
        assert!((s.imbalance(0.55).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn imbalance_of_proportional_polynomial_books() {
        // densities differ by a constant factor 3, so Im = 3/4 at any depth
        let s = state(6.9, 7.0, poly_book(0.0075, 0.01), poly_book(0.0025, 0.01));
        assert!((s.imbalance(0.55).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn imbalance_errors_on_empty_top() {
        let z = GridFunction::zero(0.01, -8.0, 8.0);
        let s = state(1.0, 1.1, z.clone(), z);
        assert!(matches!(
            s.imbalance(0.55),
            Err(LobError::UndefinedImbalance)
        ));
    }

    #[test]
    fn hf_scaling_relations() {
        let p = ScalingParams::hf(100, 2.0, 5.0);
        assert!((p.dx - 0.01).abs() < 1e-15);
        assert!((p.dt - 1e-5).abs() < 1e-18);
        assert_eq!(p.dv, p.dt);
        assert_eq!(p.ticks(), 200_000);
        assert!((p.dt / p.dx - 0.001).abs() < 1e-15);
        assert!((p.dt / p.dv - 1.0).abs() < 1e-15);
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_scaling() {
        let mut p = ScalingParams::hf(64, 2.0, 5.0);
        p.delta_n = p.dx / 2.0;
        assert!(p.validate().is_err());
        let mut q = ScalingParams::hf(64, 2.0, 5.0);
        q.eta_n = q.delta_n;
        assert!(q.validate().is_err());
    }
}
