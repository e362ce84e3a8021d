//! Discrete-event engine: applies order events to the book state and runs
//! full paths on the deterministic tick grid, with physical time recorded
//! separately.

use crate::error::{LobError, Result};
use crate::model::{Event, EventBody, EventKind, LOBState, ModelSpec, ScalingParams, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Running extrema monitored while a path is simulated. Shifts never alter
/// stored density values, so volume negativity can only be introduced at the
/// cell touched by a placement/cancellation; monitoring that cell after each
/// passive event is equivalent to a full pointwise scan.
#[derive(Debug, Clone, Copy)]
pub struct PathChecks {
    pub min_spread: f64,
    pub min_bid: f64,
    /// Minimum post-update value over all cells touched by passive events.
    pub min_touched_value: f64,
}

impl PathChecks {
    fn new(s0: &LOBState) -> Self {
        PathChecks {
            min_spread: s0.spread(),
            min_bid: s0.bid,
            min_touched_value: f64::INFINITY,
        }
    }
}

/// Apply one event in place; prices move on the tick grid and the relative
/// densities shift against the price move of their own side.
pub fn apply_event_mut(s: &mut LOBState, e: &Event, p: &ScalingParams) -> Result<()> {
    match (e.kind, e.body) {
        (EventKind::A, EventBody::Move { xi }) => {
            s.bid += xi as f64 * p.dx;
            // v_new(x) = v_old(x - delta_bid)
            s.vb.shift_ticks_mut(xi);
        }
        (EventKind::C, EventBody::Move { xi }) => {
            s.ask += xi as f64 * p.dx;
            // v_new(x) = v_old(x + delta_ask)
            s.va.shift_ticks_mut(-xi);
        }
        (EventKind::B, EventBody::Place { omega, pi }) => {
            let j = s.vb.cell_index(pi);
            s.vb.add_to_cell(j, p.dv * omega / p.dx)?;
        }
        (EventKind::D, EventBody::Place { omega, pi }) => {
            let j = s.va.cell_index(pi);
            s.va.add_to_cell(j, p.dv * omega / p.dx)?;
        }
        _ => {
            return Err(LobError::InvalidState(format!(
                "event body inconsistent with kind {:?}",
                e.kind
            )))
        }
    }
    s.time += e.phi_dur * p.dt;
    Ok(())
}

pub fn apply_event(s: &LOBState, e: &Event, p: &ScalingParams) -> Result<LOBState> {
    let mut out = s.clone();
    apply_event_mut(&mut out, e, p)?;
    Ok(out)
}

/// Value of the density cell an event writes to, after the update.
fn touched_value(s: &LOBState, e: &Event) -> Option<f64> {
    match (e.kind, e.body) {
        (EventKind::B, EventBody::Place { pi, .. }) => {
            Some(s.vb.value_at_cell(s.vb.cell_index(pi)))
        }
        (EventKind::D, EventBody::Place { pi, .. }) => {
            Some(s.va.value_at_cell(s.va.cell_index(pi)))
        }
        _ => None,
    }
}

/// Simulate one path of `spec` for `floor(T/dt)` ticks, starting at `s0`.
///
/// Full states are snapshotted every `snapshot_stride` ticks; all events are
/// recorded so intermediate states can be reconstructed exactly. The run is
/// deterministic given the seed.
pub fn simulate_path<M: ModelSpec>(
    spec: &M,
    s0: &LOBState,
    aux0: M::Aux,
    seed: u64,
    snapshot_stride: usize,
) -> Result<(Trajectory, PathChecks)> {
    let p = *spec.scaling();
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ticks = p.ticks();
    let stride = snapshot_stride.max(1);

    let mut state = s0.clone();
    state.time = 0.0;
    let mut aux = aux0;
    let mut checks = PathChecks::new(&state);

    let mut events = Vec::with_capacity(ticks);
    let mut tau = Vec::with_capacity(ticks + 1);
    let mut bid = Vec::with_capacity(ticks + 1);
    let mut ask = Vec::with_capacity(ticks + 1);
    let mut snapshots = Vec::with_capacity(ticks / stride + 1);
    tau.push(0.0);
    bid.push(state.bid);
    ask.push(state.ask);
    snapshots.push((0, state.clone()));

    for k in 1..=ticks {
        let e = spec
            .sample_event(&state, &aux, &mut rng)
            .map_err(|err| LobError::ModelFault {
                index: k,
                reason: err.to_string(),
            })?;
        if !e.is_finite() {
            return Err(LobError::ModelFault {
                index: k,
                reason: "sampled event has non-finite fields".into(),
            });
        }
        apply_event_mut(&mut state, &e, &p).map_err(|err| LobError::ModelFault {
            index: k,
            reason: err.to_string(),
        })?;
        spec.update_aux(&mut aux, &mut rng);

        if let Some(v) = touched_value(&state, &e) {
            checks.min_touched_value = checks.min_touched_value.min(v);
        }
        checks.min_spread = checks.min_spread.min(state.spread());
        checks.min_bid = checks.min_bid.min(state.bid);

        events.push(e);
        tau.push(state.time);
        bid.push(state.bid);
        ask.push(state.ask);
        if k % stride == 0 {
            snapshots.push((k, state.clone()));
        }
    }

    let clock_overrun = *tau.last().unwrap() > p.t_horizon;
    Ok((
        Trajectory {
            params: p,
            initial: {
                let mut s = s0.clone();
                s.time = 0.0;
                s
            },
            events,
            tau,
            bid,
            ask,
            snapshots,
            clock_overrun,
        },
        checks,
    ))
}

impl Trajectory {
    /// Reconstruct the post-event state at tick `k` by replaying events from
    /// the nearest recorded snapshot.
    pub fn state_at(&self, k: usize) -> Result<LOBState> {
        if k > self.len() {
            return Err(LobError::OutOfRange(format!(
                "tick {k} beyond recorded horizon {}",
                self.len()
            )));
        }
        let (base_k, base) = self
            .snapshots
            .iter()
            .rev()
            .find(|(i, _)| *i <= k)
            .ok_or_else(|| LobError::InsufficientRecord("no snapshot at or before 0".into()))?;
        let mut s = base.clone();
        for e in &self.events[*base_k..k] {
            apply_event_mut(&mut s, e, &self.params)?;
        }
        Ok(s)
    }

    /// Right-continuous physical-time view: the state after the last event
    /// whose arrival time does not exceed `t`.
    pub fn physical_time_view(&self, t: f64) -> Result<LOBState> {
        if t < 0.0 || (t > *self.tau.last().unwrap() && t > self.params.t_horizon) {
            return Err(LobError::OutOfRange(format!(
                "t = {t} outside recorded physical time range"
            )));
        }
        let k = self.tau.partition_point(|&tk| tk <= t) - 1;
        self.state_at(k)
    }

    /// Tick index of the physical-time view at `t`.
    pub fn index_at_time(&self, t: f64) -> Result<usize> {
        if t < 0.0 || (t > *self.tau.last().unwrap() && t > self.params.t_horizon) {
            return Err(LobError::OutOfRange(format!(
                "t = {t} outside recorded physical time range"
            )));
        }
        Ok(self.tau.partition_point(|&tk| tk <= t) - 1)
    }

    /// Walk the path in order, calling `f(j, state_before, event_j)` for
    /// j = 1..=len with a single evolving state (O(len) total).
    pub fn replay<F>(&self, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &LOBState, &Event) -> Result<()>,
    {
        let mut s = self.initial.clone();
        for (i, e) in self.events.iter().enumerate() {
            f(i + 1, &s, e)?;
            apply_event_mut(&mut s, e, &self.params)?;
        }
        Ok(())
    }
}
