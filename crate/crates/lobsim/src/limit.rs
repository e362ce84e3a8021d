//! Euler solver for the macroscopic system: jump-diffusion prices, fluid
//! volume densities, accumulated physical time, plus the time change zeta
//! and the composed dynamics S = eta o zeta.

use crate::error::{LobError, Result};
use crate::gridfn::GridFunction;
use crate::model::{LOBState, Side};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

pub type StateCoef = Box<dyn Fn(&LOBState) -> f64 + Send + Sync>;
pub type SourceCoef = Box<dyn Fn(&LOBState) -> Result<GridFunction> + Send + Sync>;
pub type JumpCoef = Box<dyn Fn(&LOBState, f64) -> f64 + Send + Sync>;

/// Finite jump-mark measure as an atom list (location, weight).
#[derive(Debug, Clone, Default)]
pub struct MarkMeasure {
    atoms: Vec<(f64, f64)>,
    mass: f64,
}

impl MarkMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.iter().any(|&(y, w)| !y.is_finite() || !(w >= 0.0)) {
            return Err(LobError::ParameterError(
                "mark measure needs finite locations and nonnegative weights".into(),
            ));
        }
        let mass = atoms.iter().map(|&(_, w)| w).sum();
        Ok(MarkMeasure { atoms, mass })
    }

    pub fn empty() -> Self {
        MarkMeasure::default()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Draw a mark from the normalized measure.
    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let mut u = rng.random::<f64>() * self.mass;
        for &(y, w) in &self.atoms {
            u -= w;
            if u <= 0.0 {
                return y;
            }
        }
        self.atoms.last().map(|&(y, _)| y).unwrap_or(0.0)
    }
}

/// Coefficient functions of the limit system.
pub struct LimitCoefficients {
    pub p_b: StateCoef,
    pub p_a: StateCoef,
    pub r_b: StateCoef,
    pub r_a: StateCoef,
    pub f_b: SourceCoef,
    pub f_a: SourceCoef,
    pub phi: StateCoef,
    pub theta_b: JumpCoef,
    pub theta_a: JumpCoef,
    pub q_b: MarkMeasure,
    pub q_a: MarkMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub side: Side,
    pub mark: f64,
    pub size: f64,
}

/// One Euler path of the limit system on the step grid m*h.
#[derive(Debug, Clone)]
pub struct EtaPath {
    pub step: f64,
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
    /// Accumulated physical time tau^eta; tau_eta[0] = 0.
    pub tau_eta: Vec<f64>,
    /// (step index, full state) snapshots, ascending, containing index 0 and
    /// the final index.
    pub snapshots: Vec<(usize, LOBState)>,
    pub jumps: Vec<JumpRecord>,
}

impl EtaPath {
    pub fn steps(&self) -> usize {
        self.bid.len() - 1
    }

    pub fn final_state(&self) -> &LOBState {
        &self.snapshots.last().unwrap().1
    }

    pub fn snapshot_at(&self, m: usize) -> Option<&LOBState> {
        self.snapshots
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, s)| s)
    }
}

/// Simulate the limit system by Euler stepping: per step the diffusion
/// increment p*h + r*sqrt(h)*G, then Poisson(Q-mass * h) many jumps with
/// i.i.d. normalized-Q marks and sizes theta evaluated at the pre-step
/// state; volumes follow the fluid recursion
/// v_{m+1}(x) = v_m(x - dB) + h * f[eta_m](x - dB).
pub fn simulate_eta(
    c: &LimitCoefficients,
    h: f64,
    t_horizon: f64,
    init: &LOBState,
    seed: u64,
    snapshot_stride: usize,
) -> Result<EtaPath> {
    if !(h > 0.0 && t_horizon > 0.0) {
        return Err(LobError::ParameterError("need h > 0 and T > 0".into()));
    }
    if init.bid > init.ask {
        return Err(LobError::InvalidState("crossed initial prices".into()));
    }
    let steps = (t_horizon / h + 1e-9).floor() as usize;
    let stride = snapshot_stride.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = init.clone();
    s.time = 0.0;

    let mut bid = Vec::with_capacity(steps + 1);
    let mut ask = Vec::with_capacity(steps + 1);
    let mut tau = Vec::with_capacity(steps + 1);
    bid.push(s.bid);
    ask.push(s.ask);
    tau.push(0.0);
    let mut snapshots = vec![(0, s.clone())];
    let mut jumps = Vec::new();

    for m in 0..steps {
        let phi = (c.phi)(&s);
        if !(phi > 0.0 && phi <= 1.0) {
            return Err(LobError::AssumptionViolation(format!(
                "time density must lie in (0,1], got {phi} at step {m}"
            )));
        }
        let (pb, pa) = ((c.p_b)(&s), (c.p_a)(&s));
        let (rb, ra) = ((c.r_b)(&s), (c.r_a)(&s));
        if ![pb, pa, rb, ra].iter().all(|v| v.is_finite()) || rb < 0.0 || ra < 0.0 {
            return Err(LobError::NumericalFault(format!(
                "bad drift/volatility evaluation at step {m}"
            )));
        }
        let fb = (c.f_b)(&s)?;
        let fa = (c.f_a)(&s)?;

        let gb: f64 = StandardNormal.sample(&mut rng);
        let ga: f64 = StandardNormal.sample(&mut rng);
        let mut db = pb * h + rb * h.sqrt() * gb;
        let mut da = pa * h + ra * h.sqrt() * ga;

        // jumps enter after the diffusion increment, with sizes read off the
        // pre-step state
        let t_next = (m + 1) as f64 * h;
        for (q, theta, side, acc) in [
            (&c.q_b, &c.theta_b, Side::Bid, &mut db),
            (&c.q_a, &c.theta_a, Side::Ask, &mut da),
        ] {
            if q.mass() <= 0.0 {
                continue;
            }
            let count = Poisson::new(q.mass() * h)
                .map_err(|e| LobError::ParameterError(e.to_string()))?
                .sample(&mut rng) as usize;
            for _ in 0..count {
                let y = q.sample(&mut rng);
                let size = theta(&s, y);
                if !size.is_finite() {
                    return Err(LobError::NumericalFault(format!(
                        "non-finite jump size at step {m}"
                    )));
                }
                *acc += size;
                jumps.push(JumpRecord {
                    time: t_next,
                    side,
                    mark: y,
                    size,
                });
            }
        }

        s.vb = s.vb.axpy_shifted(&fb, h, db)?;
        s.va = s.va.axpy_shifted(&fa, h, -da)?;
        s.bid += db;
        s.ask += da;
        s.time += phi * h;
        bid.push(s.bid);
        ask.push(s.ask);
        tau.push(s.time);
        if (m + 1) % stride == 0 || m + 1 == steps {
            snapshots.push((m + 1, s.clone()));
        }
    }

    Ok(EtaPath {
        step: h,
        bid,
        ask,
        tau_eta: tau,
        snapshots,
        jumps,
    })
}

/// The time change zeta(t) = inf{u: tau^eta(u) > t}, computed by
/// piecewise-linear inversion of the step-linear clock tau^eta.
#[derive(Debug, Clone)]
pub struct TimeChange {
    step: f64,
    tau: Vec<f64>,
}

impl TimeChange {
    pub fn zeta(&self, t: f64) -> f64 {
        let last = *self.tau.last().unwrap();
        let horizon = (self.tau.len() - 1) as f64 * self.step;
        if t >= last {
            return horizon;
        }
        if t <= 0.0 {
            return 0.0;
        }
        // first m with tau[m] > t, so t lies in [tau[m-1], tau[m])
        let m = self.tau.partition_point(|&v| v <= t);
        let (t0, t1) = (self.tau[m - 1], self.tau[m]);
        ((m - 1) as f64 + (t - t0) / (t1 - t0)) * self.step
    }

    /// Step index m such that zeta(t) falls in [m*h, (m+1)*h).
    pub fn index(&self, t: f64) -> usize {
        ((self.zeta(t) / self.step).floor() as usize).min(self.tau.len() - 2)
    }
}

pub fn time_change(path: &EtaPath) -> Result<TimeChange> {
    if path
        .tau_eta
        .windows(2)
        .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
    {
        return Err(LobError::NumericalFault(
            "accumulated clock is not strictly increasing".into(),
        ));
    }
    Ok(TimeChange {
        step: path.step,
        tau: path.tau_eta.clone(),
    })
}

/// Direct (non-incremental) reconstruction of the final volume density:
/// v(t_m, x) = v0(x - (B_m - B_0)) + sum_{j<m} h * f[eta_j](x - (B_m - B_j)).
/// Needs every intermediate state, i.e. a path with snapshot stride 1.
pub fn reconstruct_volume_direct(
    path: &EtaPath,
    c: &LimitCoefficients,
    side: Side,
) -> Result<GridFunction> {
    let m = path.steps();
    if path.snapshots.len() != m + 1 {
        return Err(LobError::InsufficientRecord(
            "direct reconstruction needs snapshots at every step".into(),
        ));
    }
    let price = |k: usize| match side {
        Side::Bid => path.bid[k],
        Side::Ask => -path.ask[k],
    };
    let state0 = &path.snapshots[0].1;
    let v0 = match side {
        Side::Bid => &state0.vb,
        Side::Ask => &state0.va,
    };
    let zero = GridFunction::zero(v0.spacing(), v0.domain().0, v0.domain().1);
    let mut acc = zero.axpy_shifted(v0, 1.0, price(m) - price(0))?;
    for j in 0..m {
        let sj = &path.snapshots[j].1;
        let f = match side {
            Side::Bid => (c.f_b)(sj)?,
            Side::Ask => (c.f_a)(sj)?,
        };
        let term = zero.axpy_shifted(&f, path.step, price(m) - price(j))?;
        let (lo, hi) = term.window();
        for cell in lo..hi {
            acc.add_to_cell(cell, term.value_at_cell(cell))?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_state(bid: f64, ask: f64) -> LOBState {
        let vb = GridFunction::from_density(0.01, -8.0, 8.0, |x| {
            if (-2.0..2.0).contains(&x) {
                1.5
            } else {
                0.0
            }
        });
        let va = vb.clone();
        LOBState {
            bid,
            vb,
            ask,
            va,
            time: 0.0,
        }
    }

    fn coef(v: f64) -> StateCoef {
        Box::new(move |_| v)
    }

    fn zero_source() -> SourceCoef {
        Box::new(|s: &LOBState| Ok(GridFunction::zero(s.vb.spacing(), -8.0, 8.0)))
    }

    fn quiet(
        p: f64,
        r: f64,
        phi: f64,
    ) -> LimitCoefficients {
        LimitCoefficients {
            p_b: coef(p),
            p_a: coef(p),
            r_b: coef(r),
            r_a: coef(r),
            f_b: zero_source(),
            f_a: zero_source(),
            phi: coef(phi),
            theta_b: Box::new(|_, y| y),
            theta_a: Box::new(|_, y| y),
            q_b: MarkMeasure::empty(),
            q_a: MarkMeasure::empty(),
        }
    }

    #[test]
    fn driverless_system_is_constant_plus_accumulation() {
        let mut c = quiet(0.0, 0.0, 1.0);
        c.f_b = Box::new(|s: &LOBState| {
            Ok(GridFunction::from_density(s.vb.spacing(), -8.0, 8.0, |x| {
                if (0.0..1.0).contains(&x) {
                    2.0
                } else {
                    0.0
                }
            }))
        });
        let s0 = flat_state(5.0, 5.1);
        let path = simulate_eta(&c, 0.05, 1.0, &s0, 3, 1).unwrap();
        let end = path.final_state();
        assert_eq!(end.bid, 5.0);
        assert_eq!(end.ask, 5.1);
        // v(1, x) = v0(x) + 1 * f(x), exactly (zero shift each step)
        assert!((end.vb.eval(0.5) - (s0.vb.eval(0.5) + 2.0)).abs() < 1e-12);
        assert!((end.vb.eval(-1.5) - s0.vb.eval(-1.5)).abs() < 1e-12);
        assert!(path.jumps.is_empty());
    }

    #[test]
    fn pure_drift_is_exact_for_euler() {
        let c = quiet(1.0, 0.0, 1.0);
        let path = simulate_eta(&c, 0.01, 1.0, &flat_state(5.0, 5.1), 0, 100).unwrap();
        for (m, b) in path.bid.iter().enumerate() {
            assert!((b - (5.0 + m as f64 * 0.01)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_source_is_pure_transport_on_tick_shifts() {
        // p * h = 0.64 / 64 = 0.01 equals the grid spacing: exact shift
        let c = quiet(0.64, 0.0, 1.0);
        let s0 = flat_state(5.0, 5.1);
        let path = simulate_eta(&c, 1.0 / 64.0, 1.0, &s0, 0, 64).unwrap();
        let end = path.final_state();
        let shift = end.bid - 5.0;
        assert!((shift - 0.64).abs() < 1e-9);
        for x in [-1.99, -0.5, 0.005, 1.2] {
            assert_eq!(end.vb.eval(x + shift), s0.vb.eval(x));
        }
        // ask side transports the opposite way in relative coordinates
        for x in [-1.99, -0.5, 0.005, 1.2] {
            assert_eq!(end.va.eval(x - (end.ask - 5.1)), s0.va.eval(x));
        }
    }

    #[test]
    fn identity_clock_gives_identity_time_change() {
        let c = quiet(0.3, 0.2, 1.0);
        let path = simulate_eta(&c, 0.02, 1.0, &flat_state(5.0, 5.1), 11, 10).unwrap();
        let tc = time_change(&path).unwrap();
        for t in [0.0, 0.1, 0.55, 0.99] {
            assert!((tc.zeta(t) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_half_clock_doubles_time() {
        let c = quiet(0.0, 0.1, 0.5);
        let path = simulate_eta(&c, 0.02, 1.0, &flat_state(5.0, 5.1), 1, 10).unwrap();
        let tc = time_change(&path).unwrap();
        for t in [0.05, 0.2, 0.4] {
            assert!((tc.zeta(t) - 2.0 * t).abs() < 1e-12);
        }
        // beyond tau(T) = 0.5 the change caps at the horizon
        assert!((tc.zeta(0.7) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_error_bounded_by_step() {
        let mut c = quiet(0.1, 0.3, 1.0);
        c.phi = Box::new(|s: &LOBState| 0.55 + 0.4 * (3.0 * s.bid).sin().abs().min(1.0));
        let h = 0.01;
        let path = simulate_eta(&c, h, 1.0, &flat_state(5.0, 5.1), 9, 10).unwrap();
        let tc = time_change(&path).unwrap();
        for m in 0..=path.steps() {
            let u = m as f64 * h;
            assert!((tc.zeta(path.tau_eta[m]) - u).abs() <= h + 1e-12);
        }
    }

    #[test]
    fn incremental_matches_direct_reconstruction_on_tick_shifts() {
        // state-dependent source, drift chosen so every dB is a tick multiple
        let mut c = quiet(0.64, 0.0, 1.0);
        c.f_b = Box::new(|s: &LOBState| {
            let b = s.bid;
            Ok(GridFunction::from_density(s.vb.spacing(), -8.0, 8.0, move |x| {
                if (-1.0..1.0).contains(&x) {
                    0.5 + 0.1 * (b - 5.0)
                } else {
                    0.0
                }
            }))
        });
        let s0 = flat_state(5.0, 5.1);
        let path = simulate_eta(&c, 1.0 / 64.0, 1.0, &s0, 0, 1).unwrap();
        let direct = reconstruct_volume_direct(&path, &c, Side::Bid).unwrap();
        let end = &path.final_state().vb;
        let mut diff_sq = 0.0;
        let (lo, hi) = end.window();
        let (dlo, dhi) = direct.window();
        for j in lo.min(dlo)..hi.max(dhi) {
            diff_sq += (end.value_at_cell(j) - direct.value_at_cell(j)).powi(2);
        }
        assert!((diff_sq * end.spacing()).sqrt() <= 1e-10);
    }

    #[test]
    fn jump_log_accounts_for_price_moves() {
        let mut c = quiet(0.2, 0.0, 1.0);
        c.q_b = MarkMeasure::new(vec![(0.5, 2.0)]).unwrap();
        c.theta_b = Box::new(|_, y| 2.0 * y);
        let path = simulate_eta(&c, 0.01, 2.0, &flat_state(5.0, 20.0), 42, 200).unwrap();
        assert!(!path.jumps.is_empty());
        for j in &path.jumps {
            assert_eq!(j.side, Side::Bid);
            assert_eq!(j.mark, 0.5);
            assert_eq!(j.size, 1.0);
        }
        let jump_total: f64 = path.jumps.iter().map(|j| j.size).sum();
        let cont = path.bid.last().unwrap() - 5.0 - jump_total;
        // drift-only continuous part: exactly p * T
        assert!((cont - 0.2 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn clock_outside_unit_interval_is_rejected() {
        let c = quiet(0.0, 0.0, 1.2);
        assert!(matches!(
            simulate_eta(&c, 0.01, 1.0, &flat_state(5.0, 5.1), 0, 10),
            Err(LobError::AssumptionViolation(_))
        ));
    }

    #[test]
    fn thinned_path_cannot_be_reconstructed_directly() {
        let c = quiet(0.64, 0.0, 1.0);
        let path = simulate_eta(&c, 1.0 / 64.0, 1.0, &flat_state(5.0, 5.1), 0, 8).unwrap();
        assert!(matches!(
            reconstruct_volume_direct(&path, &c, Side::Bid),
            Err(LobError::InsufficientRecord(_))
        ));
    }
}
