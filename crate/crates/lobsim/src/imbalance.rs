//! Concrete order book model in which event probabilities depend on the
//! current spread and order imbalance.
//!
//! Small price moves are one tick and occur with probabilities scaled by
//! `dp`; large moves occur with total probability `dt` per tick and have
//! state-dependent sizes (capped by the spread on the inside, inversely
//! proportional to top-of-book volume on the outside, optionally amplified
//! by an external counter). Passive events place fixed-size orders or cancel
//! volume proportionally, at Gaussian distances from the best price.

use crate::error::{LobError, Result};
use crate::gridfn::GridFunction;
use crate::limit::{JumpCoef, LimitCoefficients, MarkMeasure, SourceCoef, StateCoef};
use crate::model::{Event, LOBState, ModelSpec, ScalingParams, Side};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

/// Law of the interarrival multipliers (unit mean either way).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiLaw {
    Deterministic,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    /// Active-event probability scale (controls the share of price moves).
    pub dp: f64,
    /// Top-of-book depth used for the imbalance factor.
    pub h: f64,
    /// Spread sensitivity of the small-move probabilities.
    pub gamma1: f64,
    /// External-factor jump amplification (sizes scale by 1 + eta1 past the
    /// threshold).
    pub eta1: f64,
    /// Volume impact on outward jump sizes.
    pub eta2: f64,
    /// Threshold of the external counter.
    pub kappa: f64,
    /// Intensity of the external counter (expected increments per unit
    /// tick-time).
    pub sigma: f64,
    /// Direction weights of the large jumps (bid up/down, ask up/down);
    /// must sum to 1.
    pub lambda_bp: f64,
    pub lambda_bm: f64,
    pub lambda_ap: f64,
    pub lambda_am: f64,
    /// Base jump sizes (price units, tick multiples; |j| > dx).
    pub jbp: f64,
    pub jbm: f64,
    pub jap: f64,
    pub jam: f64,
    /// Size of every passive placement.
    pub placement_size: f64,
    pub phi_law: PhiLaw,
    /// Cap large jumps so the jumping side keeps strictly positive
    /// top-of-book volume and the bid stays positive.
    pub depth_guard: bool,
}

impl StudyParams {
    /// Baseline configuration: only downward bid jumps, no external factor.
    pub fn first_run(n: u32) -> Self {
        StudyParams {
            dp: 1.0 / (n as f64).sqrt(),
            h: 0.55,
            gamma1: 1.0,
            eta1: 0.0,
            eta2: 100.0,
            kappa: 10.0,
            sigma: 10.0,
            lambda_bp: 0.0,
            lambda_bm: 1.0,
            lambda_ap: 0.0,
            lambda_am: 0.0,
            jbp: 0.05,
            jbm: -0.05,
            jap: 0.05,
            jam: -0.05,
            placement_size: 10.0,
            phi_law: PhiLaw::Deterministic,
            depth_guard: true,
        }
    }

    /// Jumps in all directions with strong external amplification.
    pub fn second_run(n: u32) -> Self {
        StudyParams {
            eta1: 9.0,
            lambda_bp: 0.15,
            lambda_bm: 0.35,
            lambda_ap: 0.35,
            lambda_am: 0.15,
            ..StudyParams::first_run(n)
        }
    }

    pub fn validate(&self, p: &ScalingParams) -> Result<()> {
        let err = |key: &str, reason: &str| {
            Err(LobError::Validation {
                key: format!("model.{key}"),
                reason: reason.into(),
            })
        };
        let lsum = self.lambda_bp + self.lambda_bm + self.lambda_ap + self.lambda_am;
        if (lsum - 1.0).abs() > 1e-9 {
            return err("lambda", "direction weights must sum to 1");
        }
        for &(key, l) in &[
            ("lambda_bp", self.lambda_bp),
            ("lambda_bm", self.lambda_bm),
            ("lambda_ap", self.lambda_ap),
            ("lambda_am", self.lambda_am),
        ] {
            if !(0.0..=1.0).contains(&l) {
                return err(key, "weight must lie in [0,1]");
            }
        }
        let tickish = |j: f64| (j / p.dx - (j / p.dx).round()).abs() < 1e-9;
        for &(key, j) in &[("jbp", self.jbp), ("jap", self.jap)] {
            if j <= p.dx + 1e-12 || !tickish(j) {
                return err(key, "upward base jump must be a tick multiple > dx");
            }
        }
        for &(key, j) in &[("jbm", self.jbm), ("jam", self.jam)] {
            if j >= -p.dx - 1e-12 || !tickish(j) {
                return err(key, "downward base jump must be a tick multiple < -dx");
            }
        }
        if !(self.dp > 0.0 && self.h > 0.0 && self.gamma1 > 0.0) {
            return err("dp/h/gamma1", "must be positive");
        }
        if self.eta1 < 0.0 || self.eta2 <= 0.0 || self.sigma <= 0.0 {
            return err("eta1/eta2/sigma", "eta1 >= 0, eta2 > 0, sigma > 0 required");
        }
        Ok(())
    }
}

/// Per-cell masses of the placement-location density on the tick grid.
///
/// Locations are drawn from the density exp(-y^2)/sqrt(pi), a centred
/// Gaussian with standard deviation 1/sqrt(2); `mass[j]` is the exact
/// integral of that density over cell j.
#[derive(Debug, Clone)]
struct GaussCells {
    lo: i64,
    mass: Vec<f64>,
}

const GAUSS_CUTOFF: f64 = 6.0;

impl GaussCells {
    fn new(dx: f64) -> Self {
        let lo = (-GAUSS_CUTOFF / dx).floor() as i64;
        let hi = (GAUSS_CUTOFF / dx).ceil() as i64;
        let mass = (lo..hi)
            .map(|j| {
                let a = j as f64 * dx;
                0.5 * (erf(a + dx) - erf(a))
            })
            .collect();
        GaussCells { lo, mass }
    }
}

/// Four small-move probabilities: (bid up, bid down, ask up, ask down).
#[derive(Debug, Clone, Copy)]
pub struct SmallMoveProbs {
    pub bid_up: f64,
    pub bid_down: f64,
    pub ask_up: f64,
    pub ask_down: f64,
}

impl SmallMoveProbs {
    pub fn total(&self) -> f64 {
        self.bid_up + self.bid_down + self.ask_up + self.ask_down
    }
}

/// Raw (pre-guard) large jump sizes: (bid up, bid down, ask up, ask down),
/// all tick multiples in price units.
#[derive(Debug, Clone, Copy)]
pub struct JumpSizes {
    pub bid_up: f64,
    pub bid_down: f64,
    pub ask_up: f64,
    pub ask_down: f64,
}

pub struct StudyModel {
    scaling: ScalingParams,
    pub params: StudyParams,
    gauss: GaussCells,
}

impl StudyModel {
    pub fn new(scaling: ScalingParams, params: StudyParams) -> Result<Self> {
        scaling.validate()?;
        params.validate(&scaling)?;
        Ok(StudyModel {
            scaling,
            params,
            gauss: GaussCells::new(scaling.dx),
        })
    }

    /// Reference initial book: bid 6.9, ask 7, polynomial densities with a
    /// 3:1 bid/ask volume ratio supported on [-4, 4].
    pub fn initial_state(p: &ScalingParams) -> LOBState {
        let poly = |scale: f64| {
            move |x: f64| {
                if (-4.0..4.0).contains(&x) {
                    scale * (x - 4.0).powi(2) * (x + 4.0).powi(2)
                } else {
                    0.0
                }
            }
        };
        LOBState {
            bid: 6.9,
            vb: GridFunction::from_density(p.dx, -24.0, 24.0, poly(0.0075)),
            ask: 7.0,
            va: GridFunction::from_density(p.dx, -24.0, 24.0, poly(0.0025)),
            time: 0.0,
        }
    }

    fn spread_factor(&self, spread: f64) -> f64 {
        // exp(-gamma_n(Sp)) with gamma_n(x) = gamma1 * (x - dx); the gap is
        // clamped at zero so representation error in on-grid spreads cannot
        // produce negative probabilities
        (-self.params.gamma1 * (spread - self.scaling.dx).max(0.0)).exp()
    }

    /// The four one-tick move probabilities at state `s`.
    pub fn small_move_probs(&self, s: &LOBState) -> Result<SmallMoveProbs> {
        let dx = self.scaling.dx;
        if s.spread() < dx - 1e-9 * dx {
            return Err(LobError::InvalidState(format!(
                "spread {} below one tick",
                s.spread()
            )));
        }
        let im = s.imbalance(self.params.h)?;
        let e = self.spread_factor(s.spread());
        let dp = self.params.dp;
        // boundary rules: a one-tick drop that would take the bid to zero,
        // or a one-tick inward move that would squeeze the spread below a
        // tick, is assigned zero probability (the mass moves to the passive
        // block), so bid > 0 and spread >= dx are structural
        let bid_down = if s.bid <= dx * (1.0 + 1e-9) {
            0.0
        } else {
            dp * (dx * (1.0 - im) * e + (1.0 - e))
        };
        let narrow = s.spread() < dx * (2.0 - 1e-9);
        let mut probs = SmallMoveProbs {
            bid_up: if narrow {
                0.0
            } else {
                dp * (dx * im * (1.0 - e) + (1.0 - e))
            },
            bid_down,
            ask_up: dp * (dx * im * e + (1.0 - e)),
            ask_down: if narrow {
                0.0
            } else {
                dp * (dx * (1.0 - im) * (1.0 - e) + (1.0 - e))
            },
        };
        // on coarse grids (dp near 1) wide spreads can push the four
        // probabilities past the available mass; rescale onto the valid
        // range (never fires once dp * 4 < 1 - dt)
        let cap = 1.0 - self.scaling.dt;
        let tot = probs.total();
        if tot > cap {
            let c = cap / tot;
            probs.bid_up *= c;
            probs.bid_down *= c;
            probs.ask_up *= c;
            probs.ask_down *= c;
        }
        Ok(probs)
    }

    /// Raw large jump sizes at state `s` under external count `y`.
    pub fn jump_sizes(&self, s: &LOBState, y: u64) -> Result<JumpSizes> {
        let dx = self.scaling.dx;
        let sp = s.spread();
        let volb = s.vol_bid(self.params.h);
        let vola = s.vol_ask(self.params.h);
        if volb <= 0.0 {
            return Err(LobError::UndefinedJump("bid"));
        }
        if vola <= 0.0 {
            return Err(LobError::UndefinedJump("ask"));
        }
        let rho = if y as f64 > self.params.kappa {
            1.0 + self.params.eta1
        } else {
            1.0
        };
        let snap = |x: f64| (x / dx).round() * dx;
        Ok(JumpSizes {
            bid_up: snap(rho * self.params.jbp).min(sp - dx),
            bid_down: (rho * self.params.eta2 * self.params.jbm / (volb * dx)).floor() * dx,
            ask_up: (rho * self.params.eta2 * self.params.jap / (vola * dx)).floor() * dx,
            ask_down: snap(rho * self.params.jam).max(-sp + dx),
        })
    }

    /// Index of the last strictly positive cell of a density, if any.
    fn last_positive_cell(v: &GridFunction) -> Option<i64> {
        let (lo, _) = v.window();
        v.values()
            .iter()
            .rposition(|x| *x > 0.0)
            .map(|i| lo + i as i64)
    }

    /// Cap an outward jump so the jumping side retains strictly positive
    /// volume at the top of the book afterwards (and the bid stays positive
    /// for bid-down jumps). Returns the guarded signed tick count.
    fn guard_outward(&self, s: &LOBState, side: Side, ticks: i64) -> i64 {
        debug_assert!(match side {
            Side::Bid => ticks <= 0,
            Side::Ask => ticks >= 0,
        });
        if !self.params.depth_guard || ticks == 0 {
            return ticks;
        }
        let v = match side {
            Side::Bid => &s.vb,
            Side::Ask => &s.va,
        };
        // after moving the price m ticks outward, the visible top of the
        // book is the old density on [m*dx, m*dx + h); it is non-empty iff
        // m does not exceed the last occupied cell
        let Some(jmax) = Self::last_positive_cell(v) else {
            return 0;
        };
        let mut m = ticks.unsigned_abs().min(jmax.max(0) as u64) as i64;
        if side == Side::Bid {
            // keep the bid at least one tick above zero
            let bid_ticks = (s.bid / self.scaling.dx).floor() as i64 - 1;
            m = m.min(bid_ticks.max(0));
        }
        match side {
            Side::Bid => -m,
            Side::Ask => m,
        }
    }

    /// Jump sizes with the depth guard applied to the outward directions.
    pub fn guarded_jump_ticks(&self, s: &LOBState, y: u64) -> Result<JumpSizes> {
        let raw = self.jump_sizes(s, y)?;
        let dx = self.scaling.dx;
        let t = |x: f64| (x / dx).round() as i64;
        let bid_down = self.guard_outward(s, Side::Bid, t(raw.bid_down));
        let ask_up = self.guard_outward(s, Side::Ask, t(raw.ask_up));
        // inward jumps are capped in tick units so the post-jump spread
        // stays at least one tick (the continuous cap can round past it
        // when the spread is off-grid)
        let max_in = ((s.spread() / dx - 1.0) + 1e-9).floor().max(0.0) as i64;
        let bid_up = t(raw.bid_up).min(max_in);
        let ask_down = t(raw.ask_down).max(-max_in);
        Ok(JumpSizes {
            bid_up: bid_up as f64 * dx,
            bid_down: bid_down as f64 * dx,
            ask_up: ask_up as f64 * dx,
            ask_down: ask_down as f64 * dx,
        })
    }

    /// Probability of a price-changing event at state `s` (small + large).
    pub fn price_event_prob(&self, s: &LOBState) -> Result<f64> {
        Ok(self.small_move_probs(s)?.total() + self.scaling.dt)
    }

    fn sample_phi(&self, rng: &mut dyn RngCore) -> f64 {
        match self.params.phi_law {
            PhiLaw::Deterministic => 1.0,
            PhiLaw::Exponential => {
                let x: f64 = Exp1.sample(rng);
                x
            }
        }
    }

    fn sample_location(&self, rng: &mut dyn RngCore) -> f64 {
        let g: f64 = StandardNormal.sample(rng);
        g * 0.5f64.sqrt()
    }

    /// High-frequency limit of this family's coefficients on a grid of the
    /// given spacing. The external counter is frozen below its threshold,
    /// which is exact whenever `eta1 = 0`; the depth guard is mirrored on
    /// the limit grid, with `spacing` playing the role of the tick size in
    /// the spread and bid-positivity caps.
    pub fn limit_coefficients(&self, spacing: f64) -> LimitCoefficients {
        let pm = self.params;
        let e_inf = move |sp: f64| (-pm.gamma1 * sp.max(0.0)).exp();
        let im_of = move |s: &LOBState| s.imbalance(pm.h).unwrap_or(f64::NAN);

        let drift = |sign_bid: bool| -> StateCoef {
            Box::new(move |s: &LOBState| {
                let im = im_of(s);
                let e = e_inf(s.spread());
                if sign_bid {
                    -(1.0 - im) + (1.0 - e)
                } else {
                    im - (1.0 - e)
                }
            })
        };
        let vol: StateCoef = Box::new(move |s: &LOBState| (2.0 * (1.0 - e_inf(s.spread()))).sqrt());
        let vol2: StateCoef = Box::new(move |s: &LOBState| (2.0 * (1.0 - e_inf(s.spread()))).sqrt());

        let source = |bid_side: bool| -> SourceCoef {
            let gauss = GaussCells::new(spacing);
            Box::new(move |s: &LOBState| {
                let im = im_of(s);
                let (v, place_w, cancel_w) = if bid_side {
                    (&s.vb, 1.0 - im, im)
                } else {
                    (&s.va, im, 1.0 - im)
                };
                let (dom_lo, dom_hi) = v.domain();
                let mut out = GridFunction::zero(spacing, dom_lo, dom_hi);
                for (i, mass) in gauss.mass.iter().enumerate() {
                    let j = gauss.lo + i as i64;
                    let vj = v.eval((j as f64 + 0.5) * spacing);
                    let val = (mass / (2.0 * spacing))
                        * (pm.placement_size * place_w - cancel_w * vj / 2.0);
                    out.set_cell(j, val)?;
                }
                Ok(out)
            })
        };

        // jump size of an outward move, capped like the prelimit guard
        let outward = move |v: &GridFunction, vol: f64, base: f64, bid: Option<f64>| -> f64 {
            if vol <= 0.0 {
                return f64::NAN;
            }
            let mut size = (pm.eta2 * base / vol).abs();
            if pm.depth_guard {
                let last = Self::last_positive_cell(v)
                    .map(|j| j.max(0) as f64 * v.spacing())
                    .unwrap_or(0.0);
                size = size.min(last);
                if let Some(b) = bid {
                    size = size.min((b - spacing).max(0.0));
                }
            }
            size
        };
        let theta_b: JumpCoef = Box::new(move |s: &LOBState, y: f64| {
            if y > 0.0 {
                pm.jbp.min((s.spread() - spacing).max(0.0))
            } else {
                -outward(&s.vb, s.vol_bid(pm.h), pm.jbm, Some(s.bid))
            }
        });
        let theta_a: JumpCoef = Box::new(move |s: &LOBState, y: f64| {
            if y > 0.0 {
                outward(&s.va, s.vol_ask(pm.h), pm.jap, None)
            } else {
                pm.jam.max(-(s.spread() - spacing).max(0.0))
            }
        });

        let marks = |wm: f64, wp: f64| {
            MarkMeasure::new(
                [(-1.0, wm), (1.0, wp)]
                    .into_iter()
                    .filter(|&(_, w)| w > 0.0)
                    .collect(),
            )
            .expect("finite direction weights")
        };

        LimitCoefficients {
            p_b: drift(true),
            p_a: drift(false),
            r_b: vol,
            r_a: vol2,
            f_b: source(true),
            f_a: source(false),
            phi: Box::new(|_| 1.0),
            theta_b,
            theta_a,
            q_b: marks(pm.lambda_bm, pm.lambda_bp),
            q_a: marks(pm.lambda_am, pm.lambda_ap),
        }
    }
}

impl ModelSpec for StudyModel {
    type Aux = u64;

    fn scaling(&self) -> &ScalingParams {
        &self.scaling
    }

    fn sample_event(&self, s: &LOBState, aux: &u64, rng: &mut dyn RngCore) -> Result<Event> {
        let dt = self.scaling.dt;
        let small = self.small_move_probs(s)?;
        let im = s.imbalance(self.params.h)?;
        let q = 1.0 - small.total() - dt;
        if q < -1e-12 {
            return Err(LobError::InvalidState(
                "price-event probability exceeds 1".into(),
            ));
        }
        let q = q.max(0.0);
        let phi = self.sample_phi(rng);
        let mut u: f64 = rng_uniform(rng);

        // one-tick moves
        if u < small.bid_up {
            return Ok(Event::bid_move(1, phi));
        }
        u -= small.bid_up;
        if u < small.bid_down {
            return Ok(Event::bid_move(-1, phi));
        }
        u -= small.bid_down;
        if u < small.ask_up {
            return Ok(Event::ask_move(1, phi));
        }
        u -= small.ask_up;
        if u < small.ask_down {
            return Ok(Event::ask_move(-1, phi));
        }
        u -= small.ask_down;

        // large moves: total probability dt, split by direction weights
        if u < dt {
            let w = u / dt;
            let jumps = self.guarded_jump_ticks(s, *aux)?;
            let dx = self.scaling.dx;
            let t = |x: f64| (x / dx).round() as i64;
            let (bp, bm, ap) = (
                self.params.lambda_bp,
                self.params.lambda_bm,
                self.params.lambda_ap,
            );
            return Ok(if w < bp {
                Event::bid_move(t(jumps.bid_up), phi)
            } else if w < bp + bm {
                Event::bid_move(t(jumps.bid_down), phi)
            } else if w < bp + bm + ap {
                Event::ask_move(t(jumps.ask_up), phi)
            } else {
                Event::ask_move(t(jumps.ask_down), phi)
            });
        }
        u -= dt;

        // passive block, renormalized to total mass q:
        // placements weighted towards the thinner side, cancellations
        // towards the thicker side
        let pi = self.sample_location(rng);
        let w_bplace = q * (1.0 - im) / 2.0;
        let w_dplace = q * im / 2.0;
        let w_bcancel = q * im / 2.0;
        if u < w_bplace {
            return Ok(Event::bid_place(self.params.placement_size, pi, phi));
        }
        u -= w_bplace;
        if u < w_dplace {
            return Ok(Event::ask_place(self.params.placement_size, pi, phi));
        }
        u -= w_dplace;
        if u < w_bcancel {
            let v = s.vb.eval(pi);
            let omega = -v * rng_uniform(rng);
            return Ok(Event::bid_place(omega, pi, phi));
        }
        let v = s.va.eval(pi);
        let omega = -v * rng_uniform(rng);
        Ok(Event::ask_place(omega, pi, phi))
    }

    fn update_aux(&self, aux: &mut u64, rng: &mut dyn RngCore) {
        if rng_uniform(rng) < self.params.sigma * self.scaling.dt {
            *aux += 1;
        }
    }

    fn mean_interarrival(&self, _s: &LOBState) -> f64 {
        1.0
    }

    fn small_drift(&self, s: &LOBState, side: Side) -> Result<f64> {
        let im = s.imbalance(self.params.h)?;
        let e = self.spread_factor(s.spread());
        Ok(match side {
            Side::Bid => -(1.0 - im) + (1.0 - e),
            Side::Ask => im - (1.0 - e),
        })
    }

    fn small_vol(&self, s: &LOBState, side: Side) -> Result<f64> {
        let im = s.imbalance(self.params.h)?;
        let e = self.spread_factor(s.spread());
        let dx = self.scaling.dx;
        let sq = match side {
            Side::Bid => 2.0 * (1.0 - e) + dx * (im * (1.0 - e) + (1.0 - im) * e),
            Side::Ask => 2.0 * (1.0 - e) + dx * (im * e + (1.0 - im) * (1.0 - e)),
        };
        Ok(sq.sqrt())
    }

    fn placement_mean(&self, s: &LOBState, side: Side) -> Result<GridFunction> {
        let dx = self.scaling.dx;
        let im = s.imbalance(self.params.h)?;
        let q = 1.0 - self.price_event_prob(s)?;
        let (v, place_w, cancel_w) = match side {
            Side::Bid => (&s.vb, 1.0 - im, im),
            Side::Ask => (&s.va, im, 1.0 - im),
        };
        let (dom_lo, dom_hi) = v.domain();
        let mut out = GridFunction::zero(dx, dom_lo, dom_hi);
        for (i, mass) in self.gauss.mass.iter().enumerate() {
            let j = self.gauss.lo + i as i64;
            let val = (q * mass / (2.0 * dx))
                * (self.params.placement_size * place_w - cancel_w * v.value_at_cell(j) / 2.0);
            out.set_cell(j, val)?;
        }
        Ok(out)
    }

    fn large_kernel(&self, s: &LOBState, aux: &u64, side: Side) -> Result<Vec<(i64, f64)>> {
        let jumps = self.guarded_jump_ticks(s, *aux)?;
        let dx = self.scaling.dx;
        let t = |x: f64| (x / dx).round() as i64;
        let atoms = match side {
            Side::Bid => vec![
                (t(jumps.bid_up), self.params.lambda_bp),
                (t(jumps.bid_down), self.params.lambda_bm),
            ],
            Side::Ask => vec![
                (t(jumps.ask_up), self.params.lambda_ap),
                (t(jumps.ask_down), self.params.lambda_am),
            ],
        };
        Ok(atoms
            .into_iter()
            .filter(|(ticks, w)| *ticks != 0 && *w > 0.0)
            .collect())
    }
}

fn rng_uniform(rng: &mut dyn RngCore) -> f64 {
    rng.random::<f64>()
}
