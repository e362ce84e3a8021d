//! Statistical instruments: bipower-variation jump test, reconstruction of
//! the standardized small-move integrators with quadratic-variation checks,
//! and the remainder processes of the fluid decomposition.

use crate::error::{LobError, Result};
use crate::model::{EventBody, EventKind, ModelSpec, Side, Trajectory};

/// Asymptotic variance constant of the linear jump test.
pub const VARTHETA: f64 = std::f64::consts::PI * std::f64::consts::PI / 4.0
    + std::f64::consts::PI
    - 5.0;

/// First absolute moment of a standard normal.
const MU1_SQ: f64 = 2.0 / std::f64::consts::PI;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BnsResult {
    pub rv: f64,
    pub bpv: f64,
    pub qpv: f64,
    pub vartheta: f64,
    pub delta: f64,
    pub z: f64,
}

/// Linear bipower-variation jump statistic from an equally spaced price
/// series: Z = sqrt(1/(delta * vartheta * QPV)) * (RV - BPV), asymptotically
/// standard normal under a continuous semimartingale null and exploding
/// upwards under jumps (one-sided test, reject for large Z).
pub fn bns_statistic(prices: &[f64], delta: f64) -> Result<BnsResult> {
    if prices.len() < 5 {
        return Err(LobError::InsufficientRecord(format!(
            "jump test needs at least 5 observations, got {}",
            prices.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(LobError::ParameterError("delta must be positive".into()));
    }
    let inc: Vec<f64> = prices.windows(2).map(|w| w[1] - w[0]).collect();
    let rv: f64 = inc.iter().map(|d| d * d).sum();
    let bpv: f64 = inc.windows(2).map(|w| w[0].abs() * w[1].abs()).sum::<f64>() / MU1_SQ;
    let qpv: f64 = inc
        .windows(4)
        .map(|w| w.iter().map(|d| d.abs()).product::<f64>())
        .sum::<f64>()
        / (delta * MU1_SQ * MU1_SQ);
    if qpv <= 0.0 {
        return Err(LobError::DegenerateStatistic(
            "zero quadpower variation (constant price series)".into(),
        ));
    }
    let z = (1.0 / (delta * VARTHETA * qpv)).sqrt() * (rv - bpv);
    Ok(BnsResult {
        rv,
        bpv,
        qpv,
        vartheta: VARTHETA,
        delta,
        z,
    })
}

/// Standardized small-move integrators reconstructed from a path, with
/// realized quadratic variation and cross-variation series (all cumulative,
/// index 0 = start).
#[derive(Debug, Clone)]
pub struct Integrators {
    pub zb: Vec<f64>,
    pub za: Vec<f64>,
    pub qv_b: Vec<f64>,
    pub qv_a: Vec<f64>,
    pub cross_qv: Vec<f64>,
}

pub fn build_integrators<M: ModelSpec>(tr: &Trajectory, spec: &M) -> Result<Integrators> {
    let p = tr.params;
    let k = tr.len();
    let mut out = Integrators {
        zb: Vec::with_capacity(k + 1),
        za: Vec::with_capacity(k + 1),
        qv_b: Vec::with_capacity(k + 1),
        qv_a: Vec::with_capacity(k + 1),
        cross_qv: Vec::with_capacity(k + 1),
    };
    out.zb.push(0.0);
    out.za.push(0.0);
    out.qv_b.push(0.0);
    out.qv_a.push(0.0);
    out.cross_qv.push(0.0);
    tr.replay(|j, s, e| {
        let db = e.bid_ticks() as f64 * p.dx;
        let da = e.ask_ticks() as f64 * p.dx;
        let small_b = if db != 0.0 && db.abs() <= p.delta_n + 1e-12 * p.delta_n {
            db
        } else {
            0.0
        };
        let small_a = if da != 0.0 && da.abs() <= p.delta_n + 1e-12 * p.delta_n {
            da
        } else {
            0.0
        };
        let (pb, pa) = (spec.small_drift(s, Side::Bid)?, spec.small_drift(s, Side::Ask)?);
        let (rb, ra) = (spec.small_vol(s, Side::Bid)?, spec.small_vol(s, Side::Ask)?);
        if rb < p.eta_n || ra < p.eta_n {
            return Err(LobError::AssumptionViolation(format!(
                "volatility floor violated at step {j}: r_b={rb}, r_a={ra}, floor={}",
                p.eta_n
            )));
        }
        let dzb = (small_b - p.dt * pb) / rb;
        let dza = (small_a - p.dt * pa) / ra;
        out.zb.push(out.zb.last().unwrap() + dzb);
        out.za.push(out.za.last().unwrap() + dza);
        out.qv_b.push(out.qv_b.last().unwrap() + dzb * dzb);
        out.qv_a.push(out.qv_a.last().unwrap() + dza * dza);
        out.cross_qv.push(out.cross_qv.last().unwrap() + dzb * dza);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct RemainderReport {
    pub sup_rphi: f64,
    pub sup_rb_l2: f64,
    pub sup_ra_l2: f64,
    pub n: u32,
}

/// Dense accumulator over tick cells with an incrementally maintained sum
/// of squares, periodically resummed to shed floating-point drift.
struct DenseAcc {
    lo: i64,
    vals: Vec<f64>,
    ssq: f64,
}

impl DenseAcc {
    fn new() -> Self {
        DenseAcc {
            lo: 0,
            vals: Vec::new(),
            ssq: 0.0,
        }
    }

    fn add(&mut self, j: i64, d: f64) {
        if d == 0.0 {
            return;
        }
        if self.vals.is_empty() {
            self.lo = j;
            self.vals.push(0.0);
        } else if j < self.lo {
            let pad = (self.lo - j) as usize;
            let mut grown = vec![0.0; pad + self.vals.len()];
            grown[pad..].copy_from_slice(&self.vals);
            self.vals = grown;
            self.lo = j;
        } else if j >= self.lo + self.vals.len() as i64 {
            self.vals.resize((j - self.lo + 1) as usize, 0.0);
        }
        let v = &mut self.vals[(j - self.lo) as usize];
        self.ssq -= *v * *v;
        *v += d;
        self.ssq += *v * *v;
    }

    fn resum(&mut self) {
        self.ssq = self.vals.iter().map(|v| v * v).sum();
    }
}

/// Sup-norms of the remainder processes along one path: the clock remainder
/// R_phi and the L2 norms of the volume remainders, computed in absolute
/// coordinates (shifting each increment once by the price displacement at
/// its own step; the common final-price shift is an L2 isometry and drops
/// out of the norm).
pub fn remainder_norms<M: ModelSpec>(tr: &Trajectory, spec: &M) -> Result<RemainderReport> {
    if tr.is_empty() {
        return Err(LobError::InsufficientRecord(
            "remainder reconstruction needs the full event record".into(),
        ));
    }
    let p = tr.params;
    let mut rphi = 0.0f64;
    let mut sup_rphi = 0.0f64;
    let mut acc_b = DenseAcc::new();
    let mut acc_a = DenseAcc::new();
    let mut sup_b_sq = 0.0f64;
    let mut sup_a_sq = 0.0f64;
    let bid0 = tr.initial.bid;
    let ask0 = tr.initial.ask;
    tr.replay(|j, s, e| {
        rphi += p.dt * (e.phi_dur - spec.mean_interarrival(s));
        sup_rphi = sup_rphi.max(rphi.abs());

        // tick displacement of the price accumulated before this step
        let shift_b = ((s.bid - bid0) / p.dx).round() as i64;
        let shift_a = ((s.ask - ask0) / p.dx).round() as i64;

        for (side, acc, shift) in [
            (Side::Bid, &mut acc_b, -shift_b),
            (Side::Ask, &mut acc_a, shift_a),
        ] {
            let f = spec.placement_mean(s, side)?;
            let (lo, hi) = f.window();
            for m in lo..hi {
                acc.add(m + shift, -f.value_at_cell(m));
            }
            let placed = match (e.kind, e.body, side) {
                (EventKind::B, EventBody::Place { omega, pi }, Side::Bid) => {
                    Some((s.vb.cell_index(pi), omega))
                }
                (EventKind::D, EventBody::Place { omega, pi }, Side::Ask) => {
                    Some((s.va.cell_index(pi), omega))
                }
                _ => None,
            };
            if let Some((cell, omega)) = placed {
                acc.add(cell + shift, omega / p.dx);
            }
            if j % 65_536 == 0 {
                acc.resum();
            }
        }
        sup_b_sq = sup_b_sq.max(acc_b.ssq);
        sup_a_sq = sup_a_sq.max(acc_a.ssq);
        Ok(())
    })?;
    Ok(RemainderReport {
        sup_rphi,
        sup_rb_l2: p.dv * (p.dx * sup_b_sq.max(0.0)).sqrt(),
        sup_ra_l2: p.dv * (p.dx * sup_a_sq.max(0.0)).sqrt(),
        n: p.n,
    })
}
