//! Large-jump transformation machinery: the coefficient function theta, its
//! grid discretization, prelimit/limit kernels, the state-free driving
//! measure Q, and numerical verifiers for the defining partition identity.

use crate::error::{LobError, Result};
use crate::model::{LOBState, ScalingParams};
use statrs::distribution::{Binomial, Discrete, Poisson};

/// A family (K^(n), K, Q, theta) describing the large jumps of one side.
///
/// Conventions: theta(s, .) is nondecreasing on [-M, M] and strictly
/// increasing wherever it is nonzero; K and Q never charge {0}; measures are
/// evaluated on half-open intervals [a, b).
pub trait KernelFamily: Sync {
    /// Common compact support bound M of Q and the mark space.
    fn m_bound(&self) -> f64;

    /// Limit jump-size transformation theta(s, x).
    fn theta(&self, s: &LOBState, x: f64) -> f64;

    /// Q([a, b)).
    fn q_interval(&self, a: f64, b: f64) -> f64;

    /// K(s, [a, b)).
    fn k_interval(&self, s: &LOBState, a: f64, b: f64) -> f64;

    /// Q-mass of the zero set of theta(s, .) within [a, b).
    fn q_zero_interval(&self, s: &LOBState, a: f64, b: f64) -> f64;

    /// Prelimit kernel K^(n)(s, .): (tick index, probability mass) atoms on
    /// the grid of resolution p.dx, sorted by tick.
    fn kn_atoms(&self, s: &LOBState, p: &ScalingParams) -> Result<Vec<(i64, f64)>>;

    /// Q as an atom list (location, mass) for mark sampling; families with a
    /// density discretize it on cells of width dx (mass placed at the left
    /// cell edge, matching the grid convention).
    fn q_atoms(&self, dx: f64) -> Vec<(f64, f64)> {
        let m = self.m_bound();
        let cells = (2.0 * m / dx).round() as i64;
        let mut out = Vec::new();
        for i in 0..cells {
            let a = -m + i as f64 * dx;
            let w = self.q_interval(a, a + dx);
            if w > 0.0 {
                out.push((a, w));
            }
        }
        out
    }
}

/// theta^(n) at a grid point: least tick multiple >= theta(s, x_j).
pub fn discretize_theta<F: KernelFamily + ?Sized>(
    fam: &F,
    s: &LOBState,
    j: i64,
    p: &ScalingParams,
) -> f64 {
    let th = fam.theta(s, j as f64 * p.dx);
    // tolerate representation error when theta is already a tick multiple
    (th / p.dx - 1e-9).ceil() * p.dx
}

/// theta^(n) off the grid: linear interpolation between grid values.
pub fn theta_n<F: KernelFamily + ?Sized>(
    fam: &F,
    s: &LOBState,
    x: f64,
    p: &ScalingParams,
) -> f64 {
    let j = (x / p.dx).floor() as i64;
    let lo = discretize_theta(fam, s, j, p);
    let hi = discretize_theta(fam, s, j + 1, p);
    let frac = (x - j as f64 * p.dx) / p.dx;
    lo + frac * (hi - lo)
}

/// Maximum, over probed states and the cells [a, a+dx) partitioning
/// [-M, M), of |Q(A) - K(s, theta(s, A)) - Q({x in A: theta(s, x) = 0})|.
///
/// The image theta(s, A) of a cell is the interval [theta(s,a), theta(s,b))
/// by monotonicity; K never charges {0}, so a cell straddling the zero set
/// splits exactly into the two right-hand terms.
pub fn verify_eq_q<F: KernelFamily + ?Sized>(
    fam: &F,
    states: &[LOBState],
    dx: f64,
) -> Result<f64> {
    if states.is_empty() || dx <= 0.0 {
        return Err(LobError::ProbeError(
            "need at least one probe state and dx > 0".into(),
        ));
    }
    let m = fam.m_bound();
    let cells = (2.0 * m / dx).round() as i64;
    let mut worst = 0.0f64;
    for s in states {
        for i in 0..cells {
            let a = -m + i as f64 * dx;
            let b = a + dx;
            let q = fam.q_interval(a, b);
            let img = fam.k_interval(s, fam.theta(s, a), fam.theta(s, b));
            let zero = fam.q_zero_interval(s, a, b);
            let d = (q - img - zero).abs();
            if !d.is_finite() {
                return Err(LobError::ProbeError(format!(
                    "kernel not evaluable on cell [{a}, {b})"
                )));
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Prelimit defect at one state: sum over grid cells of
/// |K^(n)(s, theta(s, cell)) - K(s, theta(s, cell))|.
pub fn prelimit_defect<F: KernelFamily + ?Sized>(
    fam: &F,
    s: &LOBState,
    p: &ScalingParams,
) -> Result<f64> {
    let atoms = fam.kn_atoms(s, p)?;
    // prefix sums over the tick-sorted atoms for O(log) interval queries
    let ticks: Vec<i64> = atoms.iter().map(|&(t, _)| t).collect();
    let mut prefix = Vec::with_capacity(atoms.len() + 1);
    prefix.push(0.0);
    for &(_, w) in &atoms {
        prefix.push(prefix.last().unwrap() + w);
    }
    let kn_mass = |a: f64, b: f64| -> f64 {
        let lo = (a / p.dx - 1e-9).ceil() as i64;
        let hi = (b / p.dx - 1e-9).ceil() as i64;
        let i0 = ticks.partition_point(|&t| t < lo);
        let i1 = ticks.partition_point(|&t| t < hi);
        prefix[i1] - prefix[i0]
    };
    let m = fam.m_bound();
    let cells = (2.0 * m / p.dx).round() as i64;
    let mut total = 0.0;
    for i in 0..cells {
        let a = -m + i as f64 * p.dx;
        let ta = fam.theta(s, a);
        let tb = fam.theta(s, a + p.dx);
        total += (kn_mass(ta, tb) - fam.k_interval(s, ta, tb)).abs();
    }
    if !total.is_finite() {
        return Err(LobError::ProbeError("non-finite prelimit defect".into()));
    }
    Ok(total)
}

/// Bijectivity of theta^(n)(s, .) onto the charged atoms of K^(n)(s, .):
/// every atom with positive mass must be the image of exactly one grid point.
pub fn check_injectivity<F: KernelFamily + ?Sized>(
    fam: &F,
    s: &LOBState,
    p: &ScalingParams,
) -> Result<()> {
    let atoms = fam.kn_atoms(s, p)?;
    let m = fam.m_bound();
    let jmax = (m / p.dx).round() as i64;
    let mut hits = std::collections::HashMap::new();
    for j in -jmax..=jmax {
        let img = (fam.theta(s, j as f64 * p.dx) / p.dx - 1e-9).ceil() as i64;
        *hits.entry(img).or_insert(0usize) += 1;
    }
    for &(t, w) in &atoms {
        if w <= 0.0 {
            continue;
        }
        match hits.get(&t).copied().unwrap_or(0) {
            1 => {}
            c => {
                return Err(LobError::ConstructionViolation(format!(
                    "charged atom at tick {t} has {c} preimages under the discretized transformation"
                )))
            }
        }
    }
    Ok(())
}

/// Location-scale jumps: theta(s, x) = sigma(s) x + mu(s) with sigma >= 1
/// and a continuous driving distribution function F on [-M, M]. The limit
/// kernel is the pushforward of F and Q = F itself; the prelimit kernel
/// charges grid point x_j with the F-mass of the cell [x_i, x_{i+1})
/// whose scaled image covers x_j.
pub struct LocationScaleFamily {
    m: f64,
    cdf: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    mu: Box<dyn Fn(&LOBState) -> f64 + Send + Sync>,
    sigma: Box<dyn Fn(&LOBState) -> f64 + Send + Sync>,
}

impl LocationScaleFamily {
    pub fn new(
        m: f64,
        cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu: impl Fn(&LOBState) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(&LOBState) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if m <= 0.0 {
            return Err(LobError::ParameterError("M must be positive".into()));
        }
        Ok(LocationScaleFamily {
            m,
            cdf: Box::new(cdf),
            mu: Box::new(mu),
            sigma: Box::new(sigma),
        })
    }

    fn f_interval(&self, a: f64, b: f64) -> f64 {
        let a = a.clamp(-self.m, self.m);
        let b = b.clamp(-self.m, self.m);
        if b <= a {
            0.0
        } else {
            ((self.cdf)(b) - (self.cdf)(a)).max(0.0)
        }
    }

    fn scale_at(&self, s: &LOBState) -> Result<f64> {
        let sg = (self.sigma)(s);
        if sg < 1.0 {
            return Err(LobError::ConstructionViolation(format!(
                "location-scale family requires sigma >= 1, got {sg}"
            )));
        }
        Ok(sg)
    }
}

impl KernelFamily for LocationScaleFamily {
    fn m_bound(&self) -> f64 {
        self.m
    }

    fn theta(&self, s: &LOBState, x: f64) -> f64 {
        (self.sigma)(s) * x + (self.mu)(s)
    }

    fn q_interval(&self, a: f64, b: f64) -> f64 {
        self.f_interval(a, b)
    }

    fn k_interval(&self, s: &LOBState, a: f64, b: f64) -> f64 {
        let mu = (self.mu)(s);
        let sg = (self.sigma)(s);
        self.f_interval((a - mu) / sg, (b - mu) / sg)
    }

    fn q_zero_interval(&self, _s: &LOBState, _a: f64, _b: f64) -> f64 {
        // theta vanishes at a single point and F is continuous
        0.0
    }

    fn kn_atoms(&self, s: &LOBState, p: &ScalingParams) -> Result<Vec<(i64, f64)>> {
        let sg = self.scale_at(s)?;
        let mu = (self.mu)(s);
        let dx = p.dx;
        let jmax = (self.m / dx).round() as i64;
        let imax = jmax;
        let mut out = Vec::new();
        for j in -jmax..=jmax {
            if (-1..=1).contains(&j) {
                continue;
            }
            let y = j as f64 * dx - mu;
            // largest i with sigma * x_i <= x_j - mu
            let i = (y / (sg * dx) + 1e-9).floor() as i64;
            if i < -imax || i > imax {
                continue;
            }
            // the covering condition can fail when sigma > 1 leaves gaps
            if y - sg * i as f64 * dx >= dx * (1.0 - 1e-9) {
                continue;
            }
            let w = self.f_interval(i as f64 * dx, (i + 1) as f64 * dx);
            if w > 0.0 {
                out.push((j, w));
            }
        }
        Ok(out)
    }
}

/// Integer-atom jumps: the prelimit kernel is binomial with success
/// probability p_n(s) ~ lambda/n on atoms m0(s)..M0(s), converging to a
/// Poisson(lambda) limit; Q is the Poisson(lambda) law truncated to 1..M.
/// theta shifts the charged range onto 1..(M0-m0+1)+... and vanishes below
/// it, with a linear ramp over the unit gap in between.
pub struct BinomialPoissonFamily {
    lambda: f64,
    m: u32,
    n_pre: u64,
    m0: Box<dyn Fn(&LOBState) -> u32 + Send + Sync>,
    m_up: Box<dyn Fn(&LOBState) -> u32 + Send + Sync>,
    p_n: Box<dyn Fn(&LOBState) -> f64 + Send + Sync>,
}

impl BinomialPoissonFamily {
    pub fn new(
        lambda: f64,
        m: u32,
        n_pre: u64,
        m0: impl Fn(&LOBState) -> u32 + Send + Sync + 'static,
        m_up: impl Fn(&LOBState) -> u32 + Send + Sync + 'static,
        p_n: impl Fn(&LOBState) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if lambda <= 0.0 || m == 0 {
            return Err(LobError::ParameterError(
                "need lambda > 0 and M >= 1".into(),
            ));
        }
        Ok(BinomialPoissonFamily {
            lambda,
            m,
            n_pre,
            m0: Box::new(m0),
            m_up: Box::new(m_up),
            p_n: Box::new(p_n),
        })
    }

    fn range_at(&self, s: &LOBState) -> Result<(u32, u32)> {
        let (lo, hi) = ((self.m0)(s), (self.m_up)(s));
        if !(1 <= lo && lo <= hi && hi <= self.m) {
            return Err(LobError::ParameterError(format!(
                "jump range must satisfy 1 <= m0 <= M0 <= M, got m0={lo}, M0={hi}, M={}",
                self.m
            )));
        }
        Ok((lo, hi))
    }

    fn pois_pmf(&self, k: u32) -> f64 {
        Poisson::new(self.lambda).unwrap().pmf(k as u64)
    }
}

impl KernelFamily for BinomialPoissonFamily {
    fn m_bound(&self) -> f64 {
        self.m as f64
    }

    fn theta(&self, s: &LOBState, x: f64) -> f64 {
        let (lo, hi) = match self.range_at(s) {
            Ok(r) => r,
            Err(_) => return f64::NAN,
        };
        let c = (self.m - hi) as f64; // M - M0
        let edge = c + lo as f64; // left end of the shifted charged range
        if x >= edge {
            x - c
        } else if x > edge - 1.0 {
            lo as f64 * (x - (edge - 1.0))
        } else {
            0.0
        }
    }

    fn q_interval(&self, a: f64, b: f64) -> f64 {
        (1..=self.m)
            .filter(|&k| {
                let kf = k as f64;
                kf >= a - 1e-9 && kf < b - 1e-9
            })
            .map(|k| self.pois_pmf(k))
            .sum()
    }

    fn k_interval(&self, s: &LOBState, a: f64, b: f64) -> f64 {
        let (lo, hi) = match self.range_at(s) {
            Ok(r) => r,
            Err(_) => return f64::NAN,
        };
        let c = self.m - hi;
        (lo..=hi)
            .filter(|&k| {
                let kf = k as f64;
                kf >= a - 1e-9 && kf < b - 1e-9
            })
            .map(|k| self.pois_pmf(k + c))
            .sum()
    }

    fn q_zero_interval(&self, s: &LOBState, a: f64, b: f64) -> f64 {
        let (lo, hi) = match self.range_at(s) {
            Ok(r) => r,
            Err(_) => return f64::NAN,
        };
        let cap = self.m - hi + lo - 1; // M - M0 + m0 - 1
        (1..=cap.min(self.m))
            .filter(|&k| {
                let kf = k as f64;
                kf >= a - 1e-9 && kf < b - 1e-9
            })
            .map(|k| self.pois_pmf(k))
            .sum()
    }

    fn kn_atoms(&self, s: &LOBState, p: &ScalingParams) -> Result<Vec<(i64, f64)>> {
        let (lo, hi) = self.range_at(s)?;
        let pn = (self.p_n)(s);
        if !(0.0 < pn && pn < 1.0) {
            return Err(LobError::ParameterError(format!(
                "binomial success probability must lie in (0,1), got {pn}"
            )));
        }
        let bin = Binomial::new(pn, self.n_pre)
            .map_err(|e| LobError::ParameterError(e.to_string()))?;
        let c = self.m - hi;
        let per_unit = (1.0 / p.dx).round() as i64;
        Ok((lo..=hi)
            .map(|k| (k as i64 * per_unit, bin.pmf((k + c) as u64)))
            .collect())
    }

    fn q_atoms(&self, _dx: f64) -> Vec<(f64, f64)> {
        (1..=self.m)
            .map(|k| (k as f64, self.pois_pmf(k)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridfn::GridFunction;

    fn probe_state(bid: f64, ask: f64, level: f64) -> LOBState {
        let vb = GridFunction::from_density(0.05, -2.0, 2.0, move |_| level);
        let va = GridFunction::from_density(0.05, -2.0, 2.0, move |_| 0.5 * level);
        LOBState {
            bid,
            vb,
            ask,
            va,
            time: 0.0,
        }
    }

    fn probes() -> Vec<LOBState> {
        vec![
            probe_state(1.0, 1.1, 1.0),
            probe_state(0.5, 1.5, 2.0),
            probe_state(3.0, 3.02, 0.3),
        ]
    }

    fn uniform_family(
        m: f64,
        lo: f64,
        hi: f64,
        mu: f64,
        sigma: f64,
    ) -> LocationScaleFamily {
        LocationScaleFamily::new(
            m,
            move |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            move |_| mu,
            move |_| sigma,
        )
        .unwrap()
    }

    #[test]
    fn theta_discretization_is_grid_ceiling() {
        let fam = uniform_family(1.0, -1.0, 1.0, 0.123, 1.0);
        let p = ScalingParams::hf(100, 1.0, 1.0);
        let s = probe_state(1.0, 1.1, 1.0);
        // theta(s, 0) = 0.123 -> 0.13
        assert!((discretize_theta(&fam, &s, 0, &p) - 0.13).abs() < 1e-12);
        // already a tick multiple stays put
        let fam2 = uniform_family(1.0, -1.0, 1.0, 0.12, 1.0);
        assert!((discretize_theta(&fam2, &s, 0, &p) - 0.12).abs() < 1e-12);
        // negative values ceil towards zero
        let fam3 = uniform_family(1.0, -1.0, 1.0, -0.005, 1.0);
        assert_eq!(discretize_theta(&fam3, &s, 0, &p), 0.0);
    }

    #[test]
    fn theta_discretization_bracket() {
        let fam = LocationScaleFamily::new(
            2.0,
            |x| 0.5 * (x / 2.0 + 1.0),
            |s: &LOBState| 0.37 * s.spread(),
            |s: &LOBState| 1.0 + s.bid * 0.11,
        )
        .unwrap();
        let p = ScalingParams::hf(64, 1.0, 2.0);
        for s in probes() {
            for j in -128..=128 {
                let th = fam.theta(&s, j as f64 * p.dx);
                let tn = discretize_theta(&fam, &s, j, &p);
                assert!(tn >= th - 1e-9 && tn < th + p.dx, "j={j}: {th} vs {tn}");
            }
        }
    }

    #[test]
    fn identity_transform_reduces_to_driving_law() {
        let fam = uniform_family(1.0, -1.0, 1.0, 0.0, 1.0);
        let s = probe_state(1.0, 1.1, 1.0);
        for (a, b) in [(-1.0, 1.0), (-0.5, 0.25), (0.1, 0.9)] {
            assert!((fam.k_interval(&s, a, b) - fam.q_interval(a, b)).abs() < 1e-15);
        }
        let defect = verify_eq_q(&fam, &probes(), 1.0 / 64.0).unwrap();
        assert!(defect < 1e-14, "defect {defect}");
    }

    #[test]
    fn shifted_uniform_pushforward() {
        // mu = 2, sigma = 1, F uniform on [-1, 1]: the image of the support
        // is [1, 3] and carries full mass
        let fam = uniform_family(3.0, -1.0, 1.0, 2.0, 1.0);
        let s = probe_state(1.0, 1.1, 1.0);
        assert!((fam.k_interval(&s, 1.0, 3.0 + 1e-12) - 1.0).abs() < 1e-12);
        assert!(fam.k_interval(&s, -3.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn location_scale_eq_q_defect_is_machine_zero() {
        let fam = LocationScaleFamily::new(
            3.0,
            |x| {
                // triangular law on [-1, 1]
                let x = x.clamp(-1.0, 1.0);
                if x < 0.0 {
                    0.5 * (1.0 + x).powi(2)
                } else {
                    1.0 - 0.5 * (1.0 - x).powi(2)
                }
            },
            |s: &LOBState| 0.5 + 0.1 * s.spread(),
            |s: &LOBState| 1.0 + s.imbalance(0.55).unwrap(),
        )
        .unwrap();
        let defect = verify_eq_q(&fam, &probes(), 1.0 / 100.0).unwrap();
        assert!(defect < 1e-13, "defect {defect}");
    }

    #[test]
    fn sigma_below_one_is_rejected() {
        let fam = uniform_family(1.0, -1.0, 1.0, 0.0, 0.8);
        let p = ScalingParams::hf(64, 1.0, 1.0);
        let s = probe_state(1.0, 1.1, 1.0);
        assert!(matches!(
            fam.kn_atoms(&s, &p),
            Err(LobError::ConstructionViolation(_))
        ));
    }

    #[test]
    fn poisson_atom_masses() {
        // lambda = 1, M = 3: masses e^-1, e^-1/2, e^-1/6 at k = 1, 2, 3
        let fam = BinomialPoissonFamily::new(
            1.0,
            3,
            10_000,
            |_| 1,
            |_| 3,
            |_| 1e-4,
        )
        .unwrap();
        let e1 = (-1.0f64).exp();
        let atoms = fam.q_atoms(1.0);
        assert_eq!(atoms.len(), 3);
        assert!((atoms[0].1 - e1).abs() < 1e-12);
        assert!((atoms[1].1 - e1 / 2.0).abs() < 1e-12);
        assert!((atoms[2].1 - e1 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn binomial_poisson_eq_q_defect_vanishes() {
        // state-dependent range: m0/M0 vary with the spread
        let fam = BinomialPoissonFamily::new(
            1.0,
            4,
            10_000,
            |s: &LOBState| if s.spread() > 0.5 { 2 } else { 1 },
            |s: &LOBState| if s.spread() > 0.05 { 4 } else { 3 },
            |_| 1e-4,
        )
        .unwrap();
        let defect = verify_eq_q(&fam, &probes(), 1.0 / 50.0).unwrap();
        assert!(defect < 1e-12, "defect {defect}");
    }

    #[test]
    fn degenerate_range_is_shifted_identity() {
        let m = 3u32;
        let fam = BinomialPoissonFamily::new(1.0, m, 1000, move |_| m, move |_| m, |_| 1e-3)
            .unwrap();
        let s = probe_state(1.0, 1.1, 1.0);
        for k in 3..=3 {
            assert!((fam.theta(&s, k as f64) - k as f64).abs() < 1e-12);
        }
        let defect = verify_eq_q(&fam, &[s], 0.25).unwrap();
        assert!(defect < 1e-12);
    }

    #[test]
    fn invalid_range_ordering_is_rejected() {
        let fam = BinomialPoissonFamily::new(1.0, 3, 1000, |_| 3, |_| 2, |_| 1e-3).unwrap();
        let p = ScalingParams::hf(100, 1.0, 3.0);
        let s = probe_state(1.0, 1.1, 1.0);
        assert!(matches!(
            fam.kn_atoms(&s, &p),
            Err(LobError::ParameterError(_))
        ));
    }

    #[test]
    fn binomial_prelimit_defect_within_stated_bound() {
        let n = 10_000u64;
        let lambda = 1.0;
        let pn = lambda / n as f64;
        let fam = BinomialPoissonFamily::new(lambda, 3, n, |_| 1, |_| 3, move |_| pn).unwrap();
        let p = ScalingParams::hf(100, 1.0, 3.0);
        let s = probe_state(1.0, 1.1, 1.0);
        let defect = prelimit_defect(&fam, &s, &p).unwrap();
        assert!(defect <= 2.0 * n as f64 * pn * pn, "defect {defect}");
        assert!(defect > 0.0);
    }

    #[test]
    fn prelimit_defect_decreases_as_n_doubles() {
        let s = probe_state(1.0, 1.1, 1.0);
        // binomial family: defect ~ 2n p_n^2 = 2 lambda^2 / n halves exactly
        let run_bin = |n: u64| {
            let pn = 1.0 / n as f64;
            let fam =
                BinomialPoissonFamily::new(1.0, 3, n, |_| 1, |_| 3, move |_| pn).unwrap();
            prelimit_defect(&fam, &s, &ScalingParams::hf(100, 1.0, 3.0)).unwrap()
        };
        let (d1, d2) = (run_bin(2_000), run_bin(4_000));
        assert!(d2 / d1 <= 0.75, "binomial ratio {}", d2 / d1);

        // location-scale family: cell-matching error shrinks with the grid
        let run_ls = |n: u32| {
            let fam = uniform_family(2.0, -1.0, 1.0, 0.3, 1.25);
            prelimit_defect(&fam, &s, &ScalingParams::hf(n, 1.0, 2.0)).unwrap()
        };
        let (e1, e2) = (run_ls(64), run_ls(128));
        assert!(e2 / e1 <= 0.75, "location-scale ratio {}", e2 / e1);
    }

    #[test]
    fn corrupted_family_is_detected() {
        // inflate Q by 10% while keeping K: the partition identity must break
        struct Corrupted(LocationScaleFamily);
        impl KernelFamily for Corrupted {
            fn m_bound(&self) -> f64 {
                self.0.m_bound()
            }
            fn theta(&self, s: &LOBState, x: f64) -> f64 {
                self.0.theta(s, x)
            }
            fn q_interval(&self, a: f64, b: f64) -> f64 {
                1.1 * self.0.q_interval(a, b)
            }
            fn k_interval(&self, s: &LOBState, a: f64, b: f64) -> f64 {
                self.0.k_interval(s, a, b)
            }
            fn q_zero_interval(&self, s: &LOBState, a: f64, b: f64) -> f64 {
                self.0.q_zero_interval(s, a, b)
            }
            fn kn_atoms(&self, s: &LOBState, p: &ScalingParams) -> Result<Vec<(i64, f64)>> {
                self.0.kn_atoms(s, p)
            }
        }
        let dx = 0.125;
        let fam = Corrupted(uniform_family(1.0, -1.0, 1.0, 0.0, 1.0));
        let defect = verify_eq_q(&fam, &probes(), dx).unwrap();
        // uniform cell mass is dx/2, so the defect is 10% of that
        assert!(defect >= 0.1 * (dx / 2.0) - 1e-12, "defect {defect}");
    }

    #[test]
    fn injectivity_holds_for_both_examples() {
        let p = ScalingParams::hf(64, 1.0, 3.0);
        let ls = uniform_family(3.0, -1.0, 1.0, 0.4, 1.3);
        let bp = BinomialPoissonFamily::new(1.0, 3, 10_000, |_| 1, |_| 3, |_| 1e-4).unwrap();
        for s in probes() {
            check_injectivity(&ls, &s, &p).unwrap();
            check_injectivity(&bp, &s, &p).unwrap();
        }
    }

    #[test]
    fn collision_is_a_construction_violation() {
        // constant theta maps every grid point onto the same atom
        struct Flat;
        impl KernelFamily for Flat {
            fn m_bound(&self) -> f64 {
                1.0
            }
            fn theta(&self, _: &LOBState, _: f64) -> f64 {
                0.5
            }
            fn q_interval(&self, _: f64, _: f64) -> f64 {
                0.0
            }
            fn k_interval(&self, _: &LOBState, _: f64, _: f64) -> f64 {
                0.0
            }
            fn q_zero_interval(&self, _: &LOBState, _: f64, _: f64) -> f64 {
                0.0
            }
            fn kn_atoms(&self, _: &LOBState, p: &ScalingParams) -> Result<Vec<(i64, f64)>> {
                Ok(vec![((0.5 / p.dx).round() as i64, 1.0)])
            }
        }
        let p = ScalingParams::hf(64, 1.0, 1.0);
        let s = probe_state(1.0, 1.1, 1.0);
        assert!(matches!(
            check_injectivity(&Flat, &s, &p),
            Err(LobError::ConstructionViolation(_))
        ));
    }
}
