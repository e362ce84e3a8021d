//! Ensemble execution, empirical distribution distances, micro-vs-limit
//! convergence experiments, and numerical assumption validation.

use crate::diagnostics::{build_integrators, remainder_norms};
use crate::error::{LobError, Result};
use crate::kernels::{verify_eq_q, KernelFamily};
use crate::limit::{simulate_eta, time_change, LimitCoefficients};
use crate::micro::simulate_path;
use crate::model::{LOBState, ModelSpec, ScalingParams, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Scalar functionals of the book state sampled at a probe time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeSample {
    pub bid: f64,
    pub ask: f64,
    pub spread: f64,
    pub imbalance: f64,
    pub vb_l2: f64,
    pub va_l2: f64,
}

impl ProbeSample {
    fn of(s: &LOBState, h: f64) -> Self {
        ProbeSample {
            bid: s.bid,
            ask: s.ask,
            spread: s.spread(),
            imbalance: s.imbalance(h).unwrap_or(f64::NAN),
            vb_l2: s.vb.l2_norm(),
            va_l2: s.va.l2_norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub probes: Vec<f64>,
    /// samples[probe][path]; failed paths are omitted.
    pub samples: Vec<Vec<ProbeSample>>,
    pub failures: Vec<(usize, String)>,
    pub n_paths: usize,
}

/// Independent per-path seed derived from the master seed and the path
/// index, so results are invariant under execution order.
pub fn path_seed(master: u64, index: usize) -> u64 {
    let mut x = master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn collect_ensemble<R: Send>(
    n_paths: usize,
    probes: &[f64],
    results: Vec<(usize, Result<(Vec<ProbeSample>, R)>)>,
) -> Result<(EnsembleSummary, Vec<R>)> {
    let mut samples = vec![Vec::with_capacity(n_paths); probes.len()];
    let mut extras = Vec::with_capacity(n_paths);
    let mut failures = Vec::new();
    for (idx, r) in results {
        match r {
            Ok((row, extra)) => {
                for (p, v) in row.into_iter().enumerate() {
                    samples[p].push(v);
                }
                extras.push(extra);
            }
            Err(e) => failures.push((idx, e.to_string())),
        }
    }
    if failures.len() * 100 > n_paths {
        let first = failures[0].1.clone();
        return Err(LobError::EnsembleFailure {
            failed: failures.len(),
            total: n_paths,
            first,
        });
    }
    Ok((
        EnsembleSummary {
            probes: probes.to_vec(),
            samples,
            failures,
            n_paths,
        },
        extras,
    ))
}

/// Run a micro-model ensemble, sampling the book at the probe times (in
/// physical time). `extra` post-processes each full trajectory before it is
/// dropped (pass `|_| Ok(())` when only probes are wanted).
pub fn run_ensemble_micro<M, F, R>(
    spec: &M,
    s0: &LOBState,
    aux0: M::Aux,
    n_paths: usize,
    master_seed: u64,
    probes: &[f64],
    imbalance_depth: f64,
    extra: F,
) -> Result<(EnsembleSummary, Vec<R>)>
where
    M: ModelSpec,
    F: Fn(&Trajectory) -> Result<R> + Sync,
    R: Send,
{
    if n_paths == 0 {
        return Err(LobError::ParameterError("need at least one path".into()));
    }
    let stride = (spec.scaling().ticks() / 16).max(1);
    let results: Vec<_> = (0..n_paths)
        .into_par_iter()
        .map(|idx| {
            let run = || -> Result<(Vec<ProbeSample>, R)> {
                let (tr, _) = simulate_path(
                    spec,
                    s0,
                    aux0.clone(),
                    path_seed(master_seed, idx),
                    stride,
                )?;
                let mut row = Vec::with_capacity(probes.len());
                for &t in probes {
                    row.push(ProbeSample::of(&tr.physical_time_view(t)?, imbalance_depth));
                }
                Ok((row, extra(&tr)?))
            };
            (idx, run())
        })
        .collect();
    collect_ensemble(n_paths, probes, results)
}

/// Run a limit-system ensemble, sampling the composed dynamics S = eta o
/// zeta at the probe times.
pub fn run_ensemble_limit(
    c: &LimitCoefficients,
    h: f64,
    t_horizon: f64,
    init: &LOBState,
    n_paths: usize,
    master_seed: u64,
    probes: &[f64],
    imbalance_depth: f64,
) -> Result<EnsembleSummary> {
    if n_paths == 0 {
        return Err(LobError::ParameterError("need at least one path".into()));
    }
    let results: Vec<_> = (0..n_paths)
        .into_par_iter()
        .map(|idx| {
            let run = || -> Result<(Vec<ProbeSample>, ())> {
                let path = simulate_eta(c, h, t_horizon, init, path_seed(master_seed, idx), 1)?;
                let tc = time_change(&path)?;
                let mut row = Vec::with_capacity(probes.len());
                for &t in probes {
                    let m = tc.index(t);
                    let s = path.snapshot_at(m).ok_or_else(|| {
                        LobError::InsufficientRecord(format!("missing snapshot {m}"))
                    })?;
                    row.push(ProbeSample::of(s, imbalance_depth));
                }
                Ok((row, ()))
            };
            (idx, run())
        })
        .collect();
    collect_ensemble(n_paths, probes, results).map(|(s, _)| s)
}

/// Exact two-sample Kolmogorov-Smirnov distance between empirical laws.
pub fn ks_distance(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(LobError::ParameterError("empty sample".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    Ok(d)
}

/// Exact empirical 1-Wasserstein distance: integral of |F - G| over the
/// merged support (reduces to the sorted coupling for equal sizes).
pub fn w1_distance(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(LobError::ParameterError("empty sample".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut pts: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let (mut i, mut j, mut w) = (0usize, 0usize, 0.0f64);
    for win in pts.windows(2) {
        while i < a.len() && a[i] <= win[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= win[0] {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        w += (fa - fb).abs() * (win[1] - win[0]);
    }
    Ok(w)
}

/// Monte Carlo resolution floor: mean KS distance between random halves of
/// the sample (distances below this are statistically indistinguishable
/// from zero).
pub fn bootstrap_ks_floor(sample: &[f64], reps: usize, seed: u64) -> Result<f64> {
    if sample.len() < 4 {
        return Err(LobError::ParameterError("sample too small".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..reps {
        let mut idx: Vec<usize> = (0..sample.len()).collect();
        // Fisher-Yates
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let half = sample.len() / 2;
        let a: Vec<f64> = idx[..half].iter().map(|&i| sample[i]).collect();
        let b: Vec<f64> = idx[half..].iter().map(|&i| sample[i]).collect();
        total += ks_distance(&a, &b)?;
    }
    Ok(total / reps as f64)
}

/// Chi-square goodness-of-fit p-value for iid Poisson(lambda) counts,
/// merging bins from the right until every expected count is >= 5.
pub fn poisson_gof_pvalue(counts: &[u64], lambda: f64) -> Result<f64> {
    if counts.len() < 20 || lambda <= 0.0 {
        return Err(LobError::ParameterError(
            "need >= 20 observations and lambda > 0".into(),
        ));
    }
    let n = counts.len() as f64;
    let kmax = *counts.iter().max().unwrap() as usize;
    // expected per value of k, with the tail lumped into the last bin
    let mut pmf = Vec::with_capacity(kmax + 2);
    let mut p = (-lambda).exp();
    let mut cum = 0.0;
    for k in 0..=kmax {
        pmf.push(p);
        cum += p;
        p *= lambda / (k + 1) as f64;
    }
    pmf.push((1.0 - cum).max(0.0)); // tail
    let mut obs = vec![0.0f64; kmax + 2];
    for &c in counts {
        obs[c as usize] += 1.0;
    }
    // merge from the right so expected >= 5 everywhere
    let mut exp_bins: Vec<f64> = pmf.iter().map(|q| q * n).collect();
    let mut obs_bins = obs;
    let mut i = exp_bins.len() - 1;
    while i > 0 {
        if exp_bins[i] < 5.0 {
            exp_bins[i - 1] += exp_bins[i];
            obs_bins[i - 1] += obs_bins[i];
            exp_bins.remove(i);
            obs_bins.remove(i);
        }
        i -= 1;
    }
    // a deficient leading bin merges forward
    while exp_bins.len() > 1 && exp_bins[0] < 5.0 {
        exp_bins[1] += exp_bins[0];
        obs_bins[1] += obs_bins[0];
        exp_bins.remove(0);
        obs_bins.remove(0);
    }
    if exp_bins.len() < 2 {
        return Err(LobError::DegenerateStatistic(
            "fewer than two usable bins".into(),
        ));
    }
    let chi2: f64 = exp_bins
        .iter()
        .zip(&obs_bins)
        .map(|(e, o)| (o - e) * (o - e) / e)
        .sum();
    let df = (exp_bins.len() - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| LobError::ParameterError(e.to_string()))?;
    Ok(1.0 - dist.cdf(chi2))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub metric: String,
    /// 0 denotes the limit system.
    pub n: u32,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
}

impl ConvergenceReport {
    pub fn push(&mut self, metric: &str, n: u32, t: f64, value: f64) {
        self.rows.push(ReportRow {
            metric: metric.into(),
            n,
            t,
            value,
        });
    }

    pub fn get(&self, metric: &str, n: u32, t: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.n == n && (r.t - t).abs() < 1e-12)
            .map(|r| r.value)
    }
}

pub struct ConvergenceParams {
    pub n_paths: usize,
    pub probes: Vec<f64>,
    pub limit_step: f64,
    pub t_horizon: f64,
    pub imbalance_depth: f64,
    pub seed: u64,
    pub with_remainders: bool,
    pub with_qv: bool,
}

/// Compare fixed-time marginals of a micro family against its limit:
/// KS and W1 distances of B(t) and A(t) per n and probe, the Monte Carlo
/// floor of the limit ensemble, and optional remainder/QV columns.
pub fn convergence_report<M, F>(
    family: &[(u32, M)],
    init_of: F,
    limit: &LimitCoefficients,
    limit_init: &LOBState,
    cp: &ConvergenceParams,
) -> Result<ConvergenceReport>
where
    M: ModelSpec<Aux = u64>,
    F: Fn(&M) -> LOBState,
{
    let mut rep = ConvergenceReport::default();
    let lim = run_ensemble_limit(
        limit,
        cp.limit_step,
        cp.t_horizon,
        limit_init,
        cp.n_paths,
        cp.seed ^ 0xABCD,
        &cp.probes,
        cp.imbalance_depth,
    )?;
    for (pi, &t) in cp.probes.iter().enumerate() {
        let bids: Vec<f64> = lim.samples[pi].iter().map(|s| s.bid).collect();
        let floor = bootstrap_ks_floor(&bids, 32, cp.seed ^ 0x5A5A)?;
        rep.push("ks_floor_bid", 0, t, floor);
    }
    for (n, spec) in family {
        let s0 = init_of(spec);
        let want_extra = cp.with_remainders || cp.with_qv;
        let (ens, extras) = run_ensemble_micro(
            spec,
            &s0,
            0u64,
            cp.n_paths,
            cp.seed ^ (*n as u64) << 32,
            &cp.probes,
            cp.imbalance_depth,
            |tr| -> Result<(f64, f64, f64)> {
                if !want_extra {
                    return Ok((0.0, 0.0, 0.0));
                }
                let rem = if cp.with_remainders {
                    let r = remainder_norms(tr, spec)?;
                    r.sup_rb_l2 * r.sup_rb_l2
                } else {
                    0.0
                };
                let (qv, cqv) = if cp.with_qv {
                    let ints = build_integrators(tr, spec)?;
                    (ints.qv_b[tr.len()], ints.cross_qv[tr.len()])
                } else {
                    (0.0, 0.0)
                };
                Ok((rem, qv, cqv))
            },
        )?;
        for (pi, &t) in cp.probes.iter().enumerate() {
            let mb: Vec<f64> = ens.samples[pi].iter().map(|s| s.bid).collect();
            let lb: Vec<f64> = lim.samples[pi].iter().map(|s| s.bid).collect();
            let ma: Vec<f64> = ens.samples[pi].iter().map(|s| s.ask).collect();
            let la: Vec<f64> = lim.samples[pi].iter().map(|s| s.ask).collect();
            rep.push("ks_bid", *n, t, ks_distance(&mb, &lb)?);
            rep.push("w1_bid", *n, t, w1_distance(&mb, &lb)?);
            rep.push("ks_ask", *n, t, ks_distance(&ma, &la)?);
            rep.push("w1_ask", *n, t, w1_distance(&ma, &la)?);
        }
        let paths = extras.len().max(1) as f64;
        if cp.with_remainders {
            let mean_rem: f64 = extras.iter().map(|e| e.0).sum::<f64>() / paths;
            rep.push("mean_sup_rb_l2_sq", *n, cp.t_horizon, mean_rem);
        }
        if cp.with_qv {
            let mean_qv: f64 = extras.iter().map(|e| e.1).sum::<f64>() / paths;
            let mean_cqv: f64 = extras.iter().map(|e| e.2).sum::<f64>() / paths;
            rep.push("mean_qv_b", *n, cp.t_horizon, mean_qv);
            rep.push("mean_cross_qv", *n, cp.t_horizon, mean_cqv);
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub key: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    fn push(&mut self, key: &str, ok: bool, detail: String) {
        self.rows.push(ValidationRow {
            key: key.into(),
            ok,
            detail,
        });
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }
}

/// Numerically check the standing assumptions at a finite set of probe
/// states: coefficient bounds, the volatility floor, large-jump supports,
/// scaling ratios, sampled Lipschitz ratios, and (optionally) the partition
/// identity of an attached kernel family. Reports, never throws on a
/// violation.
pub fn validate_assumptions<M: ModelSpec>(
    spec: &M,
    p: &ScalingParams,
    probe_states: &[LOBState],
    kernel: Option<&dyn KernelFamily>,
) -> ValidationReport
where
    M::Aux: Default,
{
    use crate::model::Side;
    let mut rep = ValidationReport::default();

    rep.push(
        "scaling.dt_over_dx",
        p.dt / p.dx < 0.1,
        format!("dt/dx = {} (target: small, -> 0)", p.dt / p.dx),
    );
    rep.push(
        "scaling.dt_over_dv",
        (p.dt / p.dv - 1.0).abs() < 1e-9,
        format!("dt/dv = {} (target 1)", p.dt / p.dv),
    );

    let mut phi_ok = true;
    let mut r_floor_ok = true;
    let mut p_bound: f64 = 0.0;
    let mut r_bound: f64 = 0.0;
    let mut support_ok = true;
    let mut eval_err = None;
    for s in probe_states {
        let phi = spec.mean_interarrival(s);
        if !(phi > 0.0 && phi <= 1.0) {
            phi_ok = false;
        }
        for side in [Side::Bid, Side::Ask] {
            match (spec.small_drift(s, side), spec.small_vol(s, side)) {
                (Ok(dr), Ok(vo)) => {
                    p_bound = p_bound.max(dr.abs());
                    r_bound = r_bound.max(vo);
                    if vo < p.eta_n {
                        r_floor_ok = false;
                    }
                }
                (Err(e), _) | (_, Err(e)) => eval_err = Some(e.to_string()),
            }
            match spec.large_kernel(s, &Default::default(), side) {
                Ok(atoms) => {
                    if atoms
                        .iter()
                        .any(|&(j, _)| (j as f64 * p.dx).abs() <= p.delta_n + 1e-12)
                    {
                        support_ok = false;
                    }
                }
                Err(e) => eval_err = Some(e.to_string()),
            }
        }
    }
    rep.push(
        "clock.mean_in_unit_interval",
        phi_ok,
        "conditional mean interarrival multiplier in (0,1]".into(),
    );
    rep.push(
        "coefficients.volatility_floor",
        r_floor_ok,
        format!("min floor eta_n = {}", p.eta_n),
    );
    rep.push(
        "coefficients.bounded",
        p_bound.is_finite() && r_bound.is_finite(),
        format!("max |p| = {p_bound}, max r = {r_bound}"),
    );
    rep.push(
        "jumps.support_outside_threshold",
        support_ok,
        format!("all large-jump atoms exceed delta_n = {}", p.delta_n),
    );
    if let Some(e) = eval_err {
        rep.push("coefficients.evaluable", false, e);
    }

    // sampled Lipschitz ratios of the fluid source over probe pairs
    let mut lip: f64 = 0.0;
    for w in probe_states.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dist = (a.bid - b.bid).abs()
            + (a.ask - b.ask).abs()
            + {
                let mut d2 = 0.0;
                let (lo1, hi1) = a.vb.window();
                let (lo2, hi2) = b.vb.window();
                for j in lo1.min(lo2)..hi1.max(hi2) {
                    d2 += (a.vb.value_at_cell(j) - b.vb.value_at_cell(j)).powi(2);
                }
                (d2 * a.vb.spacing()).sqrt()
            };
        if dist <= 1e-12 {
            continue;
        }
        for side in [Side::Bid, Side::Ask] {
            if let (Ok(fa), Ok(fb)) = (spec.placement_mean(a, side), spec.placement_mean(b, side))
            {
                let mut d2 = 0.0;
                let (lo1, hi1) = fa.window();
                let (lo2, hi2) = fb.window();
                for j in lo1.min(lo2)..hi1.max(hi2) {
                    d2 += (fa.value_at_cell(j) - fb.value_at_cell(j)).powi(2);
                }
                lip = lip.max((d2 * fa.spacing()).sqrt() / dist);
            }
        }
    }
    rep.push(
        "placements.sampled_lipschitz_ratio",
        lip.is_finite(),
        format!("max observed ratio {lip}"),
    );

    if let Some(fam) = kernel {
        match verify_eq_q(fam, probe_states, p.dx) {
            Ok(defect) => rep.push(
                "kernel.partition_identity_defect",
                defect <= 1e-9,
                format!("max defect {defect}"),
            ),
            Err(e) => rep.push("kernel.partition_identity_defect", false, e.to_string()),
        }
    }

    // non-negativity trigger: the negative part of the fluid source must
    // vanish wherever the density does
    let mut nonneg_ok = true;
    for s in probe_states {
        for side in [Side::Bid, Side::Ask] {
            let v = match side {
                Side::Bid => &s.vb,
                Side::Ask => &s.va,
            };
            if let Ok(f) = spec.placement_mean(s, side) {
                let (lo, hi) = f.window();
                for j in lo..hi {
                    if f.value_at_cell(j) < -1e-12 && v.value_at_cell(j) <= 0.0 {
                        nonneg_ok = false;
                    }
                }
            }
        }
    }
    rep.push(
        "volumes.nonnegativity_trigger",
        nonneg_ok,
        "negative source mass only where volume is positive".into(),
    );
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridfn::GridFunction;
    use crate::imbalance::{StudyModel, StudyParams};
    use crate::limit::MarkMeasure;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn ks_and_w1_trivial_values() {
        let same = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&same, &same).unwrap(), 0.0);
        assert_eq!(w1_distance(&same, &same).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        // sorted-coupling hand computation
        assert!((w1_distance(&[0.0, 1.0], &[0.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn distances_are_metrics_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..16).map(|_| rng.random::<f64>() * 4.0).collect()
            };
            let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            for d in [ks_distance, w1_distance] {
                let (xy, yx) = (d(&x, &y).unwrap(), d(&y, &x).unwrap());
                assert!((xy - yx).abs() < 1e-12);
                let (xz, zy) = (d(&x, &z).unwrap(), d(&z, &y).unwrap());
                assert!(xy <= xz + zy + 1e-12);
            }
        }
    }

    #[test]
    fn seed_derivation_is_order_free() {
        let a = path_seed(99, 3);
        let b = path_seed(99, 4);
        assert_ne!(a, b);
        assert_eq!(a, path_seed(99, 3));
    }

    fn tiny_model(n: u32) -> StudyModel {
        let p = ScalingParams::hf(n, 0.05, 5.0);
        let mut sp = StudyParams::first_run(n);
        sp.jbp = 2.0 * p.dx;
        sp.jap = 2.0 * p.dx;
        sp.jbm = -2.0 * p.dx;
        sp.jam = -2.0 * p.dx;
        StudyModel::new(p, sp).unwrap()
    }

    #[test]
    fn single_path_ensemble_reproduces_direct_simulation() {
        let m = tiny_model(16);
        let s0 = StudyModel::initial_state(m.scaling());
        let probes = [0.02, 0.05];
        let (ens, _) =
            run_ensemble_micro(&m, &s0, 0u64, 1, 7, &probes, 0.55, |_| Ok(())).unwrap();
        let (tr, _) = crate::micro::simulate_path(&m, &s0, 0u64, path_seed(7, 0), 64).unwrap();
        for (pi, &t) in probes.iter().enumerate() {
            let direct = tr.physical_time_view(t).unwrap();
            assert_eq!(ens.samples[pi][0].bid, direct.bid);
            assert_eq!(ens.samples[pi][0].ask, direct.ask);
        }
        assert!(ens.failures.is_empty());
    }

    #[test]
    fn ensemble_spread_never_collapses() {
        let m = tiny_model(32);
        let s0 = StudyModel::initial_state(m.scaling());
        let (ens, _) =
            run_ensemble_micro(&m, &s0, 0u64, 24, 11, &[0.05], 0.55, |_| Ok(())).unwrap();
        let dx = m.scaling().dx;
        for s in &ens.samples[0] {
            assert!(s.spread >= dx - 1e-12);
        }
    }

    #[test]
    fn limit_self_distance_sits_at_monte_carlo_floor() {
        let m = tiny_model(16);
        let c = m.limit_coefficients(1.0 / 16.0);
        let init = StudyModel::initial_state(m.scaling());
        let a = run_ensemble_limit(&c, 1.0 / 64.0, 0.05, &init, 64, 5, &[0.05], 0.55).unwrap();
        let b = run_ensemble_limit(&c, 1.0 / 64.0, 0.05, &init, 64, 6, &[0.05], 0.55).unwrap();
        let xa: Vec<f64> = a.samples[0].iter().map(|s| s.bid).collect();
        let xb: Vec<f64> = b.samples[0].iter().map(|s| s.bid).collect();
        let d = ks_distance(&xa, &xb).unwrap();
        let floor = bootstrap_ks_floor(&xa, 32, 1).unwrap();
        assert!(d <= 3.0 * floor.max(0.05), "d = {d}, floor = {floor}");
    }

    #[test]
    fn poisson_gof_accepts_true_law_and_rejects_wrong_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pois = Poisson::new(2.0).unwrap();
        let counts: Vec<u64> = (0..1500).map(|_| pois.sample(&mut rng) as u64).collect();
        let p_ok = poisson_gof_pvalue(&counts, 2.0).unwrap();
        assert!(p_ok > 0.01, "p = {p_ok}");
        let p_bad = poisson_gof_pvalue(&counts, 3.0).unwrap();
        assert!(p_bad < 1e-6, "p = {p_bad}");
    }

    #[test]
    fn validation_flags_constructed_violation() {
        use crate::model::{Event, LOBState, Side};
        use rand::RngCore;
        struct ZeroVol {
            p: ScalingParams,
        }
        impl ModelSpec for ZeroVol {
            type Aux = u64;
            fn scaling(&self) -> &ScalingParams {
                &self.p
            }
            fn sample_event(
                &self,
                _s: &LOBState,
                _a: &u64,
                _r: &mut dyn RngCore,
            ) -> crate::Result<Event> {
                Ok(Event::bid_move(1, 1.0))
            }
            fn update_aux(&self, _a: &mut u64, _r: &mut dyn RngCore) {}
            fn mean_interarrival(&self, _s: &LOBState) -> f64 {
                1.0
            }
            fn small_drift(&self, _s: &LOBState, _side: Side) -> crate::Result<f64> {
                Ok(0.0)
            }
            fn small_vol(&self, _s: &LOBState, _side: Side) -> crate::Result<f64> {
                Ok(0.0)
            }
            fn placement_mean(&self, s: &LOBState, _side: Side) -> crate::Result<GridFunction> {
                Ok(GridFunction::zero(s.vb.spacing(), -8.0, 8.0))
            }
            fn large_kernel(
                &self,
                _s: &LOBState,
                _a: &u64,
                _side: Side,
            ) -> crate::Result<Vec<(i64, f64)>> {
                Ok(vec![])
            }
        }
        let p = ScalingParams::hf(16, 0.05, 5.0);
        let s0 = StudyModel::initial_state(&p);
        let bad = ZeroVol { p };
        let rep = validate_assumptions(&bad, &p, &[s0.clone()], None);
        assert!(!rep.all_ok());
        assert!(rep
            .rows
            .iter()
            .any(|r| r.key == "coefficients.volatility_floor" && !r.ok));

        // the reference model passes at its initial state
        let m = tiny_model(16);
        let rep2 = validate_assumptions(&m, m.scaling(), &[s0], None);
        assert!(rep2.all_ok(), "{:?}", rep2.rows);
    }

    #[test]
    fn mark_measure_sampling_respects_weights() {
        let q = MarkMeasure::new(vec![(-1.0, 0.25), (1.0, 0.75)]).unwrap();
        assert!((q.mass() - 1.0).abs() < 1e-12);
    }

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
}
