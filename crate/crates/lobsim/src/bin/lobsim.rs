//! Command-line entry point: simulation, convergence experiments, jump
//! testing, assumption validation, and reproduction of the two reference
//! scenarios. Emits CSV/JSON artifacts; exit codes 0 ok / 2 validation /
//! 3 runtime.

use clap::{Args, Parser, Subcommand};
use lobsim::config::Config;
use lobsim::diagnostics::bns_statistic;
use lobsim::harness::{
    convergence_report, path_seed, validate_assumptions, ConvergenceParams,
};
use lobsim::imbalance::StudyModel;
use lobsim::limit::{simulate_eta, EtaPath};
use lobsim::micro::simulate_path;
use lobsim::model::{LOBState, ModelSpec, Side, Trajectory};
use lobsim::{LobError, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "lobsim", about = "Order book simulation and limit diagnostics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Model size (tick resolution 1/n).
    #[arg(long, global = true)]
    n: Option<u32>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (fallback: LOBSIM_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate event-level paths and write trajectory/density CSVs.
    SimulateMicro,
    /// Simulate the limit system and write trajectory/jump-log CSVs.
    SimulateLimit,
    /// Micro-vs-limit distributional convergence report.
    Converge,
    /// Bipower-variation jump test on a (time, price) CSV.
    Jumptest { input: PathBuf },
    /// Numerical assumption checks at probe states.
    Validate,
    /// Re-run a reference scenario (1 or 2) at n = 100, T = 2.
    Figures {
        #[arg(long)]
        run: u8,
    },
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .common
        .threads
        .or_else(|| {
            std::env::var("LOBSIM_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                LobError::Validation { .. } | LobError::ParameterError(_) => 2,
                _ => 3,
            };
            std::process::exit(code);
        }
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(path) => Config::from_json(&fs::read_to_string(path)?)?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        cfg.harness.seed = seed;
    }
    if let Some(paths) = c.paths {
        cfg.harness.paths = paths;
    }
    if let Some(n) = c.n {
        cfg.scaling.n = n;
    }
    if let Some(dir) = &c.out_dir {
        cfg.output.out_dir = dir.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.out_dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn emit_resolved(cfg: &Config, dir: &Path) -> Result<()> {
    write_file(&dir.join("resolved_config.json"), &cfg.resolved()?.to_json()?)
}

fn trajectory_csv(tr: &Trajectory, h: f64) -> Result<String> {
    let mut out = String::from("k,tau,bid,ask,spread,imbalance\n");
    let mut push = |k: usize, s: &LOBState| {
        let im = s.imbalance(h).unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{k},{},{},{},{},{im}\n",
            tr.tau[k],
            s.bid,
            s.ask,
            s.spread()
        ));
    };
    tr.replay(|k, before, _e| {
        push(k - 1, before);
        Ok(())
    })?;
    push(tr.len(), &tr.state_at(tr.len())?);
    Ok(out)
}

fn density_csv(states: &[(f64, LOBState)]) -> String {
    let mut out = String::from("t,x,v_b,v_a,u_b,u_a\n");
    for (t, s) in states {
        let dx = s.vb.spacing();
        let (lo_b, hi_b) = s.vb.window();
        let (lo_a, hi_a) = s.va.window();
        for j in lo_b.min(lo_a)..hi_b.max(hi_a) {
            let x = (j as f64 + 0.5) * dx;
            let vb = s.vb.eval(x);
            let va = s.va.eval(x);
            // absolute-coordinate views of the visible books
            let ub = if x <= s.bid { s.vb.eval(s.bid - x) } else { 0.0 };
            let ua = if x >= s.ask { s.va.eval(x - s.ask) } else { 0.0 };
            out.push_str(&format!("{t},{x},{vb},{va},{ub},{ua}\n"));
        }
    }
    out
}

fn limit_trajectory_csv(path: &EtaPath, h: f64) -> String {
    let mut out = String::from("k,tau,bid,ask,spread,imbalance\n");
    for k in 0..=path.steps() {
        let (spread, im) = match path.snapshot_at(k) {
            Some(s) => (s.spread(), s.imbalance(h).unwrap_or(f64::NAN)),
            None => (path.ask[k] - path.bid[k], f64::NAN),
        };
        out.push_str(&format!(
            "{k},{},{},{},{spread},{im}\n",
            path.tau_eta[k], path.bid[k], path.ask[k]
        ));
    }
    out
}

fn jump_log_csv(path: &EtaPath) -> String {
    let mut out = String::from("t,side,y,size\n");
    for j in &path.jumps {
        let side = match j.side {
            Side::Bid => "bid",
            Side::Ask => "ask",
        };
        out.push_str(&format!("{},{side},{},{}\n", j.time, j.mark, j.size));
    }
    out
}

fn snapshot_times(cfg: &Config) -> Vec<f64> {
    let t = cfg.scaling.t_horizon;
    let k = cfg.output.snapshots.max(1);
    (1..=k).map(|i| t * i as f64 / k as f64).collect()
}

fn simulate_micro(cfg: &Config, dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let s0 = StudyModel::initial_state(model.scaling());
    let stride = (model.scaling().ticks() / 64).max(1);
    let h = cfg.model_params()?.h;
    for i in 0..cfg.harness.paths {
        let seed = path_seed(cfg.harness.seed, i);
        let (tr, checks) = simulate_path(&model, &s0, 0u64, seed, stride)?;
        write_file(
            &dir.join(format!("trajectory_{i:04}.csv")),
            &trajectory_csv(&tr, h)?,
        )?;
        let mut states = Vec::new();
        for t in snapshot_times(cfg) {
            states.push((t, tr.physical_time_view(t)?));
        }
        write_file(
            &dir.join(format!("densities_{i:04}.csv")),
            &density_csv(&states),
        )?;
        println!(
            "path {i}: events={} min_spread={} min_bid={} min_volume={}",
            tr.len(),
            checks.min_spread,
            checks.min_bid,
            checks.min_touched_value
        );
    }
    emit_resolved(cfg, dir)
}

fn simulate_limit(cfg: &Config, dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let init = StudyModel::initial_state(model.scaling());
    let coefs = model.limit_coefficients(cfg.limit.spacing);
    let h = cfg.model_params()?.h;
    for i in 0..cfg.harness.paths {
        let seed = path_seed(cfg.harness.seed, i);
        let path = simulate_eta(
            &coefs,
            cfg.limit.step,
            cfg.scaling.t_horizon,
            &init,
            seed,
            1,
        )?;
        write_file(
            &dir.join(format!("limit_trajectory_{i:04}.csv")),
            &limit_trajectory_csv(&path, h),
        )?;
        write_file(&dir.join(format!("jumps_{i:04}.csv")), &jump_log_csv(&path))?;
        println!("path {i}: steps={} jumps={}", path.steps(), path.jumps.len());
    }
    emit_resolved(cfg, dir)
}

fn converge(cfg: &Config, dir: &Path) -> Result<()> {
    let family = cfg
        .harness
        .ns
        .iter()
        .map(|&n| {
            let mut sub = cfg.clone();
            sub.scaling.n = n;
            Ok((n, sub.build_model()?))
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = cfg.build_model()?;
    let coefs = reference.limit_coefficients(cfg.limit.spacing);
    // initial densities of the limit system live on the limit grid
    let mut lim_scaling = *reference.scaling();
    lim_scaling.dx = cfg.limit.spacing;
    let limit_init = StudyModel::initial_state(&lim_scaling);
    let cp = ConvergenceParams {
        n_paths: cfg.harness.paths,
        probes: cfg.harness.probes.clone(),
        limit_step: cfg.limit.step,
        t_horizon: cfg.scaling.t_horizon,
        imbalance_depth: cfg.model_params()?.h,
        seed: cfg.harness.seed,
        with_remainders: cfg.harness.with_remainders,
        with_qv: cfg.harness.with_qv,
    };
    let report = convergence_report(
        &family,
        |m| StudyModel::initial_state(m.scaling()),
        &coefs,
        &limit_init,
        &cp,
    )?;
    let mut csv = String::from("metric,n,t,value\n");
    for r in &report.rows {
        csv.push_str(&format!("{},{},{},{}\n", r.metric, r.n, r.t, r.value));
    }
    write_file(&dir.join("convergence.csv"), &csv)?;
    write_file(
        &dir.join("convergence.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    print!("{csv}");
    emit_resolved(cfg, dir)
}

fn parse_price_csv(text: &str) -> Result<(Vec<f64>, f64)> {
    let mut times = Vec::new();
    let mut prices = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (a, b) = (cols.next().unwrap_or(""), cols.next().unwrap_or(""));
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(p)) => {
                times.push(t);
                prices.push(p);
            }
            _ if ln == 0 => continue, // header
            _ => {
                return Err(LobError::ParameterError(format!(
                    "line {}: expected `time,price`",
                    ln + 1
                )))
            }
        }
    }
    if times.len() < 5 {
        return Err(LobError::InsufficientRecord(
            "need at least five observations".into(),
        ));
    }
    let delta = times[1] - times[0];
    if delta <= 0.0 {
        return Err(LobError::ParameterError("time must increase".into()));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - delta).abs() > 1e-9 * delta.abs() {
            return Err(LobError::ParameterError(
                "observations must be uniformly spaced".into(),
            ));
        }
    }
    Ok((prices, delta))
}

fn jumptest(input: &Path) -> Result<()> {
    let (prices, delta) = parse_price_csv(&fs::read_to_string(input)?)?;
    let res = bns_statistic(&prices, delta)?;
    println!("{}", serde_json::to_string_pretty(&res)?);
    Ok(())
}

fn probe_states(model: &StudyModel) -> Vec<LOBState> {
    let base = StudyModel::initial_state(model.scaling());
    let dx = model.scaling().dx;
    let mut states = vec![base.clone()];
    // widened spread
    let mut wide = base.clone();
    wide.ask += 10.0 * dx;
    states.push(wide);
    // shifted book with thinner far side
    let mut thin = base.clone();
    thin.bid -= 5.0 * dx;
    thin.va = thin.va.shift_ticks(3);
    states.push(thin);
    states
}

fn validate_cmd(cfg: &Config, dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let kernel = cfg.kernels.build()?;
    let states = probe_states(&model);
    let rep = validate_assumptions(&model, model.scaling(), &states, kernel.as_deref());
    let mut csv = String::from("key,ok,detail\n");
    for r in &rep.rows {
        println!("[{}] {}: {}", if r.ok { "ok" } else { "VIOLATION" }, r.key, r.detail);
        csv.push_str(&format!("{},{},\"{}\"\n", r.key, r.ok, r.detail));
    }
    write_file(&dir.join("validation.csv"), &csv)?;
    write_file(
        &dir.join("validation.json"),
        &serde_json::to_string_pretty(&rep)?,
    )?;
    emit_resolved(cfg, dir)
}

fn figures(cfg: &Config, run: u8, dir: &Path) -> Result<()> {
    if !(run == 1 || run == 2) {
        return Err(LobError::Validation {
            key: "figures.run".into(),
            reason: format!("unknown scenario {run} (expected 1 or 2)"),
        });
    }
    let mut cfg = cfg.clone();
    cfg.scaling.n = 100;
    cfg.scaling.t_horizon = 2.0;
    cfg.model.run = Some(run);
    cfg.harness.paths = 1;
    cfg.validate()?;
    simulate_micro(&cfg, dir)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Jumptest { input } => jumptest(input),
        cmd => {
            let dir = out_dir(&cfg)?;
            match cmd {
                Command::SimulateMicro => simulate_micro(&cfg, &dir),
                Command::SimulateLimit => simulate_limit(&cfg, &dir),
                Command::Converge => converge(&cfg, &dir),
                Command::Validate => validate_cmd(&cfg, &dir),
                Command::Figures { run } => figures(&cfg, *run, &dir),
                Command::Jumptest { .. } => unreachable!(),
            }
        }
    }
}
