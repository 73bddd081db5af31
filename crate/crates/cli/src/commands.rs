use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};
use urnnet::asymptotics::covariance_report;
use urnnet::asymptotics::oracle::{branch, limit_sum_analytic, limit_sum_oracle};
use urnnet::inference::{
    chi2_quantile, ci_z_infinity, confidence_region, linspace, product_grid, test_statistic, Builder,
};
use urnnet::io::{
    read_state_csv, recognize_family, resolve_spectral, trajectory_header, write_matrix_csv,
    write_trajectory_csv, Family, NetworkConfig, SpectralConfig,
};
use urnnet::montecarlo::{
    calibration_run, clt_check, density_report, median, run_ensemble, table1, table1_scenarios, table1_schedule,
    EnsembleConfig,
};
use urnnet::scalar::C;
use urnnet::simulate::{run_trajectory, InitialSpec};
use urnnet::spectral::{build_example1, build_example2, build_sim_network};
use urnnet::{classify_regime, Error, Network, Regime, Schedule, Spectral};

use crate::args::*;
use crate::manifest::{sha256_hex, Manifest};
use crate::{CliError, CliResult};

struct Ctx {
    argv: Vec<String>,
    /// Hash a replayed run must reproduce before doing any work.
    expected_hash: Option<String>,
}

impl Ctx {
    fn check(&self, hash: &str) -> CliResult<()> {
        match &self.expected_hash {
            Some(h) if h != hash => Err(CliError::Usage(format!(
                "inputs changed since the manifest was written (hash {hash}, recorded {h})"
            ))),
            _ => Ok(()),
        }
    }

    fn manifest(&self, command: &str, config: Value) -> CliResult<Manifest> {
        let hash = hash_value(&config);
        self.check(&hash)?;
        let mut m = Manifest::new(command, &self.argv);
        m.config = Some(config);
        m.config_hash = Some(hash);
        Ok(m)
    }
}

fn hash_value(v: &Value) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("json serializes"))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_err(path: &Path, e: Error) -> CliError {
    match e {
        Error::Parse(m) => CliError::Core(Error::Parse(format!("{}: {m}", path.display()))),
        e => CliError::Core(e),
    }
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(v).expect("json serializes") + "\n"))
}

fn create(path: &Path) -> CliResult<std::fs::File> {
    std::fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn print_json(v: &impl Serialize) {
    use std::io::Write;
    // A closed pipe (e.g. `| head`) is not an error of the command.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

fn set_workers(n: usize) {
    if n > 0 {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Network config after overrides, with optional Jordan data.
struct Loaded {
    cfg: NetworkConfig,
    spectral_cfg: Option<SpectralConfig>,
    net: Network,
    schedule: Schedule,
}

impl Loaded {
    fn config_json(&self) -> Value {
        json!({ "network": self.cfg, "spectral": self.spectral_cfg })
    }

    fn spectral(&self) -> CliResult<(Spectral, Option<Family>)> {
        Ok(resolve_spectral(&self.net, self.spectral_cfg.as_ref())?)
    }
}

fn load(args: &NetworkArgs) -> CliResult<Loaded> {
    let text = read_text(&args.network)?;
    let mut cfg = NetworkConfig::from_json(&text).map_err(|e| parse_err(&args.network, e))?;
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(c) = args.c {
        cfg.c = c;
    }
    if let Some(r) = args.r_max {
        cfg.r_max = r;
    }
    let net = cfg.network()?;
    let schedule = cfg.schedule()?;
    let spectral_cfg = match &args.spectral {
        Some(p) => Some(SpectralConfig::from_json(&read_text(p)?).map_err(|e| parse_err(p, e))?),
        None => None,
    };
    Ok(Loaded { cfg, spectral_cfg, net, schedule })
}

fn initial(init: &InitArgs, n: usize) -> CliResult<InitialSpec<f64>> {
    let spec = match &init.z0 {
        Some(s) => InitialSpec::from_entries(parse_z0(s).map_err(CliError::Usage)?),
        None => InitialSpec::fixed(&vec![0.5; n]),
    };
    spec.validate(n)?;
    Ok(spec)
}

/// Observed state and its step count.
fn observed(obs: &ObsArgs) -> CliResult<(Vec<f64>, u64, String)> {
    let bytes = std::fs::read(&obs.state).map_err(|e| CliError::io(&obs.state, e))?;
    let (n_file, z) = read_state_csv(bytes.as_slice()).map_err(|e| parse_err(&obs.state, e))?;
    let n = obs
        .n
        .or(n_file)
        .ok_or_else(|| CliError::Usage("--n is required when the state file has no step column".into()))?;
    Ok((z, n, sha256_hex(&bytes)))
}

fn regime_slug(r: Regime) -> &'static str {
    match r {
        Regime::Subpolynomial => "subpolynomial",
        Regime::CriticalSubcritical => "critical_subcritical",
        Regime::CriticalBoundary => "critical_boundary",
        Regime::Unsupported => "unsupported",
    }
}

pub fn run(cli: Cli, argv: Vec<String>, expected_hash: Option<String>) -> CliResult<()> {
    let ctx = Ctx { argv, expected_hash };
    match cli.command {
        Command::Validate { net, out } => validate(&ctx, &net, &out.out),
        Command::Simulate { net, init, horizon, stride, run, rt, out } => {
            simulate(&ctx, &net, &init, horizon, stride, run, &rt, &out.out)
        }
        Command::Ensemble { net, init, mc, bins, rt, out } => ensemble(&ctx, &net, &init, &mc, bins, &rt, &out.out),
        Command::Covariance { net, csv, out } => covariance(&ctx, &net, csv, &out.out),
        Command::Test { net, obs, level, out } => test(&ctx, &net, &obs, level, &out.out),
        Command::Ci { net, obs, level, out } => ci(&ctx, &net, &obs, level, &out.out),
        Command::Region { family, n_agents, n1, n2, alpha_range, beta_range, gamma, c, r_max, obs, level, out } => {
            let fam = RegionFamily::new(family, n_agents, n1, n2)?;
            region(&ctx, fam, &alpha_range, beta_range.as_deref(), (gamma, c, r_max), &obs, level, &out.out)
        }
        Command::Table1 { mc, rt, out } => table(&ctx, &mc, &rt, &out.out),
        Command::Figures { mc, bins, grid, rt, out } => figures(&ctx, &mc, bins, grid, &rt, &out.out),
        Command::Oracle { x, y, q, c, gamma, n, out } => oracle(&ctx, &x, &y, q, c, gamma, n, &out.out),
        Command::CltCheck { net, init, mc, rt, out } => cltcheck(&ctx, &net, &init, &mc, &rt, &out.out),
        Command::Calibrate { net, truth, init, mc, level, min_used, rt, out } => {
            calibrate(&ctx, &net, truth.as_deref(), &init, &mc, level, min_used, &rt, &out.out)
        }
        Command::Replay { manifest, out } => replay(&manifest, out),
    }
}

fn validate(ctx: &Ctx, args: &NetworkArgs, out: &Path) -> CliResult<()> {
    let l = load(args)?;
    let spectral = if l.spectral_cfg.is_some() || recognize_family(&l.net).is_some() {
        Some(l.spectral()?)
    } else {
        None
    };
    let (regime, tau, rho, family) = match &spectral {
        Some((s, f)) => (Some(classify_regime(l.schedule.gamma(), l.schedule.c(), s)), s.tau(), Some(s.rho()), *f),
        None => (None, None, None, None),
    };
    let report = json!({
        "valid": true,
        "n_agents": l.net.n_agents(),
        "block_sizes": l.net.block_sizes(),
        "schedule": {
            "gamma": l.schedule.gamma(),
            "c": l.schedule.c(),
            "r_max": l.schedule.r_max(),
            "clip_point": l.schedule.clip_point(),
        },
        "family": family,
        "spectral_data": spectral.is_some(),
        "regime": regime,
        "tau": tau,
        "rho": rho,
    });
    let mut m = ctx.manifest("validate", l.config_json())?;
    prepare_dir(out)?;
    if let Some((s, _)) = &spectral {
        let path = out.join("spectral.json");
        write_text(&path, &(SpectralConfig::from_decomposition(s).to_json() + "\n"))?;
        m.outputs.push(name_of(&path));
    }
    m.write(out)?;
    print_json(&report);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    ctx: &Ctx,
    args: &NetworkArgs,
    init: &InitArgs,
    horizon: u64,
    stride: Option<u64>,
    run: u64,
    rt: &RunArgs,
    out: &Path,
) -> CliResult<()> {
    let l = load(args)?;
    let n = l.net.n_agents();
    let init_spec = initial(init, n)?;
    let stride = stride.unwrap_or((horizon / 100).max(1));
    let mut m = ctx.manifest("simulate", l.config_json())?;
    let traj = run_trajectory(&l.net, &l.schedule, &init_spec, horizon, rt.seed, run, stride)?;
    prepare_dir(out)?;
    let path = out.join("trajectory.csv");
    write_trajectory_csv(create(&path)?, n, &traj.records).map_err(|e| parse_err(&path, e))?;
    m.master_seed = Some(rt.seed);
    m.horizon = Some(horizon);
    m.outputs = vec![name_of(&path)];
    m.write(out)?;
    print_json(&json!({
        "output": path,
        "rows": traj.records.len(),
        "final_z": traj.final_state.z(),
        "final_n": traj.final_state.ncnt(),
        "seed": rt.seed,
        "run": run,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ensemble(
    ctx: &Ctx,
    args: &NetworkArgs,
    init: &InitArgs,
    mc: &McArgs,
    bins: usize,
    rt: &RunArgs,
    out: &Path,
) -> CliResult<()> {
    set_workers(rt.workers);
    let l = load(args)?;
    let n = l.net.n_agents();
    let spectral = if l.spectral_cfg.is_some() || recognize_family(&l.net).is_some() {
        Some(l.spectral()?.0)
    } else {
        None
    };
    let mut cfg = EnsembleConfig::new(l.net.clone(), l.schedule, initial(init, n)?, mc.horizon, mc.sims, rt.seed);
    cfg.first_run = mc.first_run;
    let mut m = ctx.manifest("ensemble", l.config_json())?;
    let s = run_ensemble(&cfg, spectral.as_ref())?;
    let hist = urnnet::montecarlo::Histogram::new(&s.pooled(), bins);
    let summary = json!({
        "n_sims": s.n_sims,
        "n_agents": s.n_agents,
        "horizon": s.horizon,
        "master_seed": s.master_seed,
        "first_run": mc.first_run,
        "proportions": s.proportions,
        "z_tilde_source": if spectral.is_some() { "q1" } else { "agent_mean" },
        "z_tilde_mean": s.z_tilde.iter().sum::<f64>() / s.z_tilde.len() as f64,
        "non_degenerate": s.non_degenerate(&cfg.thresholds),
        "median_spread": median(&s.spreads),
        "bandwidth": s.bandwidth,
        "histogram": hist,
    });
    prepare_dir(out)?;
    let json_path = out.join("ensemble.json");
    write_json(&json_path, &summary)?;
    let csv_path = out.join("finals.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    let mut header = trajectory_header(n);
    header[0] = "run".into();
    header.push("z_tilde".into());
    let csv_err = |e: csv::Error| CliError::io(&csv_path, e);
    w.write_record(&header).map_err(csv_err)?;
    for (f, zt) in s.finals.iter().zip(&s.z_tilde) {
        let mut row = vec![f.run_index.to_string()];
        row.extend(f.z.iter().chain(&f.ncnt).chain(std::iter::once(zt)).map(|x| x.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    m.master_seed = Some(rt.seed);
    m.n_sims = Some(mc.sims);
    m.horizon = Some(mc.horizon);
    m.workers = Some(rt.workers);
    m.outputs = vec![name_of(&json_path), name_of(&csv_path)];
    m.write(out)?;
    print_json(&summary);
    Ok(())
}

fn covariance(ctx: &Ctx, args: &NetworkArgs, csv: bool, out: &Path) -> CliResult<()> {
    let l = load(args)?;
    let (spec, family) = l.spectral()?;
    let mut m = ctx.manifest("covariance", l.config_json())?;
    let rep = covariance_report(&spec, &l.schedule)?;
    let mut matrices = serde_json::Map::new();
    let mut named: Vec<(&str, &urnnet::RealMatrix)> = vec![("sigma_tilde", &rep.blocks.sigma_tilde)];
    if let Some(g) = &rep.blocks.gamma_hat {
        named.push(("gamma_hat", g));
    }
    if let Some(g) = &rep.blocks.sigma_gamma {
        named.push(("sigma_gamma", g));
    }
    if let Some(a) = &rep.blocks.agent {
        named.extend([("zz", &a.zz), ("zn", &a.zn), ("nn", &a.nn)]);
    }
    named.push(("joint", &rep.joint));
    for (k, v) in &named {
        matrices.insert((*k).to_string(), serde_json::to_value(v).expect("matrix serializes"));
    }
    let report = json!({
        "regime": rep.regime,
        "scaling": rep.scaling,
        "family": family,
        "tau": spec.tau(),
        "rho": spec.rho(),
        "matrices": matrices,
    });
    prepare_dir(out)?;
    let path = out.join("covariance.json");
    write_json(&path, &report)?;
    m.outputs.push(name_of(&path));
    if csv {
        for (k, v) in &named {
            let p = out.join(format!("covariance_{k}.csv"));
            write_matrix_csv(create(&p)?, v).map_err(|e| parse_err(&p, e))?;
            m.outputs.push(name_of(&p));
        }
    }
    m.write(out)?;
    print_json(&report);
    Ok(())
}

fn test(ctx: &Ctx, args: &NetworkArgs, obs: &ObsArgs, level: f64, out: &Path) -> CliResult<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")).into());
    }
    let l = load(args)?;
    let (spec, _) = l.spectral()?;
    let (z, n, state_hash) = observed(obs)?;
    let mut config = l.config_json();
    config["state_sha256"] = json!(state_hash);
    let m = ctx.manifest("test", config)?;
    let regime = classify_regime(l.schedule.gamma(), l.schedule.c(), &spec);
    if !regime.is_supported() {
        return Err(Error::UnsupportedRegime(regime).into());
    }
    let outcome = test_statistic(&z, n, &l.schedule, &spec, regime)?;
    let threshold = if outcome.dof > 0 { Some(chi2_quantile(1.0 - level, outcome.dof)?) } else { None };
    let reject = !outcome.degenerate && outcome.p_value < level;
    let mut report = serde_json::to_value(&outcome).expect("outcome serializes");
    report["n"] = json!(n);
    report["level"] = json!(level);
    report["threshold"] = json!(threshold);
    report["reject"] = json!(reject);
    prepare_dir(out)?;
    m.write(out)?;
    print_json(&report);
    Ok(())
}

fn ci(ctx: &Ctx, args: &NetworkArgs, obs: &ObsArgs, level: f64, out: &Path) -> CliResult<()> {
    let l = load(args)?;
    let (spec, _) = l.spectral()?;
    let (z, n, state_hash) = observed(obs)?;
    let mut config = l.config_json();
    config["state_sha256"] = json!(state_hash);
    let m = ctx.manifest("ci", config)?;
    let interval = ci_z_infinity(&z, n, &l.schedule, &spec, level)?;
    let mut report = serde_json::to_value(interval).expect("interval serializes");
    report["n"] = json!(n);
    prepare_dir(out)?;
    m.write(out)?;
    print_json(&report);
    Ok(())
}

#[derive(Clone, Copy, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum RegionFamily {
    Example1 { n_agents: usize },
    Example2 { n1: usize, n2: usize },
    Sim,
}

impl RegionFamily {
    fn new(f: FamilyArg, n_agents: Option<usize>, n1: Option<usize>, n2: Option<usize>) -> CliResult<Self> {
        let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| CliError::Usage(format!("{flag} is required")));
        Ok(match f {
            FamilyArg::Example1 => RegionFamily::Example1 { n_agents: need(n_agents, "--n-agents")? },
            FamilyArg::Example2 => RegionFamily::Example2 { n1: need(n1, "--n1")?, n2: need(n2, "--n2")? },
            FamilyArg::Sim => RegionFamily::Sim,
        })
    }

    fn n_params(self) -> usize {
        match self {
            RegionFamily::Example1 { .. } => 1,
            _ => 2,
        }
    }

    fn build(self, theta: &[f64]) -> urnnet::Result<(Network, Spectral)> {
        match self {
            RegionFamily::Example1 { n_agents } => build_example1(n_agents, theta[0]),
            RegionFamily::Example2 { n1, n2 } => build_example2(n1, n2, theta[0], theta[1]),
            RegionFamily::Sim => build_sim_network(theta[0], theta[1]),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn region(
    ctx: &Ctx,
    family: RegionFamily,
    alpha_range: &str,
    beta_range: Option<&str>,
    (gamma, c, r_max): (f64, f64, f64),
    obs: &ObsArgs,
    level: f64,
    out: &Path,
) -> CliResult<()> {
    let axis = |s: &str| parse_range(s).map(|(lo, hi, k)| linspace(lo, hi, k)).map_err(CliError::Usage);
    let mut axes = vec![axis(alpha_range)?];
    match (family.n_params(), beta_range) {
        (2, Some(b)) => axes.push(axis(b)?),
        (2, None) => return Err(CliError::Usage("--beta-range is required for this family".into())),
        (_, Some(_)) => return Err(CliError::Usage("--beta-range does not apply to example1".into())),
        _ => {}
    }
    let schedule = Schedule::new(gamma, c, r_max)?;
    let (z, n, state_hash) = observed(obs)?;
    let config = json!({
        "family": family,
        "alpha_range": alpha_range,
        "beta_range": beta_range,
        "gamma": gamma,
        "c": c,
        "r_max": r_max,
        "level": level,
        "state_sha256": state_hash,
    });
    let mut m = ctx.manifest("region", config)?;
    let grid = product_grid(&axes);
    let builder = move |theta: &[f64]| family.build(theta);
    let builder: &Builder<'_> = &builder;
    let reg = confidence_region(&grid, builder, &z, n, &schedule, level)?;
    prepare_dir(out)?;
    let path = out.join("region.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |e: csv::Error| CliError::io(&path, e);
    let mut header = vec!["alpha"];
    if axes.len() == 2 {
        header.push("beta");
    }
    header.extend(["statistic", "dof", "p_value", "threshold", "degenerate", "accepted", "note"]);
    w.write_record(&header).map_err(csv_err)?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for p in &reg.points {
        let mut row: Vec<String> = p.theta.iter().map(|x| x.to_string()).collect();
        row.push(opt(p.outcome.as_ref().map(|o| o.statistic.to_string())));
        row.push(opt(p.outcome.as_ref().map(|o| o.dof.to_string())));
        row.push(opt(p.outcome.as_ref().map(|o| o.p_value.to_string())));
        row.push(opt(p.threshold.map(|t| t.to_string())));
        row.push(opt(p.outcome.as_ref().map(|o| o.degenerate.to_string())));
        row.push(p.accepted.to_string());
        row.push(p.note.clone().unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    m.outputs = vec![name_of(&path)];
    m.write(out)?;
    let accepted: Vec<&Vec<f64>> = reg.accepted().map(|p| &p.theta).collect();
    print_json(&json!({
        "output": path,
        "level": level,
        "points": reg.points.len(),
        "accepted": accepted.len(),
        "accepted_points": accepted,
    }));
    Ok(())
}

fn study_config(mc: &StudyArgs, seed: u64) -> Value {
    let sch = table1_schedule();
    json!({
        "scenarios": table1_scenarios().iter().map(|s| json!({
            "alpha": s.alpha, "beta": s.beta, "label": s.label,
        })).collect::<Vec<_>>(),
        "gamma": sch.gamma(),
        "c": sch.c(),
        "r_max": sch.r_max(),
        "sims": mc.sims,
        "horizon": mc.horizon,
        "seed": seed,
    })
}

fn table(ctx: &Ctx, mc: &StudyArgs, rt: &RunArgs, out: &Path) -> CliResult<()> {
    set_workers(rt.workers);
    let mut m = ctx.manifest("table1", study_config(mc, rt.seed))?;
    let rows = table1(&table1_scenarios(), mc.sims, mc.horizon, rt.seed)?;
    prepare_dir(out)?;
    let path = out.join("table1.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    for (row, _) in &rows {
        w.serialize(row).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    m.master_seed = Some(rt.seed);
    m.n_sims = Some(mc.sims);
    m.horizon = Some(mc.horizon);
    m.workers = Some(rt.workers);
    m.outputs = vec![name_of(&path)];
    m.write(out)?;
    print_json(&rows.iter().map(|(r, _)| r).collect::<Vec<_>>());
    Ok(())
}

fn figures(ctx: &Ctx, mc: &StudyArgs, bins: usize, grid: usize, rt: &RunArgs, out: &Path) -> CliResult<()> {
    set_workers(rt.workers);
    let mut config = study_config(mc, rt.seed);
    config["bins"] = json!(bins);
    config["grid"] = json!(grid);
    let mut m = ctx.manifest("figures", config)?;
    let scenarios = table1_scenarios();
    let rows = table1(&scenarios, mc.sims, mc.horizon, rt.seed)?;
    prepare_dir(out)?;
    let mut l1 = Vec::new();
    for (sc, (_, summary)) in scenarios.iter().zip(&rows) {
        let d = density_report(summary, bins, grid);
        let kde = out.join(format!("density_{}.csv", sc.slug()));
        let hist = out.join(format!("histogram_{}.csv", sc.slug()));
        write_text(&kde, &d.kde_csv())?;
        write_text(&hist, &d.histogram_csv())?;
        m.outputs.extend([name_of(&kde), name_of(&hist)]);
        l1.push(json!({ "scenario": sc.slug(), "max_agent_l1": d.max_agent_l1(), "bandwidth": d.bandwidth }));
    }
    m.master_seed = Some(rt.seed);
    m.n_sims = Some(mc.sims);
    m.horizon = Some(mc.horizon);
    m.workers = Some(rt.workers);
    m.write(out)?;
    print_json(&json!({ "outputs": m.outputs, "densities": l1 }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn oracle(ctx: &Ctx, x: &str, y: &str, q: u32, c: f64, gamma: f64, n: u64, out: &Path) -> CliResult<()> {
    let (xr, xi) = parse_complex(x).map_err(CliError::Usage)?;
    let (yr, yi) = parse_complex(y).map_err(CliError::Usage)?;
    let (x, y) = (C::new(xr, xi), C::new(yr, yi));
    let config = json!({ "x": [xr, xi], "y": [yr, yi], "q": q, "c": c, "gamma": gamma, "n": n });
    let m = ctx.manifest("oracle", config)?;
    let b = branch(x, y, c, gamma);
    let finite = limit_sum_oracle(x, y, q, c, gamma, n)?;
    let limit = limit_sum_analytic(x, y, q, c, gamma);
    let rel = if limit.norm() > 0.0 { (finite - limit).norm() / limit.norm() } else { finite.norm() };
    prepare_dir(out)?;
    m.write(out)?;
    print_json(&json!({
        "branch": b,
        "n": n,
        "oracle": [finite.re, finite.im],
        "analytic": [limit.re, limit.im],
        "rel_error": rel,
    }));
    Ok(())
}

fn cltcheck(ctx: &Ctx, args: &NetworkArgs, init: &InitArgs, mc: &McArgs, rt: &RunArgs, out: &Path) -> CliResult<()> {
    set_workers(rt.workers);
    let l = load(args)?;
    let (spec, _) = l.spectral()?;
    let regime = classify_regime(l.schedule.gamma(), l.schedule.c(), &spec);
    if !regime.is_supported() {
        return Err(Error::UnsupportedRegime(regime).into());
    }
    let mut cfg =
        EnsembleConfig::new(l.net.clone(), l.schedule, initial(init, l.net.n_agents())?, mc.horizon, mc.sims, rt.seed);
    cfg.first_run = mc.first_run;
    let mut m = ctx.manifest("clt-check", l.config_json())?;
    let rep = clt_check(&cfg, &spec, regime)?;
    prepare_dir(out)?;
    let path = out.join(format!("cltcheck_{}.json", regime_slug(regime)));
    write_json(&path, &rep)?;
    m.master_seed = Some(rt.seed);
    m.n_sims = Some(mc.sims);
    m.horizon = Some(mc.horizon);
    m.workers = Some(rt.workers);
    m.outputs = vec![name_of(&path)];
    m.write(out)?;
    print_json(&json!({
        "output": path,
        "regime": rep.regime,
        "runs": rep.runs,
        "runs_used": rep.runs_used,
        "mean_mixing": rep.mean_mixing,
        "max_rel_error": rep.max_rel_error,
        "pattern_ratio": rep.pattern_ratio,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    ctx: &Ctx,
    args: &NetworkArgs,
    truth: Option<&Path>,
    init: &InitArgs,
    mc: &McArgs,
    level: f64,
    min_used: Option<usize>,
    rt: &RunArgs,
    out: &Path,
) -> CliResult<()> {
    set_workers(rt.workers);
    let l = load(args)?;
    let (spec0, _) = l.spectral()?;
    let truth_cfg = match truth {
        Some(p) => Some(NetworkConfig::from_json(&read_text(p)?).map_err(|e| parse_err(p, e))?),
        None => None,
    };
    let sim_net = match &truth_cfg {
        Some(t) => t.network()?,
        None => l.net.clone(),
    };
    let regime = classify_regime(l.schedule.gamma(), l.schedule.c(), &spec0);
    if !regime.is_supported() {
        return Err(Error::UnsupportedRegime(regime).into());
    }
    let mut config = l.config_json();
    config["truth"] = json!(truth_cfg);
    config["level"] = json!(level);
    config["min_used"] = json!(min_used);
    let mut m = ctx.manifest("calibrate", config)?;
    let mut cfg = EnsembleConfig::new(sim_net, l.schedule, initial(init, l.net.n_agents())?, mc.horizon, mc.sims, rt.seed);
    cfg.first_run = mc.first_run;
    let rep = calibration_run(&cfg, &spec0, regime, level, min_used)?;
    prepare_dir(out)?;
    let path = out.join("calibrate.json");
    write_json(&path, &rep)?;
    m.master_seed = Some(rt.seed);
    m.n_sims = Some(mc.sims);
    m.horizon = Some(mc.horizon);
    m.workers = Some(rt.workers);
    m.outputs = vec![name_of(&path)];
    m.write(out)?;
    print_json(&json!({
        "output": path,
        "regime": rep.regime,
        "runs": rep.runs,
        "runs_used": rep.runs_used,
        "dof": rep.dof,
        "mean": rep.mean,
        "variance": rep.variance,
        "ks_distance": rep.ks_distance,
        "rejection_rate": rep.rejection_rate,
        "rejection_ci": rep.rejection_ci,
    }));
    Ok(())
}

fn replay(path: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let m = Manifest::read(path)?;
    let mut argv = m.argv.clone();
    if let Some(dir) = out {
        let dir = std::path::absolute(&dir).map_err(|e| CliError::io(&dir, e))?.display().to_string();
        match argv.iter().position(|a| a == "--out") {
            Some(i) if i + 1 < argv.len() => argv[i + 1] = dir,
            _ => {
                if let Some(a) = argv.iter_mut().find(|a| a.starts_with("--out=")) {
                    *a = format!("--out={dir}");
                } else {
                    argv.extend(["--out".to_string(), dir]);
                }
            }
        }
    }
    if let Some(cwd) = &m.cwd {
        std::env::set_current_dir(cwd).map_err(|e| CliError::io(cwd, e))?;
    }
    let full: Vec<String> = std::iter::once("urnnet".to_string()).chain(argv.iter().cloned()).collect();
    let cli = Cli::try_parse_from(&full).map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    run(cli, argv, m.config_hash)
}
