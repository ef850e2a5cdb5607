use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_core::experiments::{full_fields, preset_catalog, Experiment, ExperimentConfig, FieldRecord};
use mfg_core::inverse::OuterMethod;
use mfg_core::rkhs::ObservationSet;
use mfg_core::stationary::{self, StationarySolver, StationaryState};
use mfg_core::timedep::{hrf_timedep_solve, newton_timedep_solve, SpaceTimeState, TdFlowConfig, TdNewtonConfig};

#[derive(Parser)]
#[command(name = "mfg", version, about = "Mean-field game forward solves and kernel-regularized inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// Catalog preset id (see `mfg catalog`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Inner solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap (inner solver for `forward`/`synthesize`, outer loop for `invert`).
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_parser = parse_solver)]
    solver: Option<StationarySolver>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_solver(s: &str) -> Result<StationarySolver, String> {
    s.parse().map_err(|e: mfg_core::MfgError| e.to_string())
}

fn parse_method(s: &str) -> Result<OuterMethod, String> {
    s.parse().map_err(|e: mfg_core::MfgError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward MFG at the preset's true cost.
    Forward(Source),
    /// Reference solve plus noisy observations.
    Synthesize(Source),
    /// Recover the cost from observations and compare with the reference.
    Invert {
        #[command(flatten)]
        source: Source,
        /// Outer method; both when omitted.
        #[arg(long, value_parser = parse_method)]
        method: Option<OuterMethod>,
        /// Directory holding m_obs.csv and v_obs.csv from `synthesize`.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// List the presets.
    Catalog {
        /// Print every constant as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the self-check property suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

type CliResult<T> = Result<T, String>;

fn stage<T>(name: &str, r: mfg_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| format!("{name}: {e}"))
}

fn io_stage<T>(name: &str, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| format!("{name}: {e}"))
}

fn load_config(src: &Source, outer_iter_cap: bool) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&src.preset, &src.config) {
        (Some(id), None) => ExperimentConfig::for_preset(id),
        (None, Some(path)) => {
            let text = io_stage("config", fs::read_to_string(path))?;
            stage("config", ExperimentConfig::from_toml(&text))?
        }
        _ => return Err("config: pass exactly one of --preset or --config".into()),
    };
    if let Some(s) = src.seed {
        cfg.seed = s;
    }
    if let Some(t) = src.tol {
        cfg.inner.tol = t;
    }
    if let Some(m) = src.max_iter {
        if outer_iter_cap {
            cfg.outer.max_iter = m;
        } else {
            cfg.inner.max_iter = m;
        }
    }
    if let Some(s) = src.solver {
        cfg.inner.solvers = Some(vec![s]);
    }
    stage("config", cfg.resolve())?;
    Ok(cfg)
}

fn write_field(dir: &Path, rec: &FieldRecord) -> CliResult<()> {
    let f = io_stage("output", fs::File::create(dir.join(format!("{}.csv", rec.name))))?;
    io_stage("output", rec.write_csv(BufWriter::new(f)))
}

fn forward(src: &Source) -> CliResult<()> {
    let cfg = load_config(src, false)?;
    let preset = stage("config", cfg.resolve())?;
    let problem = stage("setup", preset.problem(None))?;
    let solver = preset.solvers[0];
    let inner = cfg.inner_config();
    io_stage("output", fs::create_dir_all(&src.out))?;
    let trace_file = io_stage("output", fs::File::create(src.out.join("trace.csv")))?;
    let (z, converged, iterations, residual, lambda) = if problem.time.is_none() {
        let init = stage("setup", StationaryState::uniform(&problem))?;
        let rep = stage("forward", stationary::solve(&problem, solver, &init, inner))?;
        io_stage("output", rep.trace.write_csv(BufWriter::new(trace_file)))?;
        let z: Vec<f64> = rep.state.m.iter().chain(&rep.state.u).copied().collect();
        (z, rep.converged, rep.iterations, rep.residual_norm, Some(rep.state.lambda))
    } else {
        let init = stage("setup", SpaceTimeState::uniform(&problem))?;
        let rep = match solver {
            StationarySolver::Newton => {
                let c = TdNewtonConfig {
                    tol: inner.tol,
                    max_iter: inner.max_iter,
                    ..TdNewtonConfig::default()
                };
                stage("forward", newton_timedep_solve(&problem, &init, &c))?
            }
            _ => {
                let c = TdFlowConfig {
                    tol: inner.tol,
                    max_steps: inner.max_iter,
                    ..TdFlowConfig::default()
                };
                stage("forward", hrf_timedep_solve(&problem, &init, &c, None))?
            }
        };
        io_stage("output", rep.trace.write_csv(BufWriter::new(trace_file)))?;
        (rep.state.y, rep.converged, rep.iterations, rep.residual_norm, None)
    };
    let (m, u) = stage("output", full_fields(&problem, &z))?;
    write_field(&src.out, &FieldRecord::on_grid("m", &problem, m))?;
    write_field(&src.out, &FieldRecord::on_grid("u", &problem, u))?;
    println!("preset      {}", preset.id);
    println!("solver      {solver}");
    println!("converged   {converged}");
    println!("iterations  {iterations}");
    println!("residual    {residual:.3e}");
    if let Some(l) = lambda {
        println!("lambda      {l:.12}");
    }
    println!("output      {}", src.out.display());
    if !converged {
        return Err(format!("forward: not converged after {iterations} iterations (residual {residual:.3e})"));
    }
    Ok(())
}

fn synthesize_cmd(src: &Source) -> CliResult<()> {
    let cfg = load_config(src, false)?;
    let exp = stage("synthesize", Experiment::prepare(&cfg))?;
    let data = &exp.data;
    io_stage("output", fs::create_dir_all(&src.out))?;
    let w = |name: &str, o: &ObservationSet| -> CliResult<()> {
        let f = io_stage("output", fs::File::create(src.out.join(name)))?;
        io_stage("output", o.write_csv(BufWriter::new(f)))
    };
    w("m_obs.csv", &data.m_obs)?;
    w("v_obs.csv", &data.v_obs)?;
    let (m, u) = stage("output", full_fields(&exp.problem, &exp.reference.z))?;
    write_field(&src.out, &FieldRecord::on_grid("reference_m", &exp.problem, m))?;
    write_field(&src.out, &FieldRecord::on_grid("reference_u", &exp.problem, u))?;
    write_field(&src.out, &FieldRecord::on_grid("reference_v", &exp.problem, exp.reference.theta.clone()))?;
    println!("preset        {}", exp.preset.id);
    println!("seed          {}", cfg.seed);
    println!("m observations {}", data.m_obs.len());
    println!("V observations {}", data.v_obs.len());
    if let Some(l) = exp.reference.lambda {
        println!("lambda        {l:.12}");
    }
    println!("output        {}", src.out.display());
    Ok(())
}

fn read_obs(dir: &Path, name: &str) -> CliResult<ObservationSet> {
    let f = io_stage("observations", fs::File::open(dir.join(name)))?;
    stage("observations", ObservationSet::read_csv(BufReader::new(f)))
}

fn invert(src: &Source, method: Option<OuterMethod>, observations: Option<&Path>) -> CliResult<()> {
    let mut cfg = load_config(src, true)?;
    if let Some(m) = method {
        cfg.outer.methods = vec![m];
    }
    let mut exp = stage("synthesize", Experiment::prepare(&cfg))?;
    if let Some(dir) = observations {
        let m_obs = read_obs(dir, "m_obs.csv")?;
        let v_obs = read_obs(dir, "v_obs.csv")?;
        exp = stage("observations", exp.with_observations(m_obs, v_obs))?;
    }
    let bundle = stage("invert", exp.run())?;
    stage("output", bundle.write(&src.out))?;
    let s = &bundle.summary;
    println!("preset {}  seed {}  reference lambda {:?}", s.preset, s.seed, s.reference.lambda);
    println!("{:<12} {:>5} {:>9} {:>12} {:>12} {:>12} {:>16} {:>9}", "run", "iters", "converged", "m_l2", "u_l2", "v_l2", "lambda", "seconds");
    for r in &s.runs {
        println!(
            "{:<12} {:>5} {:>9} {:>12.4e} {:>12.4e} {:>12.4e} {:>16} {:>9.2}",
            r.label(),
            r.iterations,
            r.converged,
            r.errors.m_l2,
            r.errors.u_l2,
            r.errors.v_l2,
            r.lambda.map_or("-".to_string(), |l| format!("{l:.10}")),
            r.seconds
        );
    }
    println!("hash {}", s.content_hash);
    println!("output {}", src.out.display());
    Ok(())
}

fn catalog(json: bool) -> CliResult<()> {
    let presets = preset_catalog();
    if json {
        let text = serde_json::to_string_pretty(&presets).map_err(|e| format!("output: {e}"))?;
        println!("{text}");
        return Ok(());
    }
    for p in &presets {
        let grid = if p.dim == 1 { format!("{}", p.n) } else { format!("{0}x{0}", p.n) };
        let time = p.time.map_or(String::new(), |t| format!(", {} time slices", t.slices));
        println!("{:<38} grid {grid}{time}, {}/{} observations", p.id, p.m_obs.count, p.v_obs.count);
        println!("    {}", p.description);
    }
    Ok(())
}

fn check(seed: u64) -> CliResult<()> {
    let outcomes = mfg_core::checks::run_all(seed);
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {:<22} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(format!("check: {failed} of {} checks failed", outcomes.len()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFG_LOG", "warn")).init();
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Forward(src) => forward(src),
        Command::Synthesize(src) => synthesize_cmd(src),
        Command::Invert { source, method, observations } => invert(source, *method, observations.as_deref()),
        Command::Catalog { json } => catalog(*json),
        Command::Check { seed } => check(*seed),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
