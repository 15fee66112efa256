use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_ocd::async_rt::{write_summary, write_trace, Mode};
use robust_ocd::config::{ExperimentConfig, SAMPLE_CONFIG};
use robust_ocd::cutplane::Polytope;
use robust_ocd::dataset::UncertaintyKind;
use robust_ocd::detector::{calibrate_threshold, null_increments, solve_vt_from, stopping_time, Increment};
use robust_ocd::exact::ExactSolver;
use robust_ocd::experiment::{
    async_vs_sync, baseline_increment, median_ratio, robust_increment, run_experiment, write_rows,
    BASELINE, ROBUST,
};
use robust_ocd::model::{simulate_stream, ObservationStream};
use robust_ocd::Result;

#[derive(Parser)]
#[command(version, about = "Robust online change detection under system-matrix uncertainty")]
struct Cli {
    /// TOML configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the drawn instance and of the worker delays.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    /// Restrict to one uncertainty variant.
    #[arg(long, global = true)]
    uncertainty: Option<KindArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Polyhedron,
    Ellipsoid,
    Dnorm,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one v_t instance with the distributed solver; writes trace.csv.
    Solve,
    /// Run the detector over one stream and print its stopping time.
    Detect {
        #[arg(long)]
        zeta: f64,
        /// Stream CSV (t, y_1..y_M, is_post_change); simulated when absent.
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Use the detector that trusts the nominal matrix.
        #[arg(long)]
        baseline: bool,
    },
    /// Calibrate thresholds for the configured FAP targets.
    Calibrate,
    /// Monte Carlo experiment; writes add_vs_fap.csv and success_rate.csv.
    Experiment,
    /// Synchronous vs asynchronous virtual time; writes async_vs_sync.csv.
    AsyncBench,
    /// Print the annotated default configuration.
    SampleConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.instance = seed;
        cfg.solver.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(mode) = cli.mode {
        cfg.solver.run.mode = match mode {
            ModeArg::Sync => Mode::Sync,
            ModeArg::Async => Mode::Async,
        };
    }
    if let Some(kind) = cli.uncertainty {
        cfg.uncertainty.kinds = vec![match kind {
            KindArg::Polyhedron => UncertaintyKind::Polyhedron,
            KindArg::Ellipsoid => UncertaintyKind::Ellipsoid,
            KindArg::Dnorm => UncertaintyKind::Dnorm,
        }];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(&cfg.output.dir)
}

/// Prints `key=value` lines and writes them to `summary.txt`.
fn emit_summary(dir: &Path, lines: &[String]) -> Result<()> {
    for l in lines {
        println!("{l}");
    }
    fs::write(dir.join("summary.txt"), lines.join("\n") + "\n")?;
    Ok(())
}

fn solve(cfg: &ExperimentConfig) -> Result<()> {
    let kind = cfg.primary_kind();
    let model = cfg.model(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.instance);
    let y = simulate_stream(&model, cfg.model.state, 1, 1, &mut rng)?.observations.remove(0);
    let mut settings = cfg.solver;
    settings.run.record_trace = true;
    let res = solve_vt_from(&model, &y, &settings, Polytope::new(settings.planes.capacity))?;
    let (exact, _) = ExactSolver::new(&model)?.solve(&y)?;
    let dir = out_dir(cfg)?;
    write_trace(&res.trace, fs::File::create(dir.join("trace.csv"))?)?;
    write_summary(&res, &settings.run, &dir.join("summary.txt"))?;
    println!("uncertainty={kind}");
    print!("{}", fs::read_to_string(dir.join("summary.txt"))?);
    println!("exact_value={exact:e}");
    Ok(())
}

fn detect(cfg: &ExperimentConfig, zeta: f64, stream: Option<&Path>, baseline: bool) -> Result<()> {
    let model = cfg.model(cfg.primary_kind())?;
    let stream = match stream {
        Some(path) => ObservationStream::load(path)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.instance);
            let mc = cfg.success_mc();
            simulate_stream(&model, mc.state, mc.change_time, mc.horizon, &mut rng)?
        }
    };
    let mut source: Box<dyn Increment + '_> = if baseline {
        Box::new(baseline_increment(&model)?)
    } else {
        robust_increment(cfg, &model)?
    };
    let tau = stopping_time(source.as_mut(), &stream, zeta, model.sigma_n())?;
    match tau {
        Some(t) => println!("stopping_time={t}"),
        None => println!("stopping_time=none"),
    }
    println!("change_time={}", stream.change_time);
    println!("samples={}", stream.len());
    Ok(())
}

fn calibrate(cfg: &ExperimentConfig) -> Result<()> {
    let kind = cfg.primary_kind();
    let model = cfg.model(kind)?;
    let mut robust = robust_increment(cfg, &model)?;
    let mut base = baseline_increment(&model)?;
    let mut sources: Vec<(&str, &mut dyn Increment)> = vec![(ROBUST, robust.as_mut())];
    if cfg.detector.baseline {
        sources.push((BASELINE, &mut base));
    }
    let mut lines = Vec::new();
    for (name, source) in sources {
        let null = null_increments(&model, source, &cfg.calibration_mc())?;
        for &target in &cfg.detector.fap_targets {
            let cal = calibrate_threshold(&null, target, model.sigma_n())?;
            lines.push(format!(
                "detector={name} uncertainty={kind} fap_target={target} zeta={} fap={}",
                cal.zeta, cal.fap
            ));
        }
    }
    emit_summary(out_dir(cfg)?, &lines)
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let report = run_experiment(cfg)?;
    let dir = out_dir(cfg)?;
    write_rows(&report.add_vs_fap(), fs::File::create(dir.join("add_vs_fap.csv"))?)?;
    write_rows(&report.success_rate(), fs::File::create(dir.join("success_rate.csv"))?)?;
    let mut lines = Vec::new();
    for row in report.add_vs_fap() {
        lines.push(format!(
            "{}.{}.fap_{}.add={:.4}",
            row.detector, row.uncertainty, row.fap_target, row.add
        ));
    }
    for d in &report.detectors {
        lines.push(format!("{}.{}.success_add={:.4}", d.detector, d.uncertainty, d.success.add()));
    }
    let bounds: Vec<String> = report.delay_bounds.iter().map(usize::to_string).collect();
    lines.push(format!("delay_bounds={}", bounds.join(",")));
    lines.push(format!("runtime_s={:.2}", start.elapsed().as_secs_f64()));
    emit_summary(dir, &lines)
}

fn async_bench(cfg: &ExperimentConfig) -> Result<()> {
    let (rows, summaries) = async_vs_sync(cfg)?;
    let dir = out_dir(cfg)?;
    write_rows(&rows, fs::File::create(dir.join("async_vs_sync.csv"))?)?;
    let fmt = |t: Option<f64>| t.map_or("none".to_string(), |t| format!("{t:.3}"));
    let mut lines: Vec<String> = summaries
        .iter()
        .map(|s| {
            format!(
                "instance={} sync_time={} async_time={}",
                s.instance,
                fmt(s.sync_time),
                fmt(s.async_time)
            )
        })
        .collect();
    lines.push(format!("epsilon={:e}", cfg.bench.epsilon));
    lines.push(format!("median_ratio={:.4}", median_ratio(&summaries)));
    emit_summary(dir, &lines)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::SampleConfig = cli.command {
        print!("{SAMPLE_CONFIG}");
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Solve => solve(&cfg),
        Command::Detect { zeta, stream, baseline } => detect(&cfg, *zeta, stream.as_deref(), *baseline),
        Command::Calibrate => calibrate(&cfg),
        Command::Experiment => experiment(&cfg),
        Command::AsyncBench => async_bench(&cfg),
        Command::SampleConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
