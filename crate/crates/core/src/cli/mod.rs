//! The `povi` command-line harness.

pub mod compare;
pub mod runner;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dynamics::Rule;
use crate::error::{Error, Result};
use crate::gradcheck::{self, Registry};
use crate::io::config::{read_run_config, Overrides, RunConfig, TargetSpec};
use crate::io::report::{read_trajectory_csv, RunReport, RunStatus};
use crate::io::{dump_trajectory_csv, write_report};

pub const THREADS_ENV: &str = "POVI_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "povi",
    version,
    about = "Particle-optimization variational inference experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rule: Option<Rule>,
    /// Replaces the headline β of every scheduled phase.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Caps the total number of steps across all phases.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            rule: self.rule,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a closed-form target and report mode coverage and MMD.
    Sample(RunArgs),
    /// Train a BNN particle ensemble and report test/OOD metrics.
    TrainBnn(RunArgs),
    /// Evaluate the final particles of a saved trajectory.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Check this config's target at its initial particles instead of the built-in registry.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run configs over rules and seeds and tabulate mean ± std.
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Comma-separated seed list.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Rules to compare; each config's own rules when omitted.
        #[arg(long = "rule")]
        rules: Vec<Rule>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load(path: &Path, o: &Overrides) -> Result<RunConfig> {
    read_run_config(path)?.apply(o)
}

fn summarize(report: &RunReport) -> String {
    let mut s = format!(
        "{} '{}' seed {}: {:?}",
        report.command, report.config.name, report.seed, report.status
    );
    if let Some(err) = &report.error {
        s.push_str(&format!(" ({err})"));
    }
    let f = &report.final_metrics;
    if let Some(m) = &f.modes {
        let fr: Vec<String> = m.fractions.iter().map(|v| format!("{v:.3}")).collect();
        s.push_str(&format!(
            "\n  modes covered {}/{}  fractions [{}]  unassigned {:.3}",
            m.covered_count(),
            m.covered.len(),
            fr.join(", "),
            m.unassigned
        ));
    }
    if let Some(v) = f.mmd2 {
        s.push_str(&format!("\n  mmd2 {v:.6}"));
    }
    if let Some(e) = &f.ensemble {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!(
            "\n  accuracy {:.4}  nll {:.4}  Ho/Ht {}  MDo/MDt {}",
            e.accuracy,
            e.nll,
            opt(e.entropy_ratio),
            opt(e.md_ratio)
        ));
    }
    s
}

fn cmd_run(command: &str, args: &RunArgs, want_bnn: bool) -> Result<i32> {
    let cfg = load(&args.config, &args.overrides())?;
    let is_bnn = matches!(cfg.target, TargetSpec::Bnn { .. });
    if is_bnn != want_bnn {
        let hint = if is_bnn {
            "use train-bnn for BNN targets"
        } else {
            "train-bnn needs a bnn target"
        };
        return Err(Error::usage(format!("{command}: {hint}")));
    }
    let out = runner::execute(command, &cfg, &config_dir(&args.config))?;
    create_dir(&args.out)?;
    dump_trajectory_csv(&out.trajectory, &args.out.join("trajectory.csv"))?;
    write_report(&out.report, &args.out.join("report.json"))?;
    println!("{}", summarize(&out.report));
    Ok(out.exit_code())
}

fn cmd_eval(config: &Path, trajectory: &Path, out: &Path) -> Result<i32> {
    let cfg = load(config, &Overrides::default())?;
    let prep = runner::prepare(&cfg, &config_dir(config))?;
    let traj = read_trajectory_csv(trajectory)?;
    let last = traj
        .last()
        .ok_or_else(|| Error::data(format!("{} holds no snapshots", trajectory.display())))?;
    if last.particles.ncols() != prep.target.dim() {
        return Err(Error::data(format!(
            "trajectory has dimension {}, target expects {}",
            last.particles.ncols(),
            prep.target.dim()
        )));
    }
    let started = std::time::Instant::now();
    let final_metrics = runner::final_metrics(&cfg, &prep, last.particles.view())?;
    let report = RunReport {
        command: "eval".into(),
        seed: cfg.seed,
        config: cfg,
        status: RunStatus::Ok,
        error: None,
        data: prep.data,
        snapshots: Vec::new(),
        final_metrics,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    create_dir(out)?;
    write_report(&report, &out.join("eval.json"))?;
    println!("{}", summarize(&report));
    Ok(0)
}

const CONFIG_CHECK_POINTS: usize = 8;

fn cmd_gradcheck(config: Option<&Path>, seed: u64) -> Result<i32> {
    let reg = match config {
        None => Registry::standard(seed)?,
        Some(path) => {
            let cfg = load(path, &Overrides::default())?;
            let prep = runner::prepare(&cfg, &config_dir(path))?;
            let n = cfg.particles.min(CONFIG_CHECK_POINTS);
            let e = runner::initial_ensemble(&cfg, &prep, n, &config_dir(path))?;
            let mut reg = Registry::default();
            reg.push_score(prep.target.name(), prep.target, e.into_particles());
            reg
        }
    };
    let results = gradcheck::run_checks(&reg)?;
    print!("{}", gradcheck::render_table(&results, reg.tolerance));
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("gradient check failed for: {}", failed.join(", "));
        Ok(1)
    }
}

fn cmd_compare(
    configs: &[PathBuf],
    seeds: &str,
    rules: &[Rule],
    shared: &Overrides,
    out: &Path,
) -> Result<i32> {
    let seeds = compare::seeds_from(seeds)?;
    let inputs = configs
        .iter()
        .map(|p| {
            Ok(compare::CompareInput {
                label: p
                    .file_stem()
                    .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                config: read_run_config(p)?,
                base: config_dir(p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rep = compare::compare(&inputs, rules, &seeds, shared);
    let table = compare::render_table(&rep);
    create_dir(out)?;
    let json = serde_json::to_string_pretty(&rep).expect("compare report is serializable");
    write_text(&out.join("compare.json"), &json)?;
    write_text(&out.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(0)
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Sample(a) => cmd_run("sample", a, false),
        Command::TrainBnn(a) => cmd_run("train-bnn", a, true),
        Command::Eval {
            config,
            trajectory,
            out,
        } => cmd_eval(config, trajectory, out),
        Command::Gradcheck { config, seed } => cmd_gradcheck(config.as_deref(), *seed),
        Command::Compare {
            configs,
            seeds,
            rules,
            beta,
            steps,
            out,
        } => {
            let shared = Overrides {
                beta: *beta,
                steps: *steps,
                ..Default::default()
            };
            cmd_compare(configs, seeds, rules, &shared, out)
        }
    }
}

/// Worker count from `POVI_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = threads_from_env().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
        pool.install(|| dispatch(&cli))
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
