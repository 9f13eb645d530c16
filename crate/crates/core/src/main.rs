use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyntarget::bench::{
    build_policy, dp_table_for, emit_report, measure_latency, run_benchmark, train_learners, training_curve,
    resolve_dataset, BenchConfig, DatasetSpec, PolicyKind, ReportFormat, DEFAULT_FRACTIONS,
};
use dyntarget::worldgen::{generate_synthetic, save_dataset, GenParams, Manifest};
use dyntarget::{Error, Result};

/// Energy-constrained dynamic targeting experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use 86,400-step datasets instead of the desk-scale default.
    #[arg(long, global = true)]
    full_scale: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize datasets with the configured world parameters.
    Gen {
        /// Number of datasets, seeded consecutively from --seed.
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Build the DP table for one dataset and write it out.
    Dp {
        /// Dataset file; a dataset is generated from --seed when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the Q-table on the configured training datasets.
    TrainQ,
    /// Train the behavioral-cloning network on the configured training datasets.
    TrainBc,
    /// Run the full benchmark and write report files.
    Eval,
    /// Percent-of-DP against training-set size.
    Curve {
        /// Comma-separated training fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Per-decision latency of every rostered policy on the first test dataset.
    Latency {
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
    },
}

fn load_config(c: &Common) -> Result<BenchConfig> {
    let mut cfg = match &c.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if c.full_scale {
        cfg = cfg.with_full_scale();
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let sat = cfg.satellite()?;
    match cli.cmd {
        Cmd::Gen { count } => {
            ensure_dir(&cfg.out)?;
            let first = cli.common.seed.unwrap_or(cfg.seed);
            for seed in first..first + count {
                let params = GenParams {
                    seed,
                    ..cfg.world.clone()
                };
                let strip = generate_synthetic(&params)?;
                let path = cfg.out.join(format!("gen-{seed}.dtg"));
                save_dataset(&strip, &path)?;
                let mut m = Manifest::for_generated(cfg.scenario, &params);
                m.push("fingerprint", strip.fingerprint());
                m.save_beside(&path)?;
                println!("{}\t{}", path.display(), strip.fingerprint());
            }
        }
        Cmd::Dp { dataset } => {
            let spec = match dataset {
                Some(p) => DatasetSpec::File(p),
                None => DatasetSpec::Generated {
                    seed: cli.common.seed.unwrap_or(cfg.seed),
                },
            };
            let ds = resolve_dataset(&spec, &cfg.world)?;
            let table = dp_table_for(&ds, &sat, &BenchConfig { dp_cache: false, ..cfg.clone() })?;
            let path = if cfg.out.extension().is_some() {
                cfg.out.clone()
            } else {
                ensure_dir(&cfg.out)?;
                cfg.out.join(format!("{}.dtd", ds.strip.fingerprint()))
            };
            table.save(&path)?;
            println!(
                "{}\toptimal reward from soc {}: {}",
                path.display(),
                cfg.soc0,
                table.optimal_value(cfg.soc0)?
            );
        }
        Cmd::TrainQ | Cmd::TrainBc => {
            let want = if matches!(cli.cmd, Cmd::TrainQ) {
                PolicyKind::QLearning
            } else {
                PolicyKind::BehavioralCloning
            };
            let cfg = BenchConfig {
                roster: vec![want],
                ..cfg
            };
            cfg.validate()?;
            let train = cfg
                .train
                .iter()
                .map(|s| resolve_dataset(s, &cfg.world))
                .collect::<Result<Vec<_>>>()?;
            let learners = train_learners(&cfg, &sat, &train, 1.0)?;
            ensure_dir(&cfg.out)?;
            let path = if let Some(q) = &learners.q {
                let p = cfg.out.join("qtable.dtq");
                q.save(&p)?;
                p
            } else {
                let p = cfg.out.join("bc_model.dtm");
                learners.bc.as_ref().expect("trained").save(&p)?;
                p
            };
            println!("{}", path.display());
        }
        Cmd::Eval => {
            let report = run_benchmark(&cfg)?;
            for p in emit_report(&report, &cfg.out, &[ReportFormat::Csv, ReportFormat::Markdown])? {
                eprintln!("wrote {}", p.display());
            }
            println!("{:<20} {:>9} {:>9} {:>9} {:>7}", "policy", "mean %", "min %", "max %", "off");
            for s in report.summary() {
                println!(
                    "{:<20} {:>9.2} {:>9.2} {:>9.2} {:>7.3}",
                    s.policy, s.mean_pct, s.min_pct, s.max_pct, s.off
                );
            }
        }
        Cmd::Curve { fractions } => {
            let fractions = fractions.unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
            let curve = training_curve(&cfg, &fractions)?;
            ensure_dir(&cfg.out)?;
            let path = cfg.out.join("curve.csv");
            curve.write_csv(&path)?;
            for p in &curve.points {
                println!(
                    "{:<20} {:>7} {:>8.2} {:>8.2} {:>8.2}",
                    p.learner, p.fraction, p.min_pct, p.mean_pct, p.max_pct
                );
            }
            eprintln!("wrote {}", path.display());
        }
        Cmd::Latency { steps } => {
            let spec = cfg
                .test
                .first()
                .ok_or_else(|| Error::Config("no test datasets".into()))?;
            let ds = resolve_dataset(spec, &cfg.world)?;
            let train = if cfg.roster.iter().any(|k| k.is_learner()) {
                cfg.train
                    .iter()
                    .map(|s| resolve_dataset(s, &cfg.world))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let learners = if train.is_empty() {
                Default::default()
            } else {
                train_learners(&cfg, &sat, &train, 1.0)?
            };
            let table = dp_table_for(&ds, &sat, &cfg)?;
            println!("{:<20} {:>10} {:>10} {:>10}", "policy", "mean us", "p50 us", "p99 us");
            for &kind in &cfg.roster {
                let mut p = build_policy(kind, &cfg, &learners, &table, &ds.strip, 0)?;
                let s = measure_latency(p.as_mut(), &ds.strip, &sat, steps)?;
                println!(
                    "{:<20} {:>10.3} {:>10.3} {:>10.3}",
                    kind.as_str(),
                    s.mean_us,
                    s.p50_us,
                    s.p99_us
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
