use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use r2r_core::baselines::{tune_weights, Baseline, ControllerKind};
use r2r_core::checkpoint::{load_meta, Checkpoint};
use r2r_core::config::{parse_config, ConfigError, RunConfig};
use r2r_core::curriculum::TrainingMode;
use r2r_core::evalbench::{
    compare_controllers, run_ablation, run_test_case, CaseResult, Controller, TestCase,
    LONG_CSV_HEADER,
};
use r2r_core::sac::{describe_row, run_training, SacPolicy};

const OUTPUT_ENV: &str = "R2R_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "r2r-lab", version, about = "Roll-to-roll tension control lab")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lqr,
    Mpc,
}

impl From<Kind> for ControllerKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Lqr => ControllerKind::Lqr,
            Kind::Mpc => ControllerKind::Mpc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Curriculum,
    DomainRandomization,
    Vanilla,
}

impl From<Mode> for TrainingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Curriculum => TrainingMode::Curriculum,
            Mode::DomainRandomization => TrainingMode::DomainRandomization,
            Mode::Vanilla => TrainingMode::Vanilla,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train SAC for one seed, or every configured seed.
    Train {
        #[arg(long)]
        seed: Option<u64>,
        /// Override sac.total_steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override sac.schedule.mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Evaluate a checkpoint on a benchmark case.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        case: u8,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// SAC checkpoint against LQR and MPC on a benchmark case.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        case: u8,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Grid-search baseline weights on the nominal case.
    Tune {
        #[arg(long, value_enum)]
        controller: Kind,
    },
    /// Train all three strategies and tabulate both cases.
    Ablate {
        /// Comma-separated seeds; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print checkpoint metadata.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>, fallback: Option<RunConfig>) -> Result<RunConfig, Failure> {
    let mut cfg = match (path, fallback) {
        (Some(p), _) => parse_config(p)?,
        (None, Some(c)) => c,
        (None, None) => RunConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
        cfg.output_dir = PathBuf::from(dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, sub: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(sub);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.echo_to(&dir)
        .with_context(|| format!("writing config into {}", dir.display()))?;
    Ok(dir)
}

/// Stdout that tolerates a closed pipe (`r2r-lab ... | head`).
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing to stdout: {e}");
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn test_case(id: u8) -> Result<TestCase> {
    TestCase::from_id(id).with_context(|| format!("unknown test case {id}"))
}

/// Config stored next to a checkpoint, unless one was given explicitly.
fn checkpoint_config(cli_config: Option<&Path>, ckpt: &Path) -> Result<RunConfig, Failure> {
    let stored = load_meta(ckpt).ok().map(|m| m.config);
    load_config(cli_config, stored)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Train { seed, steps, mode } => {
            let mut cfg = load_config(config_path, None)?;
            if let Some(s) = steps {
                cfg.sac.total_steps = s;
            }
            if let Some(m) = mode {
                cfg.sac.schedule.mode = m.into();
            }
            cfg.validate()?;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for s in seeds {
                let dir = out_dir(&cfg, &format!("train/seed_{s}"))?;
                eprintln!("training seed {s} into {}", dir.display());
                let outcome = run_training(&cfg, s, Some(&dir), &mut |row| {
                    eprintln!("{}", describe_row(row))
                })
                .map_err(anyhow::Error::from)?;
                match &outcome.best {
                    Some((rec, ck)) => emit(&format!(
                        "seed {s}: best eval return {:.4} at step {} ({} parameters)\n",
                        rec.eval_return,
                        rec.step,
                        ck.param_count()
                    )),
                    None => emit(&format!("seed {s}: no evaluation ran\n")),
                }
            }
        }
        Command::Evaluate {
            checkpoint,
            case,
            episodes,
        } => {
            let cfg = checkpoint_config(config_path, &checkpoint)?;
            let ck = Checkpoint::load(&checkpoint).map_err(anyhow::Error::from)?;
            let case = test_case(case)?;
            let mut policy = SacPolicy::from_checkpoint(&ck);
            let n = episodes.unwrap_or(cfg.eval.episodes);
            let dir = out_dir(&cfg, &format!("evaluate/case{}", case.id()))?;
            let result = evaluate(&cfg, case, &mut policy, n)?;
            write_case(&dir, &[result.clone()])?;
            let table = compare_controllers(&[(result.controller.clone(), result.report.clone())], &[]);
            emit(&table.to_csv());
        }
        Command::Compare {
            checkpoint,
            case,
            episodes,
        } => {
            let cfg = checkpoint_config(config_path, &checkpoint)?;
            let ck = Checkpoint::load(&checkpoint).map_err(anyhow::Error::from)?;
            let case = test_case(case)?;
            let n = episodes.unwrap_or(cfg.eval.episodes);
            let dir = out_dir(&cfg, &format!("compare/case{}", case.id()))?;
            let mut results = vec![evaluate(&cfg, case, &mut SacPolicy::from_checkpoint(&ck), n)?];
            let mut definitions = Vec::new();
            for kind in [ControllerKind::Mpc, ControllerKind::Lqr] {
                let mut ctrl = design_baseline(&cfg, kind)?;
                definitions.push(ctrl.definition());
                results.push(evaluate(&cfg, case, &mut ctrl, n)?);
            }
            write_json(&dir.join("controllers.json"), &definitions)?;
            write_case(&dir, &results)?;
            let reports: Vec<_> = results
                .iter()
                .map(|r| (r.controller.clone(), r.report.clone()))
                .collect();
            let table = compare_controllers(&reports, &["lqr", "mpc"]);
            write(&dir.join("comparison.csv"), &table.to_csv())?;
            emit(&table.to_csv());
        }
        Command::Tune { controller } => {
            let cfg = load_config(config_path, None)?;
            let kind: ControllerKind = controller.into();
            let dir = out_dir(&cfg, &format!("tune/{}", kind.name()))?;
            let report = tune_weights(kind, &cfg.plant, &cfg.env, &cfg.baselines, cfg.eval.master_seed)
                .map_err(anyhow::Error::from)?;
            write(&dir.join("tuning_report.csv"), &report.to_csv())?;
            let best = Baseline::design(kind, &cfg.plant, report.best().weights, &cfg.baselines)
                .map_err(anyhow::Error::from)?;
            write_json(&dir.join("best_controller.json"), &best.definition())?;
            emit(&report.to_csv());
        }
        Command::Ablate { seeds, steps } => {
            let mut cfg = load_config(config_path, None)?;
            if let Some(s) = steps {
                cfg.sac.total_steps = s;
            }
            cfg.validate()?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            let dir = out_dir(&cfg, "ablation")?;
            let table = run_ablation(&cfg, &seeds, Some(&dir), &mut |mode, seed, row| {
                eprintln!("[{} seed {seed}] {}", mode.name(), describe_row(row))
            })
            .map_err(anyhow::Error::from)?;
            write(&dir.join("ablation.csv"), &table.to_csv())?;
            write_json(&dir.join("ablation.json"), &table)?;
            emit(&table.to_csv());
        }
        Command::Inspect { checkpoint } => {
            let ck = Checkpoint::load(&checkpoint).map_err(anyhow::Error::from)?;
            let value = match load_meta(&checkpoint) {
                Ok(meta) => serde_json::to_value(meta).map_err(anyhow::Error::from)?,
                Err(_) => serde_json::json!({
                    "step": ck.step,
                    "seed": ck.seed,
                    "alpha": ck.log_alpha.exp(),
                    "param_count": ck.param_count(),
                    "actor_param_count": ck.actor.param_count(),
                    "shapes": { "actor": ck.actor.sizes(), "critic": ck.critics[0].sizes() },
                }),
            };
            let mut text = serde_json::to_string_pretty(&value).map_err(anyhow::Error::from)?;
            text.push('\n');
            emit(&text);
        }
    }
    Ok(())
}

fn design_baseline(cfg: &RunConfig, kind: ControllerKind) -> Result<Baseline> {
    let weights = if cfg.baselines.auto_tune {
        let rep = tune_weights(kind, &cfg.plant, &cfg.env, &cfg.baselines, cfg.eval.master_seed)?;
        rep.best().weights
    } else {
        cfg.baselines.weights(kind)
    };
    Ok(Baseline::design(kind, &cfg.plant, weights, &cfg.baselines)?)
}

fn evaluate(cfg: &RunConfig, case: TestCase, ctrl: &mut dyn Controller, n: usize) -> Result<CaseResult> {
    if n == 0 {
        bail!("at least one episode is required");
    }
    Ok(run_test_case(
        case,
        ctrl,
        &cfg.plant,
        &cfg.env,
        n,
        cfg.eval.master_seed,
        &cfg.eval.step_metrics,
    )?)
}

/// Per-controller reports, first-episode wide traces and a long-format trace file.
fn write_case(dir: &Path, results: &[CaseResult]) -> Result<()> {
    let mut long = String::from(LONG_CSV_HEADER);
    for r in results {
        write_json(&dir.join(format!("{}_report.json", r.controller)), r)?;
        if let Some(first) = r.traces.first() {
            write(&dir.join(format!("{}_episode0.csv", r.controller)), &first.to_csv())?;
            first.to_long_csv_rows(&r.controller, &mut long);
        }
    }
    write(&dir.join("traces_long.csv"), &long)
}
