//! `rsprompt`: benchmark driver for prompt-learning adaptation of a frozen
//! dual encoder on remote sensing scene classification.

use clap::{Parser, Subcommand};
use rsprompt_cli::config::ExperimentConfig;
use rsprompt_cli::ops::{self, MethodKind};
use rsprompt_cli::plan::{ExperimentPlan, Task, TaskStatus};
use rsprompt_cli::CliError;
use rsprompt_eval::{emit_report, emit_transfer, ReportInputs};
use rsprompt_methods::Method;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rsprompt", version, about = "prompt learning benchmark for remote sensing scene classification")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the output root (paths only; hyper-parameters stay in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the full experiment plan: sample, train, evaluate, report.
    Run {
        /// Parallel task workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Continue from a persisted plan.
        #[arg(long)]
        resume: bool,
        /// Re-execute tasks even when cached results exist.
        #[arg(long)]
        force: bool,
    },
    /// Zero-shot evaluation with a hand-crafted template.
    Zeroshot {
        #[arg(long)]
        dataset: String,
        /// Template with a `{}` class slot; the config default applies when omitted.
        #[arg(long)]
        template: Option<String>,
    },
    /// Linear-probe baseline for one (dataset, shots, seed) cell.
    Probe {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Train one (dataset, method, shots, seed) cell.
    Train {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        method: String,
        #[arg(long)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a trained checkpoint on its dataset's test split.
    Eval {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        method: String,
        #[arg(long)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Cross-dataset transfer grid from 16-shot checkpoints.
    Crosseval {
        /// Restrict to one method (all four otherwise).
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value_t = 16)]
        shots: usize,
    },
    /// Re-emit reports and figures from cached per-seed results.
    Report,
    /// Print backbone, split, and config digests for provenance.
    Digest,
    /// Dataset helper: print acquisition instructions.
    Data {
        #[arg(long)]
        dataset: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(cli_config: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let path = cli_config
        .clone()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(out) = out {
        cfg.paths.output_root = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Data { dataset } => {
            println!("{}", rsprompt_data::download_instructions(&dataset)?);
            Ok(())
        }
        Command::Digest => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let bundle = ops::load_bundle(&cfg)?;
            println!("config\t{}", cfg.hash());
            println!("backbone\t{}", bundle.digest());
            for name in &cfg.experiment.datasets {
                let ds = ops::load_dataset(&cfg, name)?;
                println!("{name}::train\t{}", ds.train.digest());
                println!("{name}::test\t{}", ds.test.digest());
            }
            Ok(())
        }
        Command::Zeroshot { dataset, template } => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let bundle = ops::load_bundle(&cfg)?;
            let ds = ops::load_dataset(&cfg, &dataset)?;
            let template = template.unwrap_or_else(|| cfg.method.zeroshot_template.clone());
            let report = ops::zeroshot_report(&cfg, &bundle, &ds, &template)?;
            println!(
                "zeroshot\t{dataset}\t{template:?}\taccuracy {:.2}%",
                report.mean_accuracy * 100.0
            );
            persist_report(&cfg, &report)?;
            Ok(())
        }
        Command::Probe {
            dataset,
            shots,
            seed,
            force,
        } => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let bundle = ops::load_bundle(&cfg)?;
            let ds = ops::load_dataset(&cfg, &dataset)?;
            let report = ops::run_probe_cell(&cfg, &bundle, &ds, shots, seed, force)?;
            println!(
                "linear_probe\t{dataset}\tshots {shots}\tseed {seed}\taccuracy {:.2}%",
                report.mean_accuracy * 100.0
            );
            Ok(())
        }
        Command::Train {
            dataset,
            method,
            shots,
            seed,
            force,
        } => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let bundle = ops::load_bundle(&cfg)?;
            let ds = ops::load_dataset(&cfg, &dataset)?;
            let method = prompt_method(&method)?;
            let templates = ops::load_templates(&cfg)?;
            let report =
                ops::run_prompt_cell(&cfg, &bundle, &ds, method, shots, seed, &templates, force)?;
            println!(
                "{}\t{dataset}\tshots {shots}\tseed {seed}\taccuracy {:.2}%",
                method.name(),
                report.mean_accuracy * 100.0
            );
            Ok(())
        }
        Command::Eval {
            dataset,
            method,
            shots,
            seed,
        } => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let bundle = ops::load_bundle(&cfg)?;
            let ds = ops::load_dataset(&cfg, &dataset)?;
            let method = prompt_method(&method)?;
            let path = ops::cell_dir(&cfg.paths.output_root, &dataset, method.name(), shots, seed)
                .join("checkpoint.rsw");
            let (state, _) = rsprompt_train::load_checkpoint(&path, &bundle.digest(), Some(&cfg.hash()))?;
            let (preds, labels) = ops::evaluate_prompt_state(&bundle, &ds, &state)?;
            let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            println!(
                "{}\t{dataset}\tshots {shots}\tseed {seed}\taccuracy {:.2}%",
                method.name(),
                correct as f64 / labels.len() as f64 * 100.0
            );
            Ok(())
        }
        Command::Crosseval { method, shots } => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let bundle = ops::load_bundle(&cfg)?;
            let methods: Vec<Method> = match method {
                Some(m) => vec![prompt_method(&m)?],
                None => cfg
                    .experiment
                    .methods
                    .iter()
                    .filter_map(|m| match MethodKind::parse(m) {
                        Ok(MethodKind::Prompt(p)) => Some(p),
                        _ => None,
                    })
                    .collect(),
            };
            if methods.is_empty() {
                return Err(CliError::Config("no prompt methods to cross-evaluate".into()));
            }
            let datasets = cfg
                .experiment
                .datasets
                .iter()
                .map(|name| ops::load_dataset(&cfg, name))
                .collect::<Result<Vec<_>, _>>()?;
            let (matrices, winner) = ops::crosseval_grid(&cfg, &bundle, &datasets, &methods, shots)?;
            for m in &matrices {
                println!("transfer matrix ({}):", m.method);
                for (i, source) in m.sources.iter().enumerate() {
                    let cells: Vec<String> = m.cells[i]
                        .iter()
                        .map(|c| c.map_or("  -  ".into(), |v| format!("{:5.2}", v * 100.0)))
                        .collect();
                    println!("  {source:>12} -> {}", cells.join("  "));
                }
            }
            emit_transfer(&matrices, Some(&winner), &cfg.paths.output_root)?;
            Ok(())
        }
        Command::Report => {
            let cfg = load_config(&cli.config, &cli.out)?;
            let inputs = collect_reports(&cfg)?;
            let written = emit_report(&inputs, &cfg.paths.output_root)?;
            println!("wrote {} report artifacts", written.len());
            Ok(())
        }
        Command::Run { jobs, resume, force } => run_plan(&cli, jobs, resume, force),
    }
}

fn prompt_method(name: &str) -> Result<Method, CliError> {
    match MethodKind::parse(name)? {
        MethodKind::Prompt(m) => Ok(m),
        other => Err(CliError::Config(format!(
            "{} is not a trainable prompt method",
            other.name()
        ))),
    }
}

fn persist_report(cfg: &ExperimentConfig, report: &rsprompt_eval::EvalReport) -> Result<(), CliError> {
    let dir = cfg
        .paths
        .output_root
        .join(&report.dataset)
        .join(&report.method);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Gather every cached aggregate for the report command.
fn collect_reports(cfg: &ExperimentConfig) -> Result<ReportInputs, CliError> {
    let mut inputs = ReportInputs::default();
    for dataset in &cfg.experiment.datasets {
        for method in &cfg.experiment.methods {
            match MethodKind::parse(method)? {
                MethodKind::Zeroshot => {
                    let path = cfg
                        .paths
                        .output_root
                        .join(dataset)
                        .join("zeroshot")
                        .join("report.json");
                    if path.is_file() {
                        inputs
                            .reports
                            .push(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
                    }
                }
                kind => {
                    for &shots in &cfg.experiment.shots {
                        if let Some(agg) = ops::aggregate_cell(
                            &cfg.paths.output_root,
                            dataset,
                            kind.name(),
                            shots,
                            &cfg.experiment.seeds,
                        )? {
                            inputs.reports.push(agg);
                        }
                    }
                }
            }
        }
    }
    Ok(inputs)
}

fn run_plan(cli: &Cli, jobs: usize, resume: bool, force: bool) -> Result<(), CliError> {
    let cfg = load_config(&cli.config, &cli.out)?;
    let bundle = ops::load_bundle(&cfg)?;
    let templates = ops::load_templates(&cfg)?;
    let hash = cfg.hash();

    // enumerate: one task per trainable cell, one per zero-shot dataset
    let mut tasks: Vec<Task> = Vec::new();
    for dataset in &cfg.experiment.datasets {
        for method in &cfg.experiment.methods {
            match MethodKind::parse(method)? {
                MethodKind::Zeroshot => tasks.push(Task {
                    id: Task::identity(&hash, dataset, "zeroshot", 0, 0),
                    dataset: dataset.clone(),
                    method: "zeroshot".into(),
                    shots: 0,
                    seed: 0,
                    status: TaskStatus::Pending,
                }),
                kind => {
                    for &shots in &cfg.experiment.shots {
                        for &seed in &cfg.experiment.seeds {
                            tasks.push(Task {
                                id: Task::identity(&hash, dataset, kind.name(), shots, seed),
                                dataset: dataset.clone(),
                                method: kind.name().into(),
                                shots,
                                seed,
                                status: TaskStatus::Pending,
                            });
                        }
                    }
                }
            }
        }
    }
    let mut plan = ExperimentPlan {
        config_hash: hash.clone(),
        tasks,
    };
    let plan_path = cfg.paths.output_root.join("plan.json");
    if resume && plan_path.is_file() && !force {
        let previous = ExperimentPlan::load(&plan_path)?;
        plan.resume_from(&previous);
    }
    plan.save(&plan_path)?;

    let total = plan.tasks.len();
    log::info!("{total} tasks enumerated ({} pending)", plan.pending().count());

    // datasets loaded once, shared read-only
    let mut datasets = std::collections::BTreeMap::new();
    for name in &cfg.experiment.datasets {
        datasets.insert(name.clone(), ops::load_dataset(&cfg, name)?);
    }

    let run_task = |task: &Task| -> Result<(), CliError> {
        let ds = &datasets[&task.dataset];
        match MethodKind::parse(&task.method)? {
            MethodKind::Zeroshot => {
                let report =
                    ops::zeroshot_report(&cfg, &bundle, ds, &cfg.method.zeroshot_template)?;
                println!(
                    "zeroshot\t{}\taccuracy {:.2}%",
                    task.dataset,
                    report.mean_accuracy * 100.0
                );
                persist_report(&cfg, &report)
            }
            MethodKind::LinearProbe => {
                let report =
                    ops::run_probe_cell(&cfg, &bundle, ds, task.shots, task.seed, force)?;
                println!(
                    "linear_probe\t{}\tshots {}\tseed {}\taccuracy {:.2}%",
                    task.dataset,
                    task.shots,
                    task.seed,
                    report.mean_accuracy * 100.0
                );
                Ok(())
            }
            MethodKind::Prompt(method) => {
                let report = ops::run_prompt_cell(
                    &cfg, &bundle, ds, method, task.shots, task.seed, &templates, force,
                )?;
                println!(
                    "{}\t{}\tshots {}\tseed {}\taccuracy {:.2}%",
                    task.method,
                    task.dataset,
                    task.shots,
                    task.seed,
                    report.mean_accuracy * 100.0
                );
                Ok(())
            }
        }
    };

    let plan = std::sync::Mutex::new(plan);
    let failures = std::sync::atomic::AtomicUsize::new(0);
    let indices: Vec<usize> = {
        let p = plan.lock().unwrap();
        p.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.status == TaskStatus::Pending)
            .map(|(i, _)| i)
            .collect()
    };
    let execute = |&i: &usize| {
        let task = { plan.lock().unwrap().tasks[i].clone() };
        let outcome = run_task(&task);
        let mut p = plan.lock().unwrap();
        p.tasks[i].status = match outcome {
            Ok(()) => TaskStatus::Done,
            Err(ref e) => {
                log::error!(
                    "task {}/{}/{}/seed{} failed: {e}",
                    task.dataset,
                    task.method,
                    task.shots,
                    task.seed
                );
                failures.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                TaskStatus::Failed
            }
        };
        let _ = p.save(&plan_path);
    };
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Task {
                what: "worker pool".into(),
                problem: e.to_string(),
            })?;
        pool.install(|| {
            rayon::prelude::ParallelIterator::for_each(
                rayon::prelude::IntoParallelRefIterator::par_iter(&indices),
                execute,
            )
        });
    } else {
        indices.iter().for_each(execute);
    }

    // aggregated report over everything cached
    let inputs = collect_reports(&cfg)?;
    if !inputs.reports.is_empty() {
        emit_report(&inputs, &cfg.paths.output_root)?;
    }
    let failed = failures.load(std::sync::atomic::Ordering::SeqCst);
    if failed > 0 {
        return Err(CliError::Task {
            what: "experiment plan".into(),
            problem: format!("{failed} of {total} tasks failed; plan state persisted for resume"),
        });
    }
    Ok(())
}
