//! Command-line entry point: training, evaluation, kernel inspection, data
//! generation and the oracle self-test.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use funcvi::check;
use funcvi::cnngp::{prior_structured_cov, ArchSpec};
use funcvi::error::FvError;
use funcvi::fvi::{train, FviModel, TaskKind};
use funcvi::metrics::curve_to_csv;
use funcvi::tasks::evaluate;

#[derive(Parser)]
#[command(name = "funcvi", version, about = "Functional variational inference with structured GP priors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the oracle suite (dense inversion, quadrature, kernel MC,
    /// gradient checks) and print a pass/fail table.
    Selftest {
        /// Reduced sample counts with correspondingly looser MC tolerance.
        #[arg(long)]
        quick: bool,
    },
    /// Train a model from a config file; writes checkpoint and log CSV.
    Train {
        config: PathBuf,
        /// Override config keys, e.g. --set lr=1e-4
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on the config's test split; writes metric CSVs.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Dump the prior kernel of a small input batch as CSV.
    Kernel {
        config: PathBuf,
        /// Number of batch inputs to build the kernel over.
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Output file; defaults to <out_dir>/kernel.csv
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a toy dataset and dump it as CSV + manifest + PGM previews.
    GenData {
        /// regression1d | minidepth | miniseg
        task: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &FvError) -> u8 {
    match err {
        FvError::Parse(_) | FvError::Io(_) | FvError::EmptyInput(_) => 1,
        FvError::NonPositiveDefinite { .. }
        | FvError::NonFinite(_)
        | FvError::Domain(_)
        | FvError::ShapeMismatch(_) => 2,
    }
}

fn load_config(path: &PathBuf, sets: &[String]) -> Result<Config, FvError> {
    let mut cfg = Config::from_file(path)?;
    cfg.apply_overrides(sets)?;
    Ok(cfg)
}

fn cmd_selftest(quick: bool) -> Result<bool, FvError> {
    let (instances, kl_instances, coords, channels, draws, tol) = if quick {
        (48, 20, 25, 128, 300, 0.10)
    } else {
        (200, 50, 100, 512, 2000, 0.05)
    };
    let arch = ArchSpec::interp_stack(1, 8, 8, 8, 8, 0.2, 0.08, 0.5, 0.1)?;
    let outcomes = vec![
        check::check_schur_vs_dense(instances, 20260810),
        check::check_kl_vs_dense(kl_instances, 77),
        check::check_quadrature(0),
        check::check_gradients(coords, 20260810),
        check::check_kernel_mc(&arch, channels, draws, tol, 99),
    ];
    let mut all = true;
    println!("{:<36} {:>6}  detail", "check", "status");
    for o in &outcomes {
        println!(
            "{:<36} {:>6}  {}",
            o.name,
            if o.pass { "ok" } else { "FAIL" },
            o.detail
        );
        all &= o.pass;
    }
    Ok(all)
}

fn cmd_train(cfg: &Config) -> Result<(), FvError> {
    let setup = cfg.task_setup();
    let data = setup.dataset()?;
    let arch = cfg.arch_spec()?;
    let mut model = setup.build_model(arch, cfg.jitter)?;
    model.likelihood = cfg.likelihood;
    validate_likelihood(&model)?;
    let tc = cfg.train_config();
    let log = train(&mut model, &data.train_x, &data.train_y, &tc)?;
    let out = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out)?;
    let mut ckpt = Vec::new();
    model.save(&mut ckpt)?;
    std::fs::write(out.join("checkpoint.txt"), ckpt)?;
    std::fs::write(out.join("train_log.csv"), log.to_csv())?;
    std::fs::write(out.join("config_used.txt"), cfg.render())?;
    let last = log.rows.last().expect("nonempty log");
    println!(
        "trained {} for {} epochs ({} steps): objective {:.3}, kl {:.3}",
        cfg.task,
        cfg.epochs,
        log.rows.len(),
        last.objective,
        last.kl
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn validate_likelihood(model: &FviModel) -> Result<(), FvError> {
    match (&model.task, model.likelihood) {
        (TaskKind::Regression, funcvi::fvi::LikelihoodKind::Boltzmann) => Err(FvError::Parse(
            "boltzmann likelihood needs a classification task".into(),
        )),
        (TaskKind::Classification { .. }, lk) if lk != funcvi::fvi::LikelihoodKind::Boltzmann => {
            Err(FvError::Parse(
                "classification tasks train with the boltzmann likelihood".into(),
            ))
        }
        _ => Ok(()),
    }
}

fn cmd_eval(cfg: &Config, checkpoint: &PathBuf) -> Result<(), FvError> {
    let file = std::fs::File::open(checkpoint).map_err(|e| {
        FvError::Parse(format!("cannot open checkpoint {}: {e}", checkpoint.display()))
    })?;
    let arch = cfg.arch_spec()?;
    let model = FviModel::load(&mut std::io::BufReader::new(file), arch)?;
    let setup = cfg.task_setup();
    let data = setup.dataset()?;
    let report = evaluate(&model, &data, &cfg.train_config())?;
    let out = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out)?;
    let mut metrics = String::from("metric,value\n");
    for (k, v) in &report.metrics {
        metrics.push_str(&format!("{k},{v}\n"));
        println!("{k} = {v}");
    }
    std::fs::write(out.join("metrics.csv"), metrics)?;
    std::fs::write(out.join("calibration.csv"), curve_to_csv(&report.curve))?;
    std::fs::write(out.join("predictions.csv"), &report.predictions_csv)?;
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_kernel(cfg: &Config, n: usize, out_file: Option<PathBuf>) -> Result<(), FvError> {
    let setup = cfg.task_setup();
    let data = setup.dataset()?;
    if data.train_x.len() < n {
        return Err(FvError::Parse(format!(
            "kernel batch of {n} wants more inputs than the dataset has ({})",
            data.train_x.len()
        )));
    }
    let arch = cfg.arch_spec()?;
    let prior = prior_structured_cov(&arch, &data.train_x[..n], 1)?;
    let path = match out_file {
        Some(p) => p,
        None => {
            let dir = cfg.resolved_out_dir();
            std::fs::create_dir_all(&dir)?;
            dir.join("kernel.csv")
        }
    };
    let mut buf = Vec::new();
    prior.cov.dump_csv(&mut buf)?;
    std::fs::write(&path, buf)?;
    println!(
        "kernel over {n} inputs (B={}, P={}) written to {}",
        prior.cov.batch(),
        prior.cov.pixels(),
        path.display()
    );
    Ok(())
}

fn cmd_gen_data(task: &str, n: usize, seed: u64, out: &PathBuf) -> Result<(), FvError> {
    let data = match task {
        "regression1d" => funcvi::toytasks::gen_regression_1d(n, seed)?,
        "minidepth" => funcvi::toytasks::gen_minidepth(n, seed)?,
        "miniseg" => funcvi::toytasks::gen_miniseg(n, seed)?,
        other => return Err(FvError::Parse(format!("unknown task '{other}'"))),
    };
    data.dump(out)?;
    println!(
        "{task}: {} train / {} test / {} ood dumped to {}",
        data.train_x.len(),
        data.test_x.len(),
        data.ood_x.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, FvError> {
    match cli.cmd {
        Cmd::Selftest { quick } => {
            let all = cmd_selftest(quick)?;
            if all {
                println!("all checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("selftest FAILED");
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Train { config, set } => {
            let cfg = load_config(&config, &set)?;
            cmd_train(&cfg)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval {
            config,
            checkpoint,
            set,
        } => {
            let cfg = load_config(&config, &set)?;
            cmd_eval(&cfg, &checkpoint)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Kernel {
            config,
            n,
            out,
            set,
        } => {
            let cfg = load_config(&config, &set)?;
            cmd_kernel(&cfg, n, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::GenData { task, n, seed, out } => {
            cmd_gen_data(&task, n, seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
