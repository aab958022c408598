use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gmdg::config::Config;
use gmdg::divergence::verify_suite;
use gmdg::io::write_atomic;
use gmdg::model::save_checkpoint;
use gmdg::par::{self, Execution};
use gmdg::synth::{generate, leave_one_out_split, write_csv, SynthSpec};
use gmdg::trainer::{evaluate, run_toy_matrix, toy_base_config, train, write_history_csv};
use gmdg::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "gmdg", version, about = "Gaussian multi-domain alignment: data, checks, training")]
struct Cli {
    /// Run fan-out work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        dataset: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the randomized identity/inequality suite and write a JSON report.
    Verify {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=65536))]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration; writes history, checkpoint and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every objective variant on all four datasets and splits.
    ToyMatrix {
        /// Comma-separated seed list, e.g. "0,1,2".
        #[arg(long, value_parser = parse_seeds)]
        seeds: SeedList,
        #[arg(long)]
        out: PathBuf,
        /// Optional config whose [train] and [weights] sections set the base run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("need at least one seed".into());
    }
    Ok(SeedList(seeds))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> gmdg::Result<()>) -> gmdg::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> gmdg::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn run(cli: Cli) -> gmdg::Result<ExitCode> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Synth { dataset, seed, out } => {
            let data = generate(&SynthSpec::new(dataset, seed))?;
            write_atomic(&out, &csv_bytes(|b| write_csv(&data, b))?)?;
        }
        Command::Verify { trials, seed, out } => {
            let report = verify_suite(trials as usize, seed, exec)?;
            write_json(&out, &report)?;
            for c in &report.checks {
                println!("{:32} trials {:5} failures {:3} worst slack {:.3e}", c.check_name, c.trials, c.failures, c.worst_slack);
            }
            if !report.passed() {
                return Ok(ExitCode::from(EXIT_VERIFY));
            }
        }
        Command::Train { config } => {
            let cfg = Config::load(&config)?;
            let data = generate(&cfg.data.spec())?;
            let split = leave_one_out_split(&data, cfg.data.test_domain)?;
            let tc = cfg.train_config();
            let out = train(&split, &tc)?;
            let test_mse = evaluate(&out.model, &split.test)?;
            let dir = &cfg.output.dir;
            write_atomic(&dir.join("history.csv"), &csv_bytes(|b| write_history_csv(&out.history, b))?)?;
            save_checkpoint(
                &out.model,
                serde_json::to_value(&cfg)?,
                tc.seed,
                out.best_step,
                &dir.join("checkpoint.bin"),
                &dir.join("checkpoint.json"),
            )?;
            write_json(
                &dir.join("summary.json"),
                &serde_json::json!({
                    "dataset": cfg.data.dataset,
                    "test_domain": cfg.data.test_domain,
                    "best_step": out.best_step,
                    "val_mse": out.val_mse,
                    "test_mse": test_mse,
                }),
            )?;
            println!("best step {} val mse {:.6} test mse {:.6}", out.best_step, out.val_mse, test_mse);
        }
        Command::ToyMatrix { seeds, out, config } => {
            let (base, data) = match config {
                Some(p) => {
                    let c = Config::load(&p)?;
                    (c.train_config(), c.data.spec())
                }
                None => (toy_base_config(), SynthSpec::default()),
            };
            let m = run_toy_matrix(&seeds.0, &base, &data, exec)?;
            let verdict = m.verdict();
            write_atomic(&out.join("toy_matrix.csv"), &csv_bytes(|b| m.write_table_csv(b))?)?;
            write_atomic(&out.join("runs.csv"), &csv_bytes(|b| m.write_runs_csv(b))?)?;
            write_json(&out.join("verdict.json"), &verdict)?;
            print!("{}", String::from_utf8_lossy(&csv_bytes(|b| m.write_table_csv(b))?));
            println!("with_psi_best_count {} passed {}", verdict.with_psi_best_count, verdict.passed);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    par::init_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
