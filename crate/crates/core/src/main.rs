use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossprop::config::ExperimentConfig;
use crossprop::study::{read_summary, report, run_study, RunOptions};
use crossprop::Error;

#[derive(Parser)]
#[command(name = "crossprop", about = "Wave packets through eigenvalue crossings: studies and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed of randomized studies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run { config: PathBuf },
    /// Merge summary files into one table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn fail(out_dir: &PathBuf, err: &Error) -> ExitCode {
    let (code, body) = match err {
        Error::Config { key, message } => (2, serde_json::json!({ "error": "config", "key": key, "message": message })),
        e => (1, serde_json::json!({ "error": "numerical", "message": e.to_string() })),
    };
    let text = serde_json::to_string_pretty(&body).unwrap_or_default();
    eprintln!("{text}");
    if std::fs::create_dir_all(out_dir).is_ok() {
        let _ = std::fs::write(out_dir.join("error.json"), text + "\n");
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
        }
    }
    match cli.command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => return fail(&cli.out_dir, &e),
            };
            let opts = RunOptions { out_dir: cli.out_dir.clone(), seed: cli.seed, verbose: cli.verbose };
            match run_study(&cfg, &opts) {
                Ok(s) => {
                    for c in &s.checks {
                        let tag = c.criterion.map(|n| format!("[{n}] ")).unwrap_or_default();
                        println!("{} {tag}{}: {:.4e} ({})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.threshold);
                    }
                    println!("{}: {}", s.study, if s.pass { "PASS" } else { "FAIL" });
                    if s.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(&cli.out_dir, &e),
            }
        }
        Command::Report { files } => {
            let summaries: Result<Vec<_>, _> = files.iter().map(|p| read_summary(p)).collect();
            match summaries.and_then(|s| report(&s)) {
                Ok((text, csv)) => {
                    print!("{text}");
                    let write = std::fs::create_dir_all(&cli.out_dir)
                        .and_then(|_| std::fs::write(cli.out_dir.join("report.csv"), csv))
                        .and_then(|_| std::fs::write(cli.out_dir.join("report.txt"), text));
                    match write {
                        Ok(()) => ExitCode::SUCCESS,
                        Err(e) => fail(&cli.out_dir, &Error::Io(e)),
                    }
                }
                Err(e) => fail(&cli.out_dir, &e),
            }
        }
    }
}
