//! `rodiac`: prepare data, build the embedding cache, train, evaluate and
//! restore Romanian diacritics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rodiac::commands::{self, Restorer};
use rodiac::config::{RunConfig, KEY_DOCS};
use rodiac::dataset::{Split, SplitSpec};
use rodiac::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "rodiac", version, about = "Romanian diacritics restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and sentence-split a corpus, then assign train/dev/test.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train, dev and test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop sentences whose share of marked target letters is lower.
        #[arg(long)]
        min_diacritic_ratio: Option<f64>,
    },
    /// Build the diacritic-free averaged embedding cache from a vector file.
    Embed {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a key=value config file.
    #[command(after_help = config_help())]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on the dev or test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        split: EvalSplit,
        /// Tab-separated output.
        #[arg(long)]
        tsv: bool,
    },
    /// Restore diacritics in text read from a file or standard input.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Keep letters that already carry a diacritic.
        #[arg(long)]
        preserve_existing: bool,
    },
    /// Compare analytic and finite-difference gradients of a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config_help() -> String {
    let mut s = String::from("Config keys:\n");
    for (k, doc) in KEY_DOCS {
        s.push_str(&format!("  {k:<18} {doc}\n"));
    }
    s
}

fn run(cli: Cli) -> rodiac::Result<()> {
    let stdout = io::stdout();
    match cli.command {
        Command::Prepare { corpus, out, split, seed, min_diacritic_ratio } => {
            let spec = SplitSpec::parse(&split, seed)?;
            let summary = commands::prepare(&corpus, &out, &spec, min_diacritic_ratio)?;
            print!("{summary}");
        }
        Command::Embed { vectors, out } => {
            print!("{}", commands::embed(&vectors, &out)?);
        }
        Command::Train { config, overrides } => {
            let mut run = RunConfig::load(&config)?;
            for o in &overrides {
                run.apply_override(o)?;
            }
            println!("epoch\ttrain_loss\tdev_char_acc\tseconds");
            let summary = commands::train_run(&run, |r| {
                println!("{r}");
                let _ = io::stdout().flush();
            })?;
            println!("best epoch {}, checkpoint written to {}", summary.best_epoch, summary.checkpoint.display());
        }
        Command::Evaluate { checkpoint, split, tsv } => {
            let split = match split {
                EvalSplit::Dev => Split::Dev,
                EvalSplit::Test => Split::Test,
            };
            print!("{}", commands::evaluate_report(&checkpoint, split, tsv)?);
        }
        Command::Restore { checkpoint, input, preserve_existing } => {
            let restorer = Restorer::load(&checkpoint, preserve_existing)?;
            let out = BufWriter::new(stdout.lock());
            match input {
                Some(path) => {
                    let file = File::open(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    restorer.restore_stream(BufReader::new(file), out)?;
                }
                None => restorer.restore_stream(io::stdin().lock(), out)?,
            }
        }
        Command::Gradcheck { eps, threshold, seed } => {
            let report = commands::gradcheck(eps, threshold, seed)?;
            println!("max relative error {:e} over {} coordinates", report.max_rel_error, report.coords_checked);
            if let Some(w) = report.worst {
                println!("worst {}[{}]: analytic {:e}, numeric {:e}", w.tensor, w.index, w.analytic, w.numeric);
            }
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
