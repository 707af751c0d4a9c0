use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsbench_cli::config::RunConfig;
use hsbench_cli::error::CliError;
use hsbench_cli::pipeline;

/// Hate-speech benchmark: corpus statistics, classical baselines and a
/// CNN-BiLSTM classifier on Indonesian tweets.
#[derive(Parser)]
#[command(name = "hsbench", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Accepted before and after the subcommand; later values win and `--set`
/// lists are concatenated.
#[derive(Args, Default)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (overrides `data`)
    #[arg(long)]
    data: Option<PathBuf>,
    /// hs or abusive
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any setting, e.g. `--set neural.max_epochs=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn merge(mut self, later: Common) -> Common {
        self.config = later.config.or(self.config);
        self.data = later.data.or(self.data);
        self.task = later.task.or(self.task);
        self.seed = later.seed.or(self.seed);
        self.out = later.out.or(self.out);
        self.set.extend(later.set);
        self
    }
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics and plots
    Eda {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate the classical families and score them on the test split
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Train the neural model
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score the test split with a saved checkpoint
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic corpus
    Synth {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long)]
        output: PathBuf,
        /// Probability of flipping each hate label
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn config(opts: &Common) -> Result<RunConfig, CliError> {
    let mut overrides = Vec::new();
    if let Some(d) = &opts.data {
        overrides.push(format!("data={}", toml_str(&d.to_string_lossy())));
    }
    if let Some(t) = &opts.task {
        overrides.push(format!("task={}", toml_str(t)));
    }
    if let Some(s) = opts.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &opts.out {
        overrides.push(format!("out={}", toml_str(&o.to_string_lossy())));
    }
    overrides.extend(opts.set.iter().cloned());
    RunConfig::load(opts.config.as_deref(), &overrides)
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn print_results(results: &[hsbench::eval::MethodResult]) {
    println!("{:<16} {:>8} {:>9} {:>7} {:>7}", "method", "accuracy", "precision", "recall", "f1");
    for r in results {
        let m = &r.metrics;
        let pct = |x: f64| hsbench::eval::percent_1dp(x);
        println!(
            "{:<16} {:>8.1} {:>9.1} {:>7.1} {:>7.1}",
            r.method,
            pct(m.accuracy),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1)
        );
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, common) = match cli.command {
        Command::Eda { common } => (Cmd::Eda, common),
        Command::Bench { common } => (Cmd::Bench, common),
        Command::Train { common } => (Cmd::Train, common),
        Command::Evaluate { checkpoint, common } => (Cmd::Evaluate(checkpoint), common),
        Command::Synth { rows, output, noise, common } => {
            let opts = cli.common.merge(common);
            let n = pipeline::run_synth(rows, opts.seed.unwrap_or(42), noise, &output)?;
            println!("wrote {n} rows to {}", output.display());
            return Ok(());
        }
    };
    let cfg = config(&cli.common.merge(common))?;
    match command {
        Cmd::Eda => {
            let s = pipeline::run_eda(&cfg)?;
            let st = &s.stats;
            println!("rows {}", st.total_rows);
            println!("HS       0: {}  1: {}", st.hs_counts.0, st.hs_counts.1);
            println!("Abusive  0: {}  1: {}", st.abusive_counts.0, st.abusive_counts.1);
            println!("mean length {:.2} words", st.mean_length);
            println!("split ({}) train {} test {}", cfg.task.name(), s.train_rows, s.test_rows);
        }
        Cmd::Bench => {
            let s = pipeline::run_bench(&cfg)?;
            print_results(&s.results);
            println!("champion {}", s.champion);
        }
        Cmd::Train => {
            let s = pipeline::run_train(&cfg)?;
            print_results(std::slice::from_ref(&s.result));
            println!("checkpoint {}", s.checkpoint.display());
        }
        Cmd::Evaluate(checkpoint) => {
            let s = pipeline::run_evaluate(&cfg, &checkpoint)?;
            print_results(std::slice::from_ref(&s.result));
        }
    }
    println!("outputs in {}", cfg.out.display());
    Ok(())
}

enum Cmd {
    Eda,
    Bench,
    Train,
    Evaluate(PathBuf),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hsbench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
