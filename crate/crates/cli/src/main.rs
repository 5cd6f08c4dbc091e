mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ifspref_core::store::ExportKind;
use ifspref_core::{AggregationMethod, AgreementMode, IfwaForm};

#[derive(Debug, Parser)]
#[command(name = "ifspref", version, about = "Intuitionistic fuzzy preference annotation toolkit")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "IFS_DATA_DIR", default_value = "ifs-data")]
    data: PathBuf,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Import tasks and annotations from JSONL files.
    Import {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Keep valid lines even when other lines fail validation.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Write a seeded synthetic corpus.
    Simulate {
        #[arg(long)]
        tasks: usize,
        #[arg(long)]
        annotators: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON simulator config with per-annotator parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gold_fraction: Option<f64>,
    },
    /// Aggregate every annotated task and store the results.
    Aggregate {
        #[arg(long, default_value = "dynamic")]
        method: AggregationMethod,
        #[command(flatten)]
        coefficients: Coefficients,
        #[arg(long, default_value = "standard")]
        ifwa_form: IfwaForm,
    },
    /// Dataset quality report.
    Quality {
        #[arg(long, default_value = "mean")]
        agreement_mode: AgreementMode,
        #[command(flatten)]
        score: Coefficients,
        #[command(flatten)]
        weights: WeightCoefficients,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one record kind as JSONL.
    Export {
        #[arg(long)]
        kind: ExportKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "dynamic")]
        method: AggregationMethod,
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, Args)]
struct Coefficients {
    #[arg(long, requires_all = ["beta", "gamma"])]
    alpha: Option<f64>,
    #[arg(long, requires_all = ["alpha", "gamma"])]
    beta: Option<f64>,
    #[arg(long, requires_all = ["alpha", "beta"])]
    gamma: Option<f64>,
}

impl Coefficients {
    fn triple(&self) -> Option<(f64, f64, f64)> {
        Some((self.alpha?, self.beta?, self.gamma?))
    }
}

/// Reliability coefficients used for the report's annotator weights.
#[derive(Debug, Clone, Copy, Args)]
struct WeightCoefficients {
    #[arg(long, requires_all = ["weight_beta", "weight_gamma"])]
    weight_alpha: Option<f64>,
    #[arg(long, requires_all = ["weight_alpha", "weight_gamma"])]
    weight_beta: Option<f64>,
    #[arg(long, requires_all = ["weight_alpha", "weight_beta"])]
    weight_gamma: Option<f64>,
}

impl WeightCoefficients {
    fn triple(&self) -> Option<(f64, f64, f64)> {
        Some((self.weight_alpha?, self.weight_beta?, self.weight_gamma?))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    match commands::run(cli) {
        Ok(out) => {
            let text = if json { out.json } else { out.human };
            if !text.is_empty() {
                println!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                println!("{}", e.to_json());
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
