use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsurrogate_sim::experiment::{ablate, run_experiment, sweep, variant_name, RunReport};
use fedsurrogate_sim::report::{emit_report, emit_summary, Format};
use fedsurrogate_sim::{ExperimentConfig, SimError, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "fedsurrogate", version, about = "Federated backdoor-defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run one experiment per value of a configuration field.
    Sweep {
        /// Field to vary: a dotted path (`filter.zeta`) or alias (`zeta`, `mcr`, `n_clients`, ...).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the four pipeline variants with the same seed.
    Ablate(Common),
    /// Print the resolved configuration as TOML and exit.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any field, e.g. `--set filter.zeta=0.3`. Applied after the file and flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    n_clients: Option<usize>,
    #[arg(long)]
    mcr: Option<f64>,
    #[arg(long)]
    pdr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// none, cba, dba, neurotoxin, csa or cla.
    #[arg(long)]
    attack: Option<String>,
    /// fedsurrogate or fedavg.
    #[arg(long)]
    defense: Option<String>,
    #[arg(long)]
    zeta: Option<f64>,
    /// cosine or euclidean.
    #[arg(long)]
    donor_metric: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
    out_dir: PathBuf,
    /// File name stem for the outputs.
    #[arg(long, default_value = "run")]
    name: String,
    /// Report formats to write.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
    /// Client-training threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, SimError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| SimError::Io { path: path.clone(), source })?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let flags: [(&str, Option<String>); 10] = [
            ("n_clients", self.n_clients.map(|v| v.to_string())),
            ("mcr", self.mcr.map(|v| v.to_string())),
            ("pdr", self.pdr.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("rounds", self.rounds.map(|v| v.to_string())),
            ("attack.kind", self.attack.clone()),
            ("defense", self.defense.clone()),
            ("filter.zeta", self.zeta.map(|v| v.to_string())),
            ("donor_metric", self.donor_metric.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| SimError::InvalidValue { name: item.clone(), value: String::new() })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn write(&self, report: &RunReport, stem: &str) -> Result<(), SimError> {
        for format in &self.format {
            let path = self.out_dir.join(format!("{stem}.{}", format.extension()));
            emit_report(report, &path, *format)?;
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn print_line(report: &RunReport) {
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:<24} mta={:.4} asr={:.4} tpr={} fpr={} mcc={} ({:.1}s)",
        report.label.as_deref().unwrap_or("run"),
        report.final_mta(),
        report.final_asr(),
        fmt(report.tpr),
        fmt(report.fpr),
        fmt(report.mcc),
        report.wall_clock_secs
    );
}

fn warn(cfg: &ExperimentConfig) {
    if let Some(w) = cfg.honest_majority_warning() {
        eprintln!("warning: {w}");
    }
}

fn execute(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Config(common) => {
            print!("{}", common.resolve()?.to_toml()?);
        }
        Command::Run(common) => {
            let cfg = common.resolve()?;
            warn(&cfg);
            let report = run_experiment(&cfg, common.threads)?;
            print_line(&report);
            common.write(&report, &common.name)?;
        }
        Command::Sweep { param, values, common } => {
            let cfg = common.resolve()?;
            let reports = sweep(&cfg, &param, &values, common.threads)?;
            for (report, value) in reports.iter().zip(&values) {
                warn(&report.config);
                print_line(report);
                common.write(report, &format!("{}_{}_{}", common.name, sanitize(&param), sanitize(value)))?;
            }
            write_summary(&common.out_dir, &common.name, &reports)?;
        }
        Command::Ablate(common) => {
            let cfg = common.resolve()?;
            warn(&cfg);
            let reports = ablate(&cfg, common.threads)?;
            for report in &reports {
                print_line(report);
                let stem = format!("{}_{}", common.name, variant_name(report.config.variant));
                common.write(report, &stem)?;
            }
            write_summary(&common.out_dir, &common.name, &reports)?;
        }
    }
    Ok(())
}

fn write_summary(dir: &Path, name: &str, reports: &[RunReport]) -> Result<(), SimError> {
    let path = dir.join(format!("{name}_summary.csv"));
    emit_summary(reports, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::Config(_) | SimError::UnknownParameter(_) | SimError::InvalidValue { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
