use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use orpd::pipeline::{emit_report, run_pipeline, ReportFormat, RunConfig};
use orpd::relaxations::{ModelKind, Objective};

#[derive(Parser)]
#[command(name = "orpd", version, about = "Conic relaxations and round-off for optimal reactive power dispatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the relaxation and round-off pipeline on one case.
    Solve {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::All)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Cost)]
        objective: ObjectiveArg,
        /// Split the SDR matrix constraint over the cliques of a chordal extension.
        #[arg(long)]
        chordal: bool,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Seconds per cell.
        #[arg(long, default_value_t = 600.0)]
        time_limit: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
    /// Run a batch described by a YAML or JSON configuration.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output path of the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the format of the configuration.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Sdr1,
    Tcr1,
    Sdr2,
    Tcr2,
    All,
}

impl KindArg {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            KindArg::Sdr1 => vec![ModelKind::Sdr1],
            KindArg::Tcr1 => vec![ModelKind::Tcr1],
            KindArg::Sdr2 => vec![ModelKind::Sdr2],
            KindArg::Tcr2 => vec![ModelKind::Tcr2],
            KindArg::All => ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Cost,
    Loss,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Md,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Md => ReportFormat::Md,
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut config: RunConfig = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_yaml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    // case paths are relative to the configuration file
    let base = path.parent().unwrap_or(Path::new("."));
    for case in &mut config.cases {
        if case.is_relative() && !case.exists() {
            *case = base.join(&*case);
        }
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let (config, format, out) = match cli.command {
        Command::Solve { case, kind, objective, chordal, tol, time_limit, out, format } => {
            let objective = match objective {
                ObjectiveArg::Cost => Objective::Cost,
                ObjectiveArg::Loss => Objective::Loss,
            };
            let mut config = RunConfig::new(vec![case], kind.kinds(), vec![objective]);
            config.chordal = chordal;
            config.tolerance = tol;
            config.time_limit = time_limit;
            (config, ReportFormat::from(format), out)
        }
        Command::Bench { config, out, format } => {
            let config = load_config(&config)?;
            let format = format.map(ReportFormat::from).or(config.format).unwrap_or(ReportFormat::Json);
            let out = out.or_else(|| config.output.clone());
            (config, format, out)
        }
    };
    let report = run_pipeline(&config)?;
    for c in report.cells.iter().filter(|c| !c.completed) {
        log::warn!("{} {:?} {}: {}", c.case, c.objective, c.kind.name(), c.failure.as_deref().unwrap_or("incomplete"));
    }
    emit_report(&report, format, out.as_deref())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
