//! `calprobe`: runs calibration probes from a TOML configuration.
//!
//! Every stage subcommand reads the config named by `--config`; flags given
//! on the command line override the matching config fields. Errors go to
//! stderr prefixed with the module that raised them, exit status 1.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calprobe::confidence::Estimator;
use calprobe::probe_data::{convert_bear, save_dataset};
use calprobe::run::{write_simulation, RunConfig, RunError, Runner};
use calprobe::simulate::{simulate, Profile, SimulatorSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "calprobe",
    version,
    about = "Calibration probing for closed-answer-set knowledge probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order: validate, render, score, estimate, report, sweep.
    Run(StageArgs),
    /// Checks the config and dataset; prints dataset statistics. Writes nothing.
    Validate(StageArgs),
    /// Converts a BEAR release directory into the native dataset format.
    ConvertBear {
        /// Directory holding the BEAR release.
        input: PathBuf,
        /// Native dataset directory to create.
        output: PathBuf,
    },
    /// Renders candidate statements to statements.jsonl.
    Render(StageArgs),
    /// Scores rendered statements with the configured backend.
    Score(StageArgs),
    /// Turns scores into per-estimator confidence outcomes.
    Estimate(StageArgs),
    /// Computes calibration reports from outcomes.
    Report(StageArgs),
    /// Runs the option-count sweep over 1:1 relations.
    Sweep(StageArgs),
    /// Writes the injected template variants as JSON lines.
    Inject {
        #[command(flatten)]
        stage: StageArgs,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic dataset, score file and run config.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration file.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated estimator names, e.g. `base,consistency_vote`.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long)]
    bins: Option<usize>,
    /// Count rejected instances as zero-error terms in Brier.
    #[arg(long)]
    rejected_as_zero_error: bool,
    /// Also report fixed-width ECE.
    #[arg(long)]
    ece: bool,
}

impl StageArgs {
    /// Loads the config and applies command-line overrides. Paths given on
    /// the command line are taken relative to the working directory.
    fn runner(&self) -> Result<Runner, RunError> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(d) = &self.dataset {
            c.dataset = d.clone();
        }
        if let Some(o) = &self.output_dir {
            c.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(e) = &self.estimators {
            c.estimators = e.clone();
        }
        if let Some(b) = self.bins {
            c.metrics.bins = b;
        }
        c.metrics.rejected_as_zero_error |= self.rejected_as_zero_error;
        c.metrics.ece |= self.ece;
        Runner::new(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileKind {
    Calibrated,
    Overconfident,
    Underconfident,
    TemplateNoisy,
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "calibrated")]
    profile: ProfileKind,
    /// Confidence offset for over- and underconfident profiles.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Per-template flip probability for the template-noisy profile.
    #[arg(long, default_value_t = 0.1)]
    p_flip: f64,
    #[arg(long, short = 'n', default_value_t = 10_000)]
    instances: usize,
    #[arg(long, short = 'k', default_value_t = 4)]
    options: usize,
    #[arg(long, default_value_t = 5)]
    templates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_json(value: &impl serde::Serialize) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    writeln!(std::io::stdout(), "{text}").map_err(|source| RunError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn write_lines(path: Option<&Path>, lines: &[String]) -> Result<(), RunError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| RunError::Io { path: p, source }
    };
    let mut text = lines.join("\n");
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(io(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io(Path::new("<stdout>"))),
    }
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run(a) => print_json(&a.runner()?.run()?),
        Command::Validate(a) => print_json(&a.runner()?.validate()?),
        Command::ConvertBear { input, output } => {
            let ds = convert_bear(&input)?;
            save_dataset(&ds, &output)?;
            print_json(&ds.stats())
        }
        Command::Render(a) => {
            let n = a.runner()?.render()?;
            eprintln!("rendered {n} statements");
            Ok(())
        }
        Command::Score(a) => {
            let n = a.runner()?.score()?;
            eprintln!("wrote {n} score records");
            Ok(())
        }
        Command::Estimate(a) => {
            let n = a.runner()?.estimate()?;
            eprintln!("wrote {n} outcomes");
            Ok(())
        }
        Command::Report(a) => {
            let n = a.runner()?.report()?;
            eprintln!("wrote {n} reports");
            Ok(())
        }
        Command::Sweep(a) => match a.runner()?.sweep()? {
            Some(rows) => print_json(&rows),
            None => Err(RunError::Config("config has no [sweep] section".into())),
        },
        Command::Inject { stage, out } => {
            let variants = stage.runner()?.injected_variants()?;
            let lines: Vec<String> = variants
                .iter()
                .map(|v| serde_json::to_string(v).expect("variant serializes"))
                .collect();
            write_lines(out.as_deref(), &lines)
        }
        Command::Simulate(a) => {
            let profile = match a.profile {
                ProfileKind::Calibrated => Profile::Calibrated,
                ProfileKind::Overconfident => Profile::Overconfident { delta: a.delta },
                ProfileKind::Underconfident => Profile::Underconfident { delta: a.delta },
                ProfileKind::TemplateNoisy => Profile::TemplateNoisy { p_flip: a.p_flip },
            };
            let sim = simulate(&SimulatorSpec {
                n_instances: a.instances,
                k: a.options,
                templates: a.templates,
                profile,
                seed: a.seed,
            })?;
            let cfg = write_simulation(&sim, &a.out, a.seed)?;
            eprintln!("wrote {}", cfg.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            ExitCode::FAILURE
        }
    }
}
