use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use regime_sentinel::aggregate::PatternMemory;
use regime_sentinel::config::{ConfigError, PipelineConfig};
use regime_sentinel::ingest::{parse_telemetry, write_csv, Format, GapPolicy, IngestError};
use regime_sentinel::pipeline::{run_pipeline, PipelineError, PipelineOutput};
use regime_sentinel::segmentation::{arc_curve, corrected_arc_curve_with_edge, SegmentationError};
use regime_sentinel::sim::{generate_fleet, inject, run_scenarios, standard_catalog, FleetSpec, InjectionScenario, SimError};
use regime_sentinel::timeseries::{matrix_profile_with_exclusion, Series, TimeseriesError};

const SYNOPSIS: &str = "\
usage: regime-sentinel <command> [options]

commands:
  run       --input FILE [--format csv|jsonl] [--out-dir DIR] [--seed N] [config flags]
  simulate  [--catalog FILE] [--seed N] [--n-series N] [--length N] [config flags]
  profile   --input FILE --series ID [--format csv|jsonl] [config flags]
  graph export --input FILE [--format csv|jsonl] [--out FILE] [config flags]
  generate  [--seed N] [--n-series N] [--length N] [--catalog FILE --scenario ID] [--out FILE]
  catalog   [--out FILE]

config flags mirror the config file keys (--m, --cac-threshold, --k-mad, ...);
--config FILE loads a JSON config first and flags given on the command line win.
run 'regime-sentinel <command> --help' for details.
";

#[derive(Parser)]
#[command(name = "regime-sentinel", version, about = "Fleet-wide regime-change event detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest telemetry, run the pipeline, print the event report.
    Run(RunArgs),
    /// Run a scenario catalog against synthetic fleets.
    Simulate(SimulateArgs),
    /// Dump the matrix profile and corrected arc curve of one series.
    Profile(ProfileArgs),
    /// Knowledge-graph operations.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Write a synthetic fleet as CSV, optionally with one scenario injected.
    Generate(GenerateArgs),
    /// Print the built-in 30-scenario catalog.
    Catalog {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Run the pipeline and write the knowledge graph as JSON lines.
    Export {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Telemetry file with series_id, timestamp and value fields.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Also write report.jsonl, histogram.tsv and graph.jsonl here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Recorded in the report.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON array of scenarios; the built-in catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    n_series: usize,
    #[arg(long, default_value_t = 300)]
    length: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    series: String,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    n_series: usize,
    #[arg(long, default_value_t = 300)]
    length: usize,
    /// Catalog to take the scenario from; the built-in one when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Scenario id to inject.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    exclusion_radius: Option<usize>,
    #[arg(long)]
    edge_exclusion: Option<usize>,
    #[arg(long)]
    cac_threshold: Option<f64>,
    #[arg(long)]
    regime_exclusion: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    bin_width: Option<u64>,
    #[arg(long)]
    k_mad: Option<f64>,
    #[arg(long)]
    min_fraction: Option<f64>,
    #[arg(long)]
    baseline_window: Option<usize>,
    #[arg(long)]
    spike_window: Option<usize>,
    #[arg(long)]
    release_fraction: Option<f64>,
    #[arg(long)]
    recovery_horizon: Option<i64>,
    #[arg(long)]
    no_interest_threshold: Option<u64>,
    #[arg(long)]
    sampling_interval: Option<f64>,
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                PipelineConfig::from_json(&text)?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = Some(v); } )* };
        }
        set!(
            m,
            cac_threshold,
            bin_width,
            k_mad,
            min_fraction,
            baseline_window,
            spike_window,
            release_fraction,
            recovery_horizon,
            no_interest_threshold,
            sampling_interval,
            max_gap
        );
        set_opt!(exclusion_radius, edge_exclusion, regime_exclusion, horizon, hop, threads);
        c.validate()?;
        Ok(c)
    }
}

fn load_fleet(input: &InputArgs, config: &PipelineConfig) -> Result<Vec<Series>> {
    let format: Format = input.format.parse()?;
    let policy = GapPolicy {
        max_interpolated: config.max_gap,
        default_interval: config.sampling_interval,
    };
    Ok(parse_telemetry(&input.input, format, &policy)?)
}

fn load_catalog(path: Option<&Path>) -> Result<Vec<InjectionScenario>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", p.display())).into())
        }
        None => Ok(standard_catalog()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn pipeline(input: &InputArgs, config: &ConfigArgs, seed: Option<u64>) -> Result<PipelineOutput> {
    let config = config.resolve()?;
    let fleet = load_fleet(input, &config)?;
    let mut memory = PatternMemory::new(config.no_interest_threshold);
    Ok(run_pipeline(&config, &fleet, &mut memory, seed)?)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let out = pipeline(&args.input, &args.config, args.seed)?;
    let report = out.report.to_jsonl();
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.jsonl"), &report)?;
        fs::write(dir.join(&out.report.histogram_ref), out.histogram.to_tsv())?;
        fs::write(dir.join(&out.report.graph_ref), out.graph.export_jsonl())?;
    }
    emit(None, &report)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let spec = FleetSpec {
        n_series: args.n_series,
        length: args.length,
        sampling_interval: config.sampling_interval,
        ..FleetSpec::desk_scale(args.seed)
    };
    let report = run_scenarios(&catalog, &spec, &config)?;
    emit(None, &report.to_jsonl())
}

fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let fleet = load_fleet(&args.input, &config)?;
    let Some(series) = fleet.iter().find(|s| s.series_id.as_str() == args.series) else {
        bail!(IngestError::MalformedRow {
            line: 0,
            reason: format!("series {} not found in input", args.series),
        });
    };
    let params = config.segmentation();
    let profile = matrix_profile_with_exclusion(series, params.m, params.exclusion_radius)?;
    let arcs = arc_curve(&profile)?;
    let cac = corrected_arc_curve_with_edge(&arcs, params.edge_exclusion)?;
    let mut text = String::from("# schema_version: 1\nposition\ttimestamp\tdistance\tneighbor\tcrossings\tcac\n");
    for i in 0..profile.len() {
        text.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\t{}\n",
            series.timestamp_at(i),
            profile.distances[i],
            profile.indices[i],
            arcs.raw_crossings[i],
            cac.values[i]
        ));
    }
    emit(None, &text)
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let spec = FleetSpec {
        n_series: args.n_series,
        length: args.length,
        ..FleetSpec::desk_scale(args.seed)
    };
    let mut fleet = generate_fleet(&spec)?;
    if let Some(id) = &args.scenario {
        let catalog = load_catalog(args.catalog.as_deref())?;
        let Some(sc) = catalog.iter().find(|s| &s.scenario_id == id || &s.event_kind == id) else {
            bail!(ConfigError::Parse(format!("no scenario {id} in catalog")));
        };
        fleet = inject(&fleet, sc)?;
    }
    let mut buf = Vec::new();
    write_csv(&fleet, &mut buf)?;
    emit(args.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Profile(a) => cmd_profile(&a),
        Command::Graph {
            command: GraphCommand::Export { input, out, config },
        } => {
            let run = pipeline(&input, &config, None)?;
            emit(out.as_deref(), &run.graph.export_jsonl())
        }
        Command::Generate(a) => cmd_generate(&a),
        Command::Catalog { out } => {
            let json = serde_json::to_string_pretty(&standard_catalog())?;
            emit(out.as_deref(), &(json + "\n"))
        }
    }
}

/// A missing or unreadable input is the caller's mistake.
fn io_code(e: &std::io::Error) -> u8 {
    use std::io::ErrorKind;
    match e.kind() {
        ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::InvalidData => 1,
        _ => 2,
    }
}

/// 1 for bad input or configuration, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<IngestError>() {
            return match e {
                IngestError::Io(io) => io_code(io),
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return io_code(io);
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return if matches!(e, SimError::Pipeline(_)) { 2 } else { 1 };
        }
        if cause.is::<ConfigError>() || cause.is::<SegmentationError>() || cause.is::<TimeseriesError>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or_default();
            eprintln!("{first}\n\n{SYNOPSIS}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
