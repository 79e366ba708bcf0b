//! `mgaopt`: command-line front end for the trajectory design pipeline.

mod commands;
mod error;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mgaopt::bodies::BodyCatalog;

use crate::error::CliError;
use crate::output::{sha256_hex, Format, Manifest, Writer};

#[derive(Debug, Parser)]
#[command(name = "mgaopt", version, about = "Multi-gravity-assist trajectory design toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Body catalog (TOML). Defaults to the built-in catalog.
    #[arg(long, global = true, env = "MGA_CATALOG")]
    pub catalog: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the bodies of the catalog.
    Bodies,
    /// Integer phasing search for a planetary swing-by sequence.
    PhaseSearch(commands::PhaseSearchArgs),
    /// Minimum-time resonant tour of a single moon.
    SotSearch(commands::SotSearchArgs),
    /// Optimise impulsive trajectories seeded by the phasing search.
    ImpOpt(commands::ImpOptArgs),
    /// Array temperature, power and thrust ceiling against Sun distance.
    PowerCurve(commands::PowerCurveArgs),
    /// Post-flyby energy and period over incoming angle and speed.
    CaptureMap(commands::CaptureMapArgs),
    /// Low-thrust transfer with finite elements in time.
    DfetSolve(commands::DfetSolveArgs),
    /// Phasing search, impulsive optimisation, capture constraint and a
    /// low-thrust leg in one run.
    Pipeline(commands::PipelineArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Bodies => "bodies",
            Command::PhaseSearch(_) => "phase-search",
            Command::SotSearch(_) => "sot-search",
            Command::ImpOpt(_) => "imp-opt",
            Command::PowerCurve(_) => "power-curve",
            Command::CaptureMap(_) => "capture-map",
            Command::DfetSolve(_) => "dfet-solve",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

/// Everything a subcommand needs.
pub struct Context {
    pub catalog: BodyCatalog,
    pub writer: Writer,
    pub timings: BTreeMap<String, f64>,
    /// Configuration texts read by the subcommand, hashed into the manifest.
    pub inputs: Vec<String>,
}

impl Context {
    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn read_config(&mut self, path: &std::path::Path) -> Result<String, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(text.clone());
        Ok(text)
    }
}

fn load_catalog(path: Option<&PathBuf>) -> Result<(BodyCatalog, String, String), CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read catalog {}: {e}", p.display())))?;
            let cat = BodyCatalog::from_toml_str(&text)?;
            Ok((cat, text, p.display().to_string()))
        }
        None => {
            let cat = BodyCatalog::default_catalog();
            let text = cat.to_toml_string()?;
            Ok((cat, text, "built-in".into()))
        }
    }
}

fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    let (catalog, catalog_text, catalog_name) = load_catalog(cli.global.catalog.as_ref())?;
    let writer = Writer::new(&cli.global.out, cli.global.format)?;
    let mut ctx = Context {
        catalog,
        writer,
        timings: BTreeMap::new(),
        inputs: Vec::new(),
    };
    let start = Instant::now();
    let result = match &cli.command {
        Command::Bodies => commands::bodies(&mut ctx),
        Command::PhaseSearch(a) => commands::phase_search(&mut ctx, a),
        Command::SotSearch(a) => commands::sot_search(&mut ctx, a),
        Command::ImpOpt(a) => commands::imp_opt(&mut ctx, a),
        Command::PowerCurve(a) => commands::power_curve(&mut ctx, a),
        Command::CaptureMap(a) => commands::capture_map(&mut ctx, a),
        Command::DfetSolve(a) => commands::dfet_solve(&mut ctx, a),
        Command::Pipeline(a) => commands::pipeline(&mut ctx, a),
    };
    ctx.timings.insert("total".into(), start.elapsed().as_secs_f64() * 1e3);

    let mut hashed = format!("{:?}\0{:?}\0", cli.command, cli.global.format);
    hashed.push_str(&catalog_text);
    for text in &ctx.inputs {
        hashed.push('\0');
        hashed.push_str(text);
    }
    let (status, exit_code) = match &result {
        Ok(()) => ("ok".to_string(), 0),
        Err(e) => (e.to_string(), e.exit_code()),
    };
    let manifest = Manifest {
        command: cli.command.name().into(),
        arguments: argv[1..].to_vec(),
        cli_version: env!("CARGO_PKG_VERSION").into(),
        library_version: mgaopt::VERSION.into(),
        catalog: catalog_name,
        inputs_sha256: sha256_hex(hashed.as_bytes()),
        status,
        exit_code,
        outputs: ctx.writer.files().to_vec(),
        timings_ms: ctx.timings,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    let path = ctx.writer.dir().join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    result
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgaopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
