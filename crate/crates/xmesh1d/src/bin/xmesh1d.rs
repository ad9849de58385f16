//! Command-line front end: `run`, `five-elem`, and `compare`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xmesh1d::config::{parse_config, RunConfig};
use xmesh1d::output;

#[derive(Parser)]
#[command(name = "xmesh1d", about = "1D quasi-static fracture with fixed or optimized meshes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a bar simulation from a key=value config file.
    Run {
        config: PathBuf,
        /// Output directory (the XMESH1D_OUT env var takes precedence).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also emit SVG line plots.
        #[arg(long)]
        svg: bool,
    },
    /// Run the five-element non-convexity study.
    FiveElem { config: PathBuf },
    /// Compare the steps.csv of two completed runs.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Directory for compare.csv and compare_summary.txt (default: ".").
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run() -> xmesh1d::Result<u8> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, out, svg } => {
            let mut cfg = load_config(&config)?;
            cfg.emit_svg = cfg.emit_svg || svg;
            let code = output::execute(&cfg, out.as_deref())?;
            Ok(code as u8)
        }
        Cmd::FiveElem { config } => {
            let mut cfg = load_config(&config)?;
            cfg.five_elem = true;
            let code = output::execute(&cfg, None)?;
            Ok(code as u8)
        }
        Cmd::Compare { dir_a, dir_b, out } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
            let report = output::compare(&dir_a, &dir_b, &out_dir)?;
            print!("{}", report.summary());
            Ok(0)
        }
    }
}

fn load_config(path: &PathBuf) -> xmesh1d::Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
