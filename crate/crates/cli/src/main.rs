use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fwspde_cli::config::{emit_config, load_config, CommandKind, ExperimentConfig};
use fwspde_cli::export::export_plotdata;
use fwspde_cli::run::{run, write_atomic, RunOptions};
use fwspde_cli::CliError;

/// Small-noise SPDE experiments: simulation, action minimization, LDP checks
/// and exit problems.
#[derive(Parser)]
#[command(name = "fwspde", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "FWSPDE_THREADS")]
    threads: Option<usize>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    Simulate(RunArgs),
    Skeleton(RunArgs),
    Action(RunArgs),
    Quasipotential(RunArgs),
    LdpLower(RunArgs),
    LdpUpper(RunArgs),
    Sweep(RunArgs),
    ExitScaling(RunArgs),
    ExitPlace(RunArgs),
    Verify(RunArgs),
    /// Runs whatever command the config names.
    Run(RunArgs),
    /// Converts a JSON report into tidy CSV.
    Export {
        /// ldp, exit-scaling, exit-place, sweep, quasipotential or verify.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        report: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints a minimal valid config for a command.
    ExampleConfig { command: String },
}

fn execute(cmd: Cmd) -> Result<i32, CliError> {
    let (expected, args) = match cmd {
        Cmd::Simulate(a) => (Some(CommandKind::Simulate), a),
        Cmd::Skeleton(a) => (Some(CommandKind::Skeleton), a),
        Cmd::Action(a) => (Some(CommandKind::Action), a),
        Cmd::Quasipotential(a) => (Some(CommandKind::Quasipotential), a),
        Cmd::LdpLower(a) => (Some(CommandKind::LdpLower), a),
        Cmd::LdpUpper(a) => (Some(CommandKind::LdpUpper), a),
        Cmd::Sweep(a) => (Some(CommandKind::Sweep), a),
        Cmd::ExitScaling(a) => (Some(CommandKind::ExitScaling), a),
        Cmd::ExitPlace(a) => (Some(CommandKind::ExitPlace), a),
        Cmd::Verify(a) => (Some(CommandKind::Verify), a),
        Cmd::Run(a) => (None, a),
        Cmd::Export { kind, report, out } => {
            let text = std::fs::read_to_string(&report).map_err(|e| CliError::io(&report, e))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
                line: e.line(),
                column: e.column(),
                msg: e.to_string(),
            })?;
            let csv = export_plotdata(&kind, &value)?;
            match out {
                Some(path) => {
                    let dir = match path.parent() {
                        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                        _ => PathBuf::from("."),
                    };
                    let name = path
                        .file_name()
                        .ok_or_else(|| CliError::io(&path, "not a file path"))?
                        .to_string_lossy()
                        .into_owned();
                    write_atomic(&dir, &name, &csv)?;
                }
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
            return Ok(0);
        }
        Cmd::ExampleConfig { command } => {
            let kind = CommandKind::parse(&command).ok_or_else(|| {
                let valid: Vec<&str> = CommandKind::ALL.iter().map(|c| c.name()).collect();
                CliError::schema("command", format!("unknown command {command:?}; valid commands: {}", valid.join(", ")))
            })?;
            print!("{}", emit_config(&ExperimentConfig::example(kind)));
            return Ok(0);
        }
    };
    let cfg = load_config(&args.config)?;
    if let Some(k) = expected {
        if k != cfg.command {
            return Err(CliError::schema(
                "command",
                format!("config is for {}, invoked as {}", cfg.command.name(), k.name()),
            ));
        }
    }
    let opts = RunOptions {
        seed: args.seed,
        threads: args.threads,
        out: args.out,
    };
    let outcome = run(&cfg, &opts)?;
    println!(
        "{}",
        serde_json::json!({
            "status": outcome.manifest.status,
            "out_dir": outcome.out_dir.display().to_string(),
            "files": outcome.manifest.files.iter().map(|f| &f.name).collect::<Vec<_>>(),
        })
    );
    if let Some(msg) = outcome.not_converged {
        let err = CliError::NotConverged(msg);
        eprintln!("{}", err.to_json());
        return Ok(err.exit_code());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
