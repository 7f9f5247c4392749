use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use gradflow::config::{build_config, execute, parse_overrides, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// One flow from generated data
    RunFlow,
    /// Ensemble on the configured grid and kernel
    Verify,
    /// Heat-kernel certificate of the configured operator
    KernelCheck,
    /// Ensemble across grid sizes and exponents
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::RunFlow => Command::RunFlow,
            Cmd::Verify => Command::Verify,
            Cmd::KernelCheck => Command::KernelCheck,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

/// Discrete gradient flows, vertical maximal functions and
/// energy-contraction checks.
///
/// Any configuration key can be overridden as `--section-key value`
/// (for example `--grid-n 64`, `--time-t-max 2`); a bare `--key` works when
/// the key is unique across sections (`--p 3`). Precedence is
/// defaults < preset < config file < flags.
#[derive(Parser, Debug)]
#[command(name = "gradflow", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML configuration file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in preset applied under the file and flags
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Print the effective configuration as TOML and exit
    #[arg(long)]
    print_config: bool,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    overrides: Vec<String>,
}

impl Cli {
    /// Once the first override starts, clap hands every later argument to
    /// `overrides`; pull the named options back out of it.
    fn reclaim_options(&mut self) -> Result<(), String> {
        let mut rest = Vec::new();
        let mut it = std::mem::take(&mut self.overrides).into_iter();
        while let Some(a) = it.next() {
            let (name, inline) = match a.split_once('=') {
                Some((n, v)) => (n.to_string(), Some(v.to_string())),
                None => (a.clone(), None),
            };
            let mut value = |name: &str| inline.clone().or_else(|| it.next()).ok_or(format!("{name} needs a value"));
            match name.as_str() {
                "--config" => self.config = Some(PathBuf::from(value("--config")?)),
                "--preset" => self.preset = Some(value("--preset")?),
                "--print-config" if inline.is_none() => self.print_config = true,
                _ => rest.push(a),
            }
        }
        self.overrides = rest;
        Ok(())
    }
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Err(e) = cli.reclaim_options() {
        eprintln!("gradflow: {e}");
        return ExitCode::from(2);
    }
    let cfg = parse_overrides(&cli.overrides)
        .and_then(|o| build_config(Some(cli.command.into()), cli.config.as_deref(), cli.preset.as_deref(), &o));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gradflow: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        return match cfg.to_toml() {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("gradflow: {e}");
                ExitCode::from(2)
            }
        };
    }
    ExitCode::from(execute(&cfg) as u8)
}
