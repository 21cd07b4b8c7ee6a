//! Command-line driver: argument handling and one module per command.

pub mod args;
mod commands;
mod util;

use std::ffi::OsString;

use anyhow::{Context, Result};
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

/// Parse `argv` (including the program name), run the command and return once
/// its artifacts are fully written.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv = expand_config(argv.into_iter().map(Into::into).collect())?;
    let cli = parse(argv)?;
    init_logging(cli.verbose);
    log::info!("seed={} command={:?}", cli.seed, cli.command);
    match &cli.command {
        Command::GenData(a) => commands::data::gen_data(a, cli.seed),
        Command::Train(a) => commands::train::train(a, cli.seed),
        Command::Decode(a) => commands::decode::decode(a, cli.seed),
        Command::Eval(a) => commands::eval::eval(a),
        Command::LmTrain(a) => commands::data::lm_train(a),
        Command::ExportDag(a) => commands::inspect::export_dag(a),
        Command::Stats(a) => commands::inspect::stats(a),
    }
}

/// Later occurrences of a flag replace earlier ones, which is what lets
/// command-line flags override config-file entries.
fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|c| c.args_override_self(true))
}

fn parse(argv: Vec<OsString>) -> Result<Cli> {
    let matches = command().try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&matches)?)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Splice the entries of `--config FILE` in as flags right after the
/// subcommand, so that flags given on the command line override them.
/// `key=true` becomes a bare switch and `key=false` is dropped.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected key=value", n + 1))?;
        let flag = format!("--{}", k.trim().replace('_', "-"));
        match v.trim() {
            "true" => extra.push(flag.into()),
            "false" => {}
            v => {
                extra.push(flag.into());
                extra.push(v.into());
            }
        }
    }
    let names: Vec<String> = command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let at = argv
        .iter()
        .position(|a| names.iter().any(|n| a.to_string_lossy() == n.as_str()))
        .map_or(argv.len(), |i| i + 1);
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
