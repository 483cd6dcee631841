mod args;
mod commands;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};
use crate::manifest::{now_ms, sha256_file, RunContext, RunManifest};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let raw: Vec<String> = std::env::args().skip(1).collect();
    match run(raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

fn parse(raw: &[String]) -> CliResult<Option<Cli>> {
    match Cli::try_parse_from(std::iter::once("ldas".to_string()).chain(raw.iter().cloned())) {
        Ok(cli) => Ok(Some(cli)),
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{e}");
                Ok(None)
            }
            _ => Err(CliError::Usage(e.to_string().trim().to_string())),
        },
    }
}

fn run(raw: Vec<String>) -> CliResult<()> {
    let Some(cli) = parse(&raw)? else {
        return Ok(());
    };
    match cli.command {
        Command::Rerun(r) => rerun(&r.manifest, r.out),
        command => {
            let cwd = std::env::current_dir().map_err(|e| CliError::io(Path::new("."), e))?;
            run_recorded(command, raw, cwd)
        }
    }
}

fn run_recorded(mut command: Command, args: Vec<String>, cwd: PathBuf) -> CliResult<()> {
    let started = now_ms();
    let mut ctx = RunContext::default();
    commands::execute(&command, &mut ctx)?;
    let out = command.out_mut().expect("every recorded command has an output directory").clone();
    let manifest = RunManifest {
        command: command.name().to_string(),
        args,
        cwd,
        config: ctx.config,
        seed: ctx.seed,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        warnings: ctx.warnings,
        notes: ctx.notes,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        git_revision: manifest::git_revision(),
    };
    manifest.write(&out)
}

/// Replays the recorded arguments from the recorded working directory after
/// checking that every input still hashes to the recorded value.
fn rerun(manifest_path: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let caller_cwd = std::env::current_dir().map_err(|e| CliError::io(Path::new("."), e))?;
    let out = out.map(|o| if o.is_absolute() { o } else { caller_cwd.join(o) });
    let manifest = RunManifest::read(manifest_path)?;
    std::env::set_current_dir(&manifest.cwd).map_err(|e| CliError::io(&manifest.cwd, e))?;
    for (path, hash) in &manifest.inputs {
        if sha256_file(Path::new(path))? != *hash {
            return Err(CliError::InputChanged { path: path.clone() });
        }
    }
    let Some(cli) = parse(&manifest.args)? else {
        return Err(CliError::Usage("manifest does not record a command".into()));
    };
    let mut command = cli.command;
    if matches!(command, Command::Rerun(_)) {
        return Err(CliError::Usage("manifest records a rerun".into()));
    }
    let mut args = manifest.args.clone();
    if let Some(o) = out {
        let old = command.out_mut().expect("recorded command").clone();
        *command.out_mut().expect("recorded command") = o.clone();
        replace_out_arg(&mut args, &old, &o);
    }
    run_recorded(command, args, manifest.cwd)
}

fn replace_out_arg(args: &mut [String], old: &Path, new: &Path) {
    let old = old.display().to_string();
    let new = new.display().to_string();
    for i in 0..args.len() {
        if args[i] == "--out" && i + 1 < args.len() && args[i + 1] == old {
            args[i + 1] = new.clone();
        } else if args[i] == format!("--out={old}") {
            args[i] = format!("--out={new}");
        }
    }
}
