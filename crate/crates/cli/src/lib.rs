//! `featviz` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
//! failure. Every output file gets a `<file>.json` manifest (reconstruction
//! writes one `manifest.json` per output directory); `featviz replay` re-runs a
//! manifest and reproduces its outputs byte for byte.

pub mod args;
mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use featviz::tensor::{read_fvt, FVT_MAGIC};
use featviz::viz::read_image;
use featviz::{load_network, Network, Tensor};
use serde::de::DeserializeOwned;

use args::{Cli, Command, ReplayArgs};
use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] featviz::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn stdout(source: std::io::Error) -> Self {
        CliError::io(Path::new("<stdout>"), source)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Engine(e) if e.is_numerical() => 3,
            CliError::Engine(featviz::Error::Config(_) | featviz::Error::Target(_)) => 1,
            CliError::Engine(_) | CliError::Io { .. } | CliError::Manifest { .. } => 2,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn load_model(path: &Path) -> Result<Network, CliError> {
    Ok(load_network(&read_file(path)?)?)
}

/// Reads an `.fvt` tensor or a PPM/PGM image, by content.
pub(crate) fn load_input(path: &Path) -> Result<Tensor, CliError> {
    let bytes = read_file(path)?;
    if bytes.starts_with(FVT_MAGIC) {
        Ok(read_fvt(&bytes)?)
    } else {
        Ok(read_image(&bytes)?)
    }
}

fn parse_args<T: DeserializeOwned>(manifest: &Manifest, path: &Path) -> Result<T, CliError> {
    serde_json::from_value(manifest.args.clone()).map_err(|e| CliError::Manifest {
        path: path.to_path_buf(),
        message: format!("bad {} arguments: {e}", manifest.subcommand),
    })
}

fn redirect(path: &mut PathBuf, dir: &Path) {
    if let Some(name) = path.file_name() {
        *path = dir.join(name);
    }
}

fn replay(args: ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = Manifest::read(&args.manifest)?;
    let dir = args.out_dir.as_deref().map(absolute).transpose()?;
    let command = match manifest.subcommand.as_str() {
        "attribute" => {
            let mut a: args::AttributeArgs = parse_args(&manifest, &args.manifest)?;
            if let Some(dir) = &dir {
                redirect(&mut a.out, dir);
                if let Some(p) = a.raw.as_mut() {
                    redirect(p, dir);
                }
            }
            Command::Attribute(a)
        }
        "occlude" => {
            let mut a: args::OccludeArgs = parse_args(&manifest, &args.manifest)?;
            if let Some(dir) = &dir {
                redirect(&mut a.out, dir);
                if let Some(p) = a.raw.as_mut() {
                    redirect(p, dir);
                }
            }
            Command::Occlude(a)
        }
        "cam" => {
            let mut a: args::CamArgs = parse_args(&manifest, &args.manifest)?;
            if let Some(dir) = &dir {
                redirect(&mut a.out, dir);
                if let Some(p) = a.raw.as_mut() {
                    redirect(p, dir);
                }
            }
            Command::Cam(a)
        }
        "reconstruct" => {
            let mut a: args::ReconstructArgs = parse_args(&manifest, &args.manifest)?;
            if let Some(dir) = &dir {
                a.out_dir = dir.clone();
            }
            Command::Reconstruct(a)
        }
        other => {
            return Err(CliError::Manifest {
                path: args.manifest.clone(),
                message: format!("cannot replay subcommand {other:?}"),
            })
        }
    };
    execute(command, out)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Forward(a) => commands::forward_cmd(a, out),
        Command::Attribute(a) => commands::attribute_cmd(a),
        Command::Occlude(a) => commands::occlude_cmd(a),
        Command::Cam(a) => commands::cam_cmd(a),
        Command::Reconstruct(a) => commands::reconstruct_cmd(a),
        Command::Inspect(a) => commands::inspect_cmd(a, out),
        Command::Replay(a) => replay(a, out),
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let stream: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = stream.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "featviz: {e}");
            e.exit_code()
        }
    }
}

/// Runs the CLI on the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(
        argv,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}
