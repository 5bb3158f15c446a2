use std::fmt::Display;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Input = 2,
    Contract = 3,
    Internal = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(msg: impl Display) -> Self {
        Failure {
            exit: Exit::Input,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn internal(msg: impl Display) -> Self {
        Failure {
            exit: Exit::Internal,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Tags a library error with where it came from and picks its exit code.
pub trait At<T> {
    fn at(self, what: impl Display) -> CliResult<T>;
}

impl<T, E: Into<remine_core::Error>> At<T> for Result<T, E> {
    fn at(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| {
            let e: remine_core::Error = e.into();
            let exit = if e.is_contract_violation() {
                Exit::Contract
            } else {
                Exit::Input
            };
            Failure {
                exit,
                error: anyhow::Error::new(e).context(what.to_string()),
            }
        })
    }
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("creating {}: {e}", dir.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes)
        .map_err(|e| Failure::input(format!("writing {}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::internal)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
