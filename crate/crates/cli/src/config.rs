use std::path::{Path, PathBuf};

use remine_core::SearchMode;
use serde::{Deserialize, Serialize};

use crate::fail::{read_text, CliResult, Failure};

/// Values a run can take from a TOML file. Every field is optional and any
/// command-line flag overrides the file. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub gate: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub degradation: Option<PathBuf>,
    pub retraining: Option<PathBuf>,
    pub org_report: Option<PathBuf>,
    pub hsm_report: Option<PathBuf>,
    pub hard_samples: Option<PathBuf>,
    pub conf_floor: Option<f64>,
    pub theta: Option<u32>,
    pub theta_mode: Option<SearchMode>,
    pub search_lower: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Log filter used when `REMINE_LOG` is unset.
    pub log: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        toml::from_str(&read_text(path)?)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }
}

/// Flag value, else config value, else an input error naming the flag.
pub fn required<T: Clone>(flag: &Option<T>, file: &Option<T>, name: &str) -> CliResult<T> {
    flag.clone().or_else(|| file.clone()).ok_or_else(|| {
        Failure::input(format!(
            "missing --{name} (or `{}` in the config file)",
            name.replace('-', "_")
        ))
    })
}

pub fn optional<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}
