//! Configuration, presets and the entry points behind the command line.

pub mod config;
pub mod micro;
pub mod plan;
pub mod presets;

use std::path::{Path, PathBuf};

pub use config::{echo_config, parse_config, ExperimentConfig, PlannerKind};
pub use micro::{MicroConfig, MicroRow, MicroStudy};
pub use plan::{cmd_plan, ProfileRow};
pub use presets::{preset, PRESET_NAMES};

use crate::error::{Error, Result};
use crate::sim::{self, ExperimentLog};

/// Environment variable that overrides every output directory.
pub const OUTPUT_DIR_ENV: &str = "LEGEND_OUTPUT_DIR";

/// Output directory: the override if given, else `fallback`.
pub fn output_dir(override_dir: Option<&Path>, fallback: &Path) -> PathBuf {
    override_dir.map_or_else(|| fallback.to_path_buf(), Path::to_path_buf)
}

/// Loads a config file, or a built-in preset when `source` names one and
/// no such file exists.
pub fn load_config(source: &str) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if !path.exists() {
        if let Some(c) = preset(source) {
            return Ok(c);
        }
    }
    parse_config(path)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub log: ExperimentLog,
    pub dir: PathBuf,
    pub device_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Runs an experiment and writes the config echo plus both CSVs.
pub fn cmd_run(config: ExperimentConfig, override_dir: Option<&Path>) -> Result<RunOutcome> {
    let dir = output_dir(override_dir, &config.run.output_dir);
    echo_config(&config, &dir)?;
    let log = sim::run_experiment(config)?;
    let (device_csv, summary_csv) = sim::write_outputs(&log, &dir)?;
    Ok(RunOutcome {
        log,
        dir,
        device_csv,
        summary_csv,
    })
}

/// Runs a micro-study, writes `micro_<study>.csv` into `dir` and returns
/// the CSV text.
pub fn cmd_micro(study: MicroStudy, seed: u64, dir: &Path) -> Result<(PathBuf, String)> {
    let cfg = MicroConfig::with_seed(seed);
    let rows = micro::run_study(study, &cfg)?;
    let text = micro::format_rows(study, &cfg, &rows);
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("micro_{}.csv", study.name()));
    std::fs::write(&path, &text)?;
    Ok((path, text))
}
