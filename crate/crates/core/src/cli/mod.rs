//! The `densebody` command-line tool.
//!
//! Every subcommand merges `--config file.json` with its flags (flags win),
//! writes its outputs plus a `<output>.provenance.json` sidecar, and is
//! deterministic given its inputs and seed. Relative output paths resolve
//! under `DENSEBODY_OUT_DIR` when it is set.

mod commands;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;

pub use commands::*;

pub const OUT_DIR_ENV: &str = "DENSEBODY_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "densebody", version, about = "UV position-map body toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON file with option defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for every random draw; 0 when neither flag nor config sets it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic body model directory.
    ModelSynth(ModelSynthOpts),
    /// Render a position map from model vertices.
    UvRender(UvRenderOpts),
    /// Resample mesh vertices from a position map.
    UvResample(UvResampleOpts),
    /// Resolution study of the render/resample round trip.
    Study(StudyOpts),
    /// Build aligned ground-truth samples from a JSON-lines manifest.
    Preprocess(PreprocessOpts),
    /// Apply geometric and color augmentations to a sample.
    Augment(AugmentOpts),
    /// Evaluate the training loss between two maps.
    LossEval(LossEvalOpts),
    /// Fit pose, shape and a similarity to a map or vertex file.
    Fit(FitOpts),
    /// Joint and surface metrics over prediction and ground-truth manifests.
    Metrics(MetricsOpts),
}

/// Failure of a command: usage problems exit with 2, data problems with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Resolved options of a run, as recorded in the provenance sidecar.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<Value>,
}

impl RunContext {
    /// Output path, placed under the output-directory override when relative.
    pub fn output(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.config).expect("json values serialize");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            tool: "densebody".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            seed: self.seed,
            config_hash: self.config_hash(),
            config: self.config.clone(),
            extra: None,
        }
    }

    /// Writes `<output>.provenance.json` next to `output`.
    pub fn write_sidecar(&self, output: &Path) -> CliResult<()> {
        self.write_provenance(output, self.provenance())
    }

    /// Like [`RunContext::write_sidecar`] with command-specific details added.
    pub fn write_sidecar_with(&self, output: &Path, extra: Value) -> CliResult<()> {
        let mut p = self.provenance();
        p.extra = Some(extra);
        self.write_provenance(output, p)
    }

    fn write_provenance(&self, output: &Path, p: Provenance) -> CliResult<()> {
        let mut name = output.file_name().map(OsString::from).unwrap_or_default();
        name.push(".provenance.json");
        write_json(&output.with_file_name(name), &p)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(Error::io(path, e)))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

/// Overlays the flags given on the command line onto the config file.
fn merge_options<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> CliResult<(T, Value)> {
    let mut merged = match config {
        Some(path) => match read_json::<Value>(path)? {
            Value::Object(m) => m,
            _ => return Err(usage(format!("config {} is not a JSON object", path.display()))),
        },
        None => Map::new(),
    };
    merged.remove("seed");
    merged.remove("jobs");
    if let Value::Object(given) = serde_json::to_value(flags).map_err(Error::from)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    let value = Value::Object(merged);
    let opts = serde_json::from_value(value.clone()).map_err(|e| usage(format!("bad option: {e}")))?;
    Ok((opts, value))
}

fn config_seed(config: Option<&Path>) -> CliResult<Option<u64>> {
    let Some(path) = config else { return Ok(None) };
    match read_json::<Value>(path)?.get("seed") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| usage("config seed must be a non-negative integer")),
    }
}

fn prepare<T: Serialize + DeserializeOwned>(
    command: &'static str,
    flags: &T,
    global: &GlobalArgs,
) -> CliResult<(T, RunContext)> {
    let cfg_path = global.config.as_deref();
    let (opts, mut config) = merge_options(flags, cfg_path)?;
    let seed = match global.seed {
        Some(s) => s,
        None => config_seed(cfg_path)?.unwrap_or(0),
    };
    if let Value::Object(m) = &mut config {
        m.insert("seed".into(), json!(seed));
    }
    let out_dir = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    Ok((
        opts,
        RunContext {
            command,
            seed,
            config,
            out_dir,
        },
    ))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::ModelSynth(o) => prepare("model-synth", o, g).and_then(|(o, c)| model_synth(&o, &c)),
        Command::UvRender(o) => prepare("uv-render", o, g).and_then(|(o, c)| uv_render(&o, &c)),
        Command::UvResample(o) => prepare("uv-resample", o, g).and_then(|(o, c)| uv_resample(&o, &c)),
        Command::Study(o) => prepare("study", o, g).and_then(|(o, c)| study(&o, &c)),
        Command::Preprocess(o) => prepare("preprocess", o, g).and_then(|(o, c)| preprocess(&o, &c)),
        Command::Augment(o) => prepare("augment", o, g).and_then(|(o, c)| augment_cmd(&o, &c)),
        Command::LossEval(o) => prepare("loss-eval", o, g).and_then(|(o, c)| loss_eval(&o, &c)),
        Command::Fit(o) => prepare("fit", o, g).and_then(|(o, c)| fit(&o, &c)),
        Command::Metrics(o) => prepare("metrics", o, g).and_then(|(o, c)| metrics_cmd(&o, &c)),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({ "error": kind, "message": message }).to_string()
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", error_line("usage", &e.to_string()));
            return ExitCode::from(2);
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", error_line("usage", &msg));
            ExitCode::from(2)
        }
        Err(CliError::Data(e)) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
