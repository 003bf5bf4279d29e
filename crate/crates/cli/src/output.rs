//! Model resolution, artifact writing and run manifests.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pulseshaper::{load_model, ModelFamily, SystemModel};
use serde_json::{json, Value};

use crate::Failure;

/// `--model` is a config file when such a file exists, a built-in name
/// otherwise.
pub fn resolve_model(spec: &str) -> Result<SystemModel, Failure> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read model config {}: {e}", path.display())))?;
        return load_model(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())));
    }
    ModelFamily::from_name(spec)
        .map(SystemModel::builtin)
        .map_err(|e| Failure::Usage(format!("{e}; expected a built-in model name or a config file")))
}

pub fn parse_reals(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("{what}: `{}` is not a number", t.trim())))
        })
        .collect()
}

/// Writes `bytes` to `out`, or to standard output.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    let io_err = |e: io::Error| Failure::Numeric(format!("cannot write output: {e}"));
    match out {
        Some(path) => fs::write(path, bytes).map_err(io_err),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(io_err)
        }
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes `<out>.manifest.json` next to `out`. Without an output file there
/// is nothing to describe and no manifest is written.
pub fn write_manifest(
    out: Option<&Path>,
    command: &str,
    model: &SystemModel,
    settings: Value,
    started: Instant,
) -> Result<(), Failure> {
    let Some(out) = out else { return Ok(()) };
    let manifest = json!({
        "command": command,
        "model_config": model.to_config(),
        "settings": settings,
        "outputs": [out.display().to_string()],
        "wall_time": started.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(manifest_path(out), text + "\n")
        .map_err(|e| Failure::Numeric(format!("cannot write manifest: {e}")))
}

pub fn json_bytes(value: &Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text.into_bytes()
}
