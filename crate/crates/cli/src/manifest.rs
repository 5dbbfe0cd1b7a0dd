use std::fmt::Debug;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

pub const MANIFEST: &str = "manifest.txt";

/// Writes `manifest.txt` next to the results.
///
/// `argv.N` lines hold the exact invocation, so rerunning them regenerates
/// every listed output.
pub fn write(
    out: &Path,
    command: &str,
    seed: u64,
    spec: &impl Debug,
    outputs: &[String],
) -> Result<()> {
    let mut text = String::new();
    let mut put = |k: &str, v: &str| {
        text.push_str(k);
        text.push('=');
        text.push_str(&v.replace('\n', " "));
        text.push('\n');
    };
    put("tool", env!("CARGO_PKG_NAME"));
    put("version", env!("CARGO_PKG_VERSION"));
    put("library_version", oraclelab::VERSION);
    put("command", command);
    put("seed", &seed.to_string());
    put("spec", &format!("{spec:?}"));
    for (i, arg) in std::env::args().enumerate() {
        put(&format!("argv.{i}"), &arg);
    }
    for (i, file) in outputs.iter().enumerate() {
        put(&format!("output.{i}"), file);
    }
    let path = out.join(MANIFEST);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
