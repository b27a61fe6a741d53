//! Structured-text configuration files and the artifact echo (`config.toml`
//! plus `VERSION`) written next to every output.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::{FORMAT_VERSION, TOOL_VERSION};

pub const ECHO_FILE: &str = "config.toml";
pub const VERSION_FILE: &str = "VERSION";

/// Reads a TOML file; missing keys take their defaults.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
}

/// Creates `dir` and writes the config echo and tool version into it.
pub fn write_echo<T: Serialize>(dir: &Path, value: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let echo = dir.join(ECHO_FILE);
    fs::write(&echo, to_toml(value)?).map_err(|e| Error::io(&echo, e))?;
    let version = dir.join(VERSION_FILE);
    fs::write(&version, format!("sal {TOOL_VERSION} ({FORMAT_VERSION})\n")).map_err(|e| Error::io(&version, e))
}
