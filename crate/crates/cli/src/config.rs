//! TOML run configuration. Top-level keys set the globals; a table named
//! after a subcommand sets that subcommand's parameters. Flags given on the
//! command line win over the file.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde_json::Value;

use crate::args::{Global, Profile};
use crate::Failure;

const GLOBAL_KEYS: [&str; 4] = ["seed", "profile", "threads", "out"];

pub fn load(path: &Path) -> Result<toml::Table, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

fn on_command_line(id: &str, ms: &[&ArgMatches]) -> bool {
    ms.iter().any(|m| m.ids().any(|i| i.as_str() == id) && m.value_source(id) == Some(ValueSource::CommandLine))
}

fn to_json(v: &toml::Value) -> Value {
    serde_json::to_value(v).expect("toml values convert to json")
}

fn bad(key: &str, want: &str) -> Failure {
    Failure::Usage(format!("config key {key} must be {want}"))
}

pub fn merge_globals(g: &Global, file: Option<&toml::Table>, top: &ArgMatches, sub: &ArgMatches) -> Result<Global, Failure> {
    let mut g = g.clone();
    let Some(file) = file else { return Ok(g) };
    let names: Vec<String> = crate::args::Cli::command_names();
    for (key, v) in file {
        if v.is_table() {
            if !names.iter().any(|n| n == key) {
                return Err(Failure::Usage(format!("config table [{key}] names no subcommand")));
            }
            continue;
        }
        if !GLOBAL_KEYS.contains(&key.as_str()) {
            return Err(Failure::Usage(format!("unknown config key {key}")));
        }
        if on_command_line(key, &[top, sub]) {
            continue;
        }
        match key.as_str() {
            "seed" => g.seed = v.as_integer().and_then(|i| u64::try_from(i).ok()).ok_or_else(|| bad(key, "a nonnegative integer"))?,
            "profile" => {
                g.profile = serde_json::from_value::<Profile>(to_json(v)).map_err(|_| bad(key, "desk or quick"))?
            }
            "threads" => {
                g.threads =
                    Some(v.as_integer().and_then(|i| usize::try_from(i).ok()).ok_or_else(|| bad(key, "a positive integer"))?)
            }
            "out" => g.out = PathBuf::from(v.as_str().ok_or_else(|| bad(key, "a path"))?),
            _ => unreachable!(),
        }
    }
    Ok(g)
}

/// Overlay the file section of subcommand `name` on its parsed arguments.
pub fn merge_section(
    mut params: Value,
    section: Option<&toml::Value>,
    sub: &ArgMatches,
    cmd: &clap::Command,
    name: &str,
) -> Result<Value, Failure> {
    let Some(section) = section else { return Ok(params) };
    let table = section.as_table().ok_or_else(|| Failure::Usage(format!("config entry {name} must be a table")))?;
    let obj = params.as_object_mut().expect("arguments serialize to an object");
    for (key, v) in table {
        let field = key.replace('-', "_");
        if !obj.contains_key(&field) {
            return Err(Failure::Usage(format!("unknown key {key} in config table [{name}]")));
        }
        let is_arg = cmd.get_arguments().any(|a| a.get_id().as_str() == field);
        if is_arg && on_command_line(&field, &[sub]) {
            continue;
        }
        overlay(obj.get_mut(&field).expect("checked above"), to_json(v), &format!("{name}.{key}"))?;
    }
    Ok(params)
}

/// Tables merge key by key into existing objects; anything else replaces.
fn overlay(slot: &mut Value, v: Value, path: &str) -> Result<(), Failure> {
    match (slot.as_object_mut(), v) {
        (Some(obj), Value::Object(new)) => {
            for (key, v) in new {
                let field = key.replace('-', "_");
                let inner = obj
                    .get_mut(&field)
                    .ok_or_else(|| Failure::Usage(format!("unknown key {key} in config table [{path}]")))?;
                overlay(inner, v, &format!("{path}.{key}"))?;
            }
            Ok(())
        }
        (_, v) => {
            *slot = v;
            Ok(())
        }
    }
}
