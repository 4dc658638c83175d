//! Plain-text `key=value` run configs.
//!
//! A config file supplies defaults for a subcommand's long flags; flags given
//! on the command line win. Every run writes the resolved settings back out in
//! the same format, so an echo can be replayed with `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::Command;
use serde::Serialize;
use serde_json::Value;

pub const CONFIG_FLAG: &str = "config";

#[derive(Debug, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("config line {}: expected key=value, got '{line}'", i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError(format!("config line {}: empty key", i + 1)));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

fn flag_given(args: &[OsString], key: &str) -> bool {
    let bare = format!("--{key}");
    let eq = format!("--{key}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == bare || a.starts_with(&eq))
}

fn config_path(args: &[OsString]) -> Result<Option<OsString>, ConfigError> {
    let flag = format!("--{CONFIG_FLAG}");
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(s) = a.to_str() else { continue };
        if s == flag {
            return it
                .next()
                .cloned()
                .map(Some)
                .ok_or_else(|| ConfigError("--config needs a file".into()));
        }
        if let Some(p) = s.strip_prefix(&format!("{flag}=")) {
            return Ok(Some(p.into()));
        }
    }
    Ok(None)
}

/// Splices the values of a `--config` file into `argv` as flags placed
/// before the user's own, skipping any key the user set explicitly.
pub fn expand_argv(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(sub_name) = argv.get(1).and_then(|s| s.to_str()).map(str::to_string) else {
        return Ok(argv);
    };
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let rest = &argv[2..];
    let Some(path) = config_path(rest)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", Path::new(&path).display())))?;

    let mut injected = Vec::new();
    for (key, value) in parse_pairs(&text)? {
        if key == CONFIG_FLAG {
            return Err(ConfigError("config files cannot include other config files".into()));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| ConfigError(format!("unknown key '{key}' for {sub_name}")))?;
        if flag_given(rest, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => return Err(ConfigError(format!("key '{key}' takes true or false, got '{other}'"))),
            }
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(rest);
    Ok(out)
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        // an empty list is the default; `key=` would read back as [""]
        Value::Array(items) if items.is_empty() => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(items.iter().filter_map(scalar).collect::<Vec<_>>().join(",")),
        other => Some(other.to_string()),
    }
}

/// Renders resolved arguments as sorted `key=value` lines.
pub fn echo(args: &impl Serialize) -> String {
    let value = serde_json::to_value(args).expect("arguments serialize");
    let mut out = String::new();
    if let Value::Object(map) = value {
        for (k, v) in map {
            if k == CONFIG_FLAG {
                continue;
            }
            if let Some(s) = scalar(&v) {
                writeln!(out, "{k}={s}").unwrap();
            }
        }
    }
    out
}
