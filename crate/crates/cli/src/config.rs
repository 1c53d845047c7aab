//! Expansion of `--config FILE` into ordinary flags.
//!
//! File entries are inserted right after the subcommand name. Keys that also
//! appear on the command line are dropped, so the command line always wins.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::CommandFactory;

use crate::args::Cli;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {line:?}", i + 1);
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

/// Returns `args` with the entries of the referenced config file spliced in.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(sub_pos) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
    else {
        return Ok(args);
    };
    let sub_pos = sub_pos + 1;
    let sub_name = args[sub_pos].to_string_lossy().into_owned();
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(args);
    };

    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let on_cli = |key: &str| {
        let flag = format!("--{key}");
        args[sub_pos + 1..].iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        })
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in parse_config(&text)? {
        if key == "config" {
            bail!(
                "{}: a config file cannot name another config file",
                path.display()
            );
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            bail!("{}: unknown key {key:?} for `{sub_name}`", path.display());
        };
        if on_cli(&key) {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                _ => bail!("{}: {key} expects true or false, got {value:?}", path.display()),
            }
        }
    }
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_pos + 1..]);
    Ok(out)
}
