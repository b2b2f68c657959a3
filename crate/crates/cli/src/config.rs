//! Plain `key = value` configuration files.
//!
//! Keys are long option names (`first_stage_k` or `first-stage-k`). Values
//! become command-line arguments placed before the user's own, so anything
//! given on the command line wins. `true`/`false` toggle flags.

use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(tprf_core::Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            });
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().to_owned();
        if key.is_empty() || key.contains(char::is_whitespace) {
            bail!(tprf_core::Error::Parse {
                line: i + 1,
                message: format!("bad key {key:?}"),
            });
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            bail!(tprf_core::Error::Parse {
                line: i + 1,
                message: format!("key {key} already set on line {}", prev.line),
            });
        }
        entries.push(Entry {
            key,
            value,
            line: i + 1,
        });
    }
    Ok(entries)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| tprf_core::Error::Io {
            path: path.to_owned(),
            source: e,
        })
        .with_context(|| format!("reading config {}", path.display()))?;
    parse(&text)
}

pub fn to_args(entries: &[Entry]) -> Vec<String> {
    let mut args = Vec::new();
    for e in entries {
        match e.value.as_str() {
            "true" => args.push(format!("--{}", e.key)),
            "false" => {}
            v => {
                args.push(format!("--{}", e.key));
                args.push(v.to_owned());
            }
        }
    }
    args
}

/// Finds `--config PATH` / `--config=PATH` and splices the file's arguments
/// in right after the subcommand name.
pub fn expand(argv: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_owned());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let extra = to_args(&load(Path::new(&path))?);
    let sub = rest
        .iter()
        .position(|a| subcommands.contains(&a.as_str()))
        .map_or(rest.len(), |i| i + 1);
    rest.splice(sub..sub, extra);
    Ok(rest)
}
