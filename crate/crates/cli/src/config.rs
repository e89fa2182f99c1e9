//! Config files that pre-fill command-line flags.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment
//! key = value          # applies to every subcommand that has --key
//! [adapt]              # following keys apply to `adapt` only
//! gamma = 2.5
//! corpus = "data/reviews.txt"
//! ```
//!
//! Keys are flag names without the leading `--`. Values may be wrapped in
//! double quotes. A boolean flag is set by `true` and left unset by `false`.
//! A key may repeat for flags that accept several occurrences. A flag given
//! on the command line replaces every config value for that flag.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: Option<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, String> {
    let mut section = None;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| format!("line {line}: unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(format!("line {line}: empty section name"));
            }
            section = Some(name.to_owned());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| format!("line {line}: expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("line {line}: invalid key {key:?}"));
        }
        out.push(Entry {
            section: section.clone(),
            key: key.to_owned(),
            value: unquote(value.trim(), line)?,
            line,
        });
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(value: &str, line: usize) -> Result<String, String> {
    match value.strip_prefix('"') {
        Some(rest) => rest
            .strip_suffix('"')
            .map(str::to_owned)
            .ok_or_else(|| format!("line {line}: unterminated string")),
        None => Ok(value.to_owned()),
    }
}

/// Locates `--config` and the subcommand in raw arguments and splices the
/// config file's flags in right after the subcommand name.
pub fn expand_args(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let strs: Vec<Option<&str>> = args.iter().map(|a| a.to_str()).collect();
    let mut config_path = None;
    let mut sub_at = None;
    let mut i = 1;
    while i < strs.len() {
        match strs[i] {
            Some("--config") => {
                config_path = strs.get(i + 1).copied().flatten().map(str::to_owned);
                i += 2;
                continue;
            }
            Some(s) if s.starts_with("--config=") => {
                config_path = Some(s["--config=".len()..].to_owned());
            }
            Some(s) if cmd.find_subcommand(s).is_some() && sub_at.is_none() => {
                sub_at = Some(i);
            }
            _ => {}
        }
        i += 1;
    }
    let (Some(path), Some(sub_at)) = (config_path, sub_at) else {
        return Ok(args);
    };
    let sub_name = strs[sub_at].expect("matched as str");
    let sub = cmd.find_subcommand(sub_name).expect("matched above");
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {path}: {e}"))?;
    let entries = parse(&text).map_err(|e| format!("{path}: {e}"))?;

    let user_args = &strs[sub_at + 1..];
    let on_command_line = |flag: &str| {
        let eq = format!("{flag}=");
        user_args
            .iter()
            .flatten()
            .any(|a| *a == flag || a.starts_with(&eq))
    };

    let mut injected: Vec<OsString> = Vec::new();
    for entry in entries {
        match &entry.section {
            Some(s) if s != sub_name => continue,
            _ => {}
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(entry.key.as_str()));
        let Some(arg) = arg else {
            if entry.section.is_some() {
                return Err(format!(
                    "{path}:{}: `{sub_name}` has no flag --{}",
                    entry.line, entry.key
                ));
            }
            continue;
        };
        let flag = format!("--{}", entry.key);
        if on_command_line(&flag) {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(flag.into());
            injected.push(entry.value.into());
        } else {
            match entry.value.as_str() {
                "true" => injected.push(flag.into()),
                "false" => {}
                v => {
                    return Err(format!(
                        "{path}:{}: flag --{} expects true or false, got {v:?}",
                        entry.line, entry.key
                    ))
                }
            }
        }
    }

    let mut out = args;
    let tail = out.split_off(sub_at + 1);
    out.extend(injected);
    out.extend(tail);
    Ok(out)
}
