//! Flat `key = value` config files.
//!
//! Each line becomes a `--key=value` flag inserted right after the
//! subcommand name, ahead of the user's own flags. Since every flag
//! overrides earlier occurrences of itself, the command line wins.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Turns config file text into flags. Blank lines and `#` comments are
/// skipped; keys may be written with or without leading dashes.
pub fn parse_config(text: &str) -> Result<Vec<OsString>> {
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {raw:?}", i + 1);
        };
        let key = key.trim().trim_start_matches('-');
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key {key:?}", i + 1);
        }
        flags.push(format!("--{key}={}", value.trim()).into());
    }
    Ok(flags)
}

/// Finds `--config FILE` or `--config=FILE` among the raw arguments.
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

/// Index just past the subcommand name: the first argument after the
/// program name that is not `--config` or its value.
fn subcommand_end(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--config" {
            i += 2;
        } else if s.starts_with("--config=") {
            i += 1;
        } else if s.starts_with('-') {
            return None;
        } else {
            return Some(i + 1);
        }
    }
    None
}

/// Splices the config file's flags into `args`, if one is given.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(at) = subcommand_end(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let flags = parse_config(&text)?;
    let mut out = args[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn lines_become_flags() {
        let flags = parse_config("# defaults\nT = 0.0001\n\n--buckets=32,64  # memory\nreport-all = true\n").unwrap();
        assert_eq!(flags, os(&["--T=0.0001", "--buckets=32,64", "--report-all=true"]));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_config("buckets 32").is_err());
        assert!(parse_config(" = 3").is_err());
    }

    #[test]
    fn flags_go_after_the_subcommand() {
        let dir = std::env::temp_dir().join(format!("reorder-config-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("c.txt");
        std::fs::write(&file, "C = 8\n").unwrap();
        let args = os(&["reorder", "--config", file.to_str().unwrap(), "run", "--C", "4"]);
        let out = expand_args(args).unwrap();
        let tail: Vec<_> = out[4..].to_vec();
        assert_eq!(tail, os(&["--C=8", "--C", "4"]));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn no_config_is_a_no_op() {
        let args = os(&["reorder", "run", "--C", "4"]);
        assert_eq!(expand_args(args.clone()).unwrap(), args);
    }
}
