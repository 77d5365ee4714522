//! Artifact directories, seeds and small argument parsers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use speckle_core::format::Manifest;

use crate::{CliError, CliResult, Precision};

pub(crate) struct Context {
    pub out: OutLayout,
    pub seed: Option<u64>,
    pub precision: Precision,
    pub threads: usize,
}

impl Context {
    /// The `--seed` value, or a fresh one that is printed so the run can be
    /// repeated.
    pub fn seed(&self) -> u64 {
        match self.seed {
            Some(s) => s,
            None => {
                let s: u64 = rand::random();
                println!("seed: {s} (generated; pass --seed {s} to reproduce)");
                s
            }
        }
    }

    /// Manifest entries shared by every command.
    pub fn manifest(&self, command: &str, seed: Option<u64>) -> Manifest {
        let mut m = Manifest::new();
        m.set("command", command)
            .set("version", env!("CARGO_PKG_VERSION"))
            .set("threads", self.threads)
            .set(
                "precision",
                match self.precision {
                    Precision::F32 => "f32",
                    Precision::F64 => "f64",
                },
            );
        if let Some(s) = seed {
            m.set("seed", s);
        }
        m
    }
}

/// `out/{matrices,datasets,models,reports}/NAME`.
#[derive(Debug, Clone)]
pub struct OutLayout {
    root: PathBuf,
}

impl OutLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, kind: &str, name: &str) -> CliResult<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(CliError::Usage(format!(
                "--name must be a plain directory name (got {name:?})"
            )));
        }
        let d = self.root.join(kind).join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn matrices(&self, name: &str) -> CliResult<PathBuf> {
        self.dir("matrices", name)
    }

    pub fn datasets(&self, name: &str) -> CliResult<PathBuf> {
        self.dir("datasets", name)
    }

    pub fn models(&self, name: &str) -> CliResult<PathBuf> {
        self.dir("models", name)
    }

    pub fn reports(&self, name: &str) -> CliResult<PathBuf> {
        self.dir("reports", name)
    }
}

/// `HxW`, e.g. `20x20`.
pub fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("shape {s:?} must be positive"));
    }
    Ok((h, w))
}

/// `--arch small|large|multi:N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchChoice {
    Small,
    Large,
    Multi(usize),
}

impl FromStr for ArchChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "small" => Ok(ArchChoice::Small),
            "large" => Ok(ArchChoice::Large),
            _ => {
                let n = s
                    .strip_prefix("multi:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| format!("expected small, large or multi:N, got {s:?}"))?;
                Ok(ArchChoice::Multi(n))
            }
        }
    }
}

impl fmt::Display for ArchChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchChoice::Small => f.write_str("small"),
            ArchChoice::Large => f.write_str("large"),
            ArchChoice::Multi(n) => write!(f, "multi:{n}"),
        }
    }
}

pub(crate) fn list<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("20x20"), Ok((20, 20)));
        assert_eq!(parse_shape("3X7"), Ok((3, 7)));
        assert!(parse_shape("20").is_err());
        assert!(parse_shape("0x4").is_err());
    }

    #[test]
    fn arch_round_trip() {
        for a in ["small", "large", "multi:10"] {
            assert_eq!(a.parse::<ArchChoice>().unwrap().to_string(), a);
        }
        assert!("multi:0".parse::<ArchChoice>().is_err());
        assert!("huge".parse::<ArchChoice>().is_err());
    }

    #[test]
    fn names_stay_inside_the_tree() {
        let t = tempfile::tempdir().unwrap();
        let l = OutLayout::new(t.path());
        assert!(l.models("../x").is_err());
        assert!(l.models("").is_err());
        assert!(l.models("m1").unwrap().ends_with("models/m1"));
    }
}
