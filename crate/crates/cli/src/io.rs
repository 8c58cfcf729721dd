//! File helpers shared by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ledclock_core::BoardGeometry;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Why a subcommand failed, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable input or a schema violation (exit 2).
    Input(anyhow::Error),
    /// Inputs were valid but nothing usable came out of them (exit 3).
    Unusable(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Unusable(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Unusable(e) => e,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn unusable(msg: impl std::fmt::Display) -> Failure {
    Failure::Unusable(anyhow!("{msg}"))
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Parses a JSON document, reporting the offending field path on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> anyhow::Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("{origin}: invalid value at `{path}`: {}", e.into_inner())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

/// Parses JSON lines, skipping blank lines; errors name the line number.
pub fn parse_json_lines<T: DeserializeOwned>(text: &str, origin: &str) -> anyhow::Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_json(l, &format!("{origin} line {}", i + 1)))
        .collect()
}

pub fn load_board(path: Option<&Path>) -> anyhow::Result<BoardGeometry> {
    match path {
        Some(p) => BoardGeometry::load(p).with_context(|| format!("invalid board geometry {}", p.display())),
        None => Ok(BoardGeometry::default()),
    }
}

/// Destination for command output: a file when given, else standard output.
pub fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    })
}

pub fn write_json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{} row {}", path.display(), i + 1)))
        .collect()
}
