//! Artifact assembly and atomic writes. Nothing touches the output directory
//! until every artifact of a command has been produced.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub const REPORT_SCHEMA: u32 = 1;

/// Exit statuses.
#[derive(Debug)]
pub enum Failure {
    Infeasible(String),
    Invariant(String),
    BadInput(String),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Infeasible(_) => 2,
            Failure::Invariant(_) => 3,
            Failure::BadInput(_) => 4,
            Failure::Internal(_) => 1,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Failure::Infeasible(_) => "infeasible",
            Failure::Invariant(_) => "invariant-violation",
            Failure::BadInput(_) => "bad-input",
            Failure::Internal(_) => "error",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Infeasible(m) | Failure::Invariant(m) | Failure::BadInput(m) => f.write_str(m),
            Failure::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Internal(e.into())
    }
}

/// Worst of several outcomes (higher exit code wins, internal errors last).
pub fn worst(a: Option<Failure>, b: Failure) -> Failure {
    match a {
        None => b,
        Some(a) => {
            let rank = |f: &Failure| match f {
                Failure::Internal(_) => 4,
                f => f.code(),
            };
            if rank(&b) > rank(&a) {
                b
            } else {
                a
            }
        }
    }
}

#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn text(&mut self, name: &str, body: impl Into<String>) {
        self.files.push((name.to_string(), body.into().into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        self.text(name, s);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Write every file via a temporary sibling and rename.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(body)?;
            tmp.persist(dir.join(name)).map_err(|e| e.error)?;
        }
        Ok(())
    }
}

/// Shortest round-trip formatting, so reruns are byte-identical.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::from("nan")
    }
}
