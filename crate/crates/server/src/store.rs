//! Append-only session logs. Each file holds one `session` record followed by
//! one `choice` record per feedback round; replaying the choices through the
//! engine rebuilds the session exactly.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use attrsearch_core::session::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// A real user with a target in mind; nothing target-derived is exposed.
    Live,
    /// The target is known to the server and may be revealed.
    Sandbox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub mode: Mode,
    pub strategy: Strategy,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub max_steps: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub step: usize,
    pub accepted: Vec<String>,
    pub chosen: Option<String>,
    #[serde(default)]
    pub found: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Session(SessionMeta),
    Choice(ChoiceRecord),
}

#[derive(Clone, Debug)]
pub struct LogStore {
    dir: PathBuf,
}

impl LogStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(LogStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn append(&self, id: &str, record: &Record) -> std::io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(id))?;
        file.write_all(line.as_bytes())?;
        file.sync_data()
    }

    /// Every stored session as (meta, choices), in file-name order.
    pub fn load_all(&self) -> std::io::Result<Vec<(SessionMeta, Vec<ChoiceRecord>)>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for path in paths {
            match read_log(&path) {
                Ok(entry) => out.push(entry),
                Err(e) => {
                    tracing::warn!(path = %path.display(), error = %e, "skipping unreadable session log")
                }
            }
        }
        Ok(out)
    }
}

pub fn read_log(path: &Path) -> std::io::Result<(SessionMeta, Vec<ChoiceRecord>)> {
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let mut meta = None;
    let mut choices = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
        match record {
            Record::Session(m) if meta.is_none() => meta = Some(m),
            Record::Session(_) => {
                return Err(invalid(format!("line {}: second session record", n + 1)))
            }
            Record::Choice(c) => choices.push(c),
        }
    }
    let meta = meta.ok_or_else(|| invalid("missing session record".into()))?;
    Ok((meta, choices))
}
