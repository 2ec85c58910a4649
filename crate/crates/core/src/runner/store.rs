//! Append-only JSON-lines record store.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{ExperimentRecord, Result, RunnerError};

pub struct RecordStore {
    path: PathBuf,
    file: File,
}

/// Records already on disk plus any quarantined trailing fragment.
pub struct Loaded {
    pub records: Vec<ExperimentRecord>,
    pub quarantined: Option<PathBuf>,
}

impl RecordStore {
    /// Opens (creating if needed) the store at `path`. A final line that does
    /// not parse, typically left by an interrupted write, is moved to
    /// `<path>.quarantine` and cut from the store; an unparseable line
    /// anywhere else is an error.
    pub fn open(path: &Path) -> Result<(Self, Loaded)> {
        let loaded = if path.exists() { Self::recover(path)? } else { Loaded { records: Vec::new(), quarantined: None } };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((Self { path: path.to_path_buf(), file }, loaded))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn recover(path: &Path) -> Result<Loaded> {
        let text = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        let mut offset = 0;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            let body = line.trim_end_matches('\n');
            if body.trim().is_empty() {
                offset += line.len();
                continue;
            }
            match serde_json::from_str::<ExperimentRecord>(body) {
                Ok(r) if line.ends_with('\n') => records.push(r),
                parsed => {
                    if i + 1 != lines.len() {
                        let why = parsed.err().map_or("missing newline".to_string(), |e| e.to_string());
                        return Err(RunnerError::Store(format!("{}: line {} is corrupt: {why}", path.display(), i + 1)));
                    }
                    let q = quarantine_path(path);
                    let mut qf = OpenOptions::new().create(true).append(true).open(&q)?;
                    qf.write_all(line.as_bytes())?;
                    qf.write_all(b"\n")?;
                    let f = OpenOptions::new().write(true).open(path)?;
                    f.set_len(offset as u64)?;
                    log::warn!("quarantined a truncated record from {} into {}", path.display(), q.display());
                    return Ok(Loaded { records, quarantined: Some(q) });
                }
            }
            offset += line.len();
        }
        Ok(Loaded { records, quarantined: None })
    }

    /// Appends one record as a single line and flushes it.
    pub fn append(&mut self, record: &ExperimentRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| RunnerError::Store(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn quarantine_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".quarantine");
    PathBuf::from(name)
}

/// Reads every record of a store without modifying it.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let file = File::open(path).map_err(|e| RunnerError::Store(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| RunnerError::Store(format!("{}: line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
