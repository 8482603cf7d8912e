//! Line-delimited record I/O shared by every pipeline stage.
//!
//! Output files start with a header record carrying the config hash, seed,
//! and tool version, and are written atomically (temp file in the same
//! directory, then rename) so a crashed run never leaves a truncated file
//! behind under the final name.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl RecordError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RecordError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// First line of every emitted file: enough to reproduce the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
}

impl FileHeader {
    pub fn new(config_hash: impl Into<String>, seed: Option<u64>, tool_version: impl Into<String>) -> Self {
        FileHeader {
            config_hash: config_hash.into(),
            seed,
            tool_version: tool_version.into(),
        }
    }
}

/// Wire shape of the header line, `{"header": {...}}`, so it can never be
/// confused with a data record.
#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: FileHeader,
}

/// Reads a JSONL file, returning the header (if the first line is one) and
/// all data records. Parse errors name the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<FileHeader>, Vec<T>), RecordError> {
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut header = None;
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RecordError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let row = serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// A file that only appears under its final name once fully written.
struct AtomicFile {
    tmp: PathBuf,
    dest: PathBuf,
    out: Option<BufWriter<File>>,
}

impl AtomicFile {
    fn create(dest: &Path) -> Result<Self, RecordError> {
        let name = dest
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        let tmp = dest.with_file_name(format!(".{name}.tmp"));
        let file = File::create(&tmp).map_err(|e| RecordError::io(&tmp, e))?;
        Ok(AtomicFile {
            tmp,
            dest: dest.to_path_buf(),
            out: Some(BufWriter::new(file)),
        })
    }

    fn writer(&mut self) -> &mut BufWriter<File> {
        self.out.as_mut().expect("writer taken")
    }

    fn commit(mut self) -> Result<(), RecordError> {
        let mut out = self.out.take().expect("writer taken");
        out.flush().map_err(|e| RecordError::io(&self.tmp, e))?;
        drop(out);
        fs::rename(&self.tmp, &self.dest).map_err(|e| RecordError::io(&self.dest, e))
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        // Uncommitted temp files are debris from a failed run.
        if self.out.is_some() {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

/// Streaming JSONL writer with atomic commit.
pub struct JsonlWriter {
    file: AtomicFile,
    rows: usize,
}

impl JsonlWriter {
    pub fn create(path: &Path, header: Option<&FileHeader>) -> Result<Self, RecordError> {
        let mut file = AtomicFile::create(path)?;
        if let Some(h) = header {
            let line = serde_json::to_string(&HeaderLine { header: h.clone() }).expect("header serializes");
            writeln!(file.writer(), "{line}").map_err(|e| RecordError::io(path, e))?;
        }
        Ok(JsonlWriter { file, rows: 0 })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<(), RecordError> {
        let line = serde_json::to_string(row).map_err(|e| RecordError::Malformed {
            path: self.file.dest.clone(),
            line: self.rows + 1,
            message: e.to_string(),
        })?;
        writeln!(self.file.writer(), "{line}").map_err(|e| RecordError::io(&self.file.dest, e))?;
        self.rows += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<usize, RecordError> {
        let rows = self.rows;
        self.file.commit()?;
        Ok(rows)
    }

    /// Rows written so far (header excluded).
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Writes a whole slice as JSONL in one atomic step.
pub fn write_jsonl<T: Serialize>(path: &Path, header: Option<&FileHeader>, rows: &[T]) -> Result<(), RecordError> {
    let mut w = JsonlWriter::create(path, header)?;
    for row in rows {
        w.write(row)?;
    }
    w.finish()?;
    Ok(())
}

/// Writes plain text atomically (used for aligned report tables).
pub fn write_text(path: &Path, text: &str) -> Result<(), RecordError> {
    let mut file = AtomicFile::create(path)?;
    file.writer()
        .write_all(text.as_bytes())
        .map_err(|e| RecordError::io(path, e))?;
    file.commit()
}
