//! JSONL reading and writing, plus the dataset loaders built on it.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sotana_core::corpus::{
    collect_codegen_tasks, filter_so_questions, take_summaries, CodegenTask, CorpusError, Decoded, ExclusionReport,
    SoQuestion, SummarizationPair,
};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Corpus { path: PathBuf, source: CorpusError },
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LoadError + '_ {
    move |source| LoadError::Io { path: path.to_path_buf(), source }
}

/// Decodes every non-blank line, keeping per-line failures.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<Decoded<T>>, LoadError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, serde_json::from_str(&line).map_err(|e| e.to_string())));
    }
    Ok(out)
}

/// Like [`read_lines`] but the first bad record is fatal.
pub fn read_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LoadError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, r)| r.map_err(|message| LoadError::Record { path: path.to_path_buf(), line, message }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn load_so_questions(path: &Path) -> Result<(Vec<SoQuestion>, ExclusionReport), LoadError> {
    Ok(filter_so_questions(read_lines(path)?))
}

pub fn load_code_summaries(path: &Path, limit: usize) -> Result<(Vec<SummarizationPair>, ExclusionReport), LoadError> {
    Ok(take_summaries(read_lines(path)?, limit))
}

pub fn load_codegen_tasks(path: &Path) -> Result<(Vec<CodegenTask>, ExclusionReport), LoadError> {
    collect_codegen_tasks(read_lines(path)?).map_err(|source| LoadError::Corpus { path: path.to_path_buf(), source })
}
