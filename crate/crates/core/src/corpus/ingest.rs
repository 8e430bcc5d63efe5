use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{normalize, split_sentences, Document, NormalizationPolicy};
use crate::{Error, Execution, Result};

/// Output of [`ingest`]: documents in global (file, block) order plus the
/// number of blocks dropped because nothing survived cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub documents: Vec<Document>,
    pub skipped_empty: usize,
}

/// Parses one corpus file's text. Documents are blocks separated by blank
/// lines; each line is normalized and re-split into sentences.
pub fn ingest_str(source_id: &str, text: &str, policy: &NormalizationPolicy) -> IngestReport {
    let mut report = IngestReport::default();
    let mut block: Vec<&str> = Vec::new();
    let mut block_index = 0usize;
    let mut flush = |block: &mut Vec<&str>, report: &mut IngestReport| {
        if block.is_empty() {
            return;
        }
        let sentences: Vec<String> = block
            .drain(..)
            .flat_map(|line| split_sentences(&normalize(line, policy)))
            .collect();
        if sentences.is_empty() {
            report.skipped_empty += 1;
        } else {
            report
                .documents
                .push(Document::new(format!("{source_id}#{block_index}"), sentences));
        }
        block_index += 1;
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut block, &mut report);
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut report);
    report
}

/// Reads corpus files and returns their documents.
///
/// Files are processed in parallel (per `exec`) but the result is ordered by
/// the position of the path in `paths`, then by block index, so repeated runs
/// are byte-identical. Ids are `<file name>#<block index>`.
pub fn ingest(paths: &[PathBuf], policy: &NormalizationPolicy, exec: Execution) -> Result<IngestReport> {
    let parsed = exec.map(paths, |_, path| -> Result<IngestReport> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = super::decode_utf8(&bytes)?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(ingest_str(&id, text, policy))
    });
    let mut report = IngestReport::default();
    for r in parsed {
        let r = r?;
        report.documents.extend(r.documents);
        report.skipped_empty += r.skipped_empty;
    }
    Ok(report)
}

/// Serializes documents in the corpus file format: one sentence per line,
/// documents separated by exactly one blank line.
pub fn write_corpus<W: Write>(docs: &[Document], mut out: W) -> std::io::Result<()> {
    let mut buf = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            buf.push('\n');
        }
        for s in &doc.sentences {
            let _ = writeln!(buf, "{s}");
        }
    }
    out.write_all(buf.as_bytes())
}

/// Reads a corpus file without re-normalizing (lines are taken as sentences).
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = super::decode_utf8(&bytes)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(Document::new(format!("{name}#{}", docs.len()), current.drain(..)));
            }
        } else {
            current.push(line.trim().to_string());
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blocks_three_lines() {
        let text = "Um.\nDois.\nTrês.\n\nQuatro.\nCinco.\nSeis.\n";
        let r = ingest_str("f", text, &NormalizationPolicy::default());
        assert_eq!(r.documents.len(), 2);
        assert!(r.documents.iter().all(|d| d.sentences.len() == 3));
        assert_eq!(r.documents[1].id, "f#1");
        assert_eq!(r.skipped_empty, 0);
    }

    #[test]
    fn empty_block_is_skipped_with_warning() {
        let r = ingest_str("f", "\u{0001}\u{0002}\n \u{0007}\n", &NormalizationPolicy::default());
        assert!(r.documents.is_empty());
        assert_eq!(r.skipped_empty, 1);
    }

    #[test]
    fn multiple_blank_lines_delimit_once() {
        let r = ingest_str("f", "\n\nA.\n\n\n\nB.\n\n", &NormalizationPolicy::default());
        assert_eq!(r.documents.len(), 2);
    }

    #[test]
    fn write_then_read() {
        let docs = vec![
            Document::new("a", ["Olá.", "Tudo bem?"]),
            Document::new("b", ["Sim."]),
        ];
        let mut buf = Vec::new();
        write_corpus(&docs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "Olá.\nTudo bem?\n\nSim.\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, &buf).unwrap();
        let back = read_corpus(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].sentences, docs[0].sentences);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest(
            &[PathBuf::from("/nonexistent/file.txt")],
            &NormalizationPolicy::default(),
            Execution::Serial,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
