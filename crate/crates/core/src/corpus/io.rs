use std::io::{BufRead, Write};

use serde_json::Value;

use super::{Document, TextSpan, VocabularySpec};
use crate::error::{LabError, Result};

/// Reads JSONL documents (`{"text": ..., "id"?: ...}`), one per line.
///
/// Lines that are not UTF-8, not JSON, or lack a string `text` field are
/// skipped; the second element of the result counts them.
pub fn read_documents_jsonl<R: BufRead>(
    mut reader: R,
    corpus: &str,
) -> Result<(Vec<Document>, usize)> {
    let mut docs = Vec::new();
    let mut failures = 0usize;
    let mut buf = Vec::new();
    let mut index = 0usize;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let line_no = index;
        index += 1;
        let Ok(line) = std::str::from_utf8(&buf) else {
            failures += 1;
            continue;
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Ok(value) = serde_json::from_str::<Value>(line) else {
            failures += 1;
            continue;
        };
        let Some(text) = value.get("text").and_then(Value::as_str) else {
            failures += 1;
            continue;
        };
        let id = match value.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => line_no.to_string(),
        };
        docs.push(Document::new(corpus, id, text));
    }
    Ok((docs, failures))
}

pub fn write_spans_jsonl<W: Write>(mut writer: W, spans: &[TextSpan]) -> Result<()> {
    for span in spans {
        serde_json::to_writer(&mut writer, span)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_spans_jsonl<R: BufRead>(reader: R) -> Result<Vec<TextSpan>> {
    let mut spans = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let span: TextSpan = serde_json::from_str(&line).map_err(|e| LabError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        spans.push(span);
    }
    Ok(spans)
}

/// Reads a plain word list: one entry per line, blank lines and `#` comments ignored.
pub fn read_word_list<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let w = line.trim();
        if w.is_empty() || w.starts_with('#') {
            continue;
        }
        out.push(w.to_string());
    }
    Ok(out)
}

pub fn write_word_list<W: Write>(mut writer: W, vocab: &VocabularySpec) -> Result<()> {
    for w in vocab.words() {
        writeln!(writer, "{w}")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn reads_documents_and_counts_failures() {
        let mut data = b"{\"text\": \"a b\", \"id\": \"x\"}\nnot json\n{\"id\": 3}\n".to_vec();
        data.extend_from_slice(&[0xff, b'\n']);
        data.extend_from_slice(b"{\"text\": \"c\"}\n");
        let (docs, failures) = read_documents_jsonl(Cursor::new(data), "web").unwrap();
        assert_eq!(failures, 3);
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].id, "x");
        assert_eq!(docs[1].id, "4");
        assert_eq!(docs[1].corpus, "web");
    }

    #[test]
    fn spans_round_trip_through_jsonl() {
        let spans = vec![TextSpan::from_text("a b c"), TextSpan::from_text("d")];
        let mut out = Vec::new();
        write_spans_jsonl(&mut out, &spans).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.contains("\"word_count\":3"));
        assert!(text.contains("\"origin\""));
        assert_eq!(read_spans_jsonl(Cursor::new(out)).unwrap(), spans);
    }
}
