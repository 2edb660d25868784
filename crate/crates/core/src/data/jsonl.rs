use std::io::Write;
use std::path::Path;

use super::document::Document;
use crate::error::{Error, Result};

/// Parse one document per non-blank line. Documents are validated.
pub fn parse_jsonl(text: &str) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let doc: Document = serde_json::from_value(value).map_err(|e| schema_error(e, line_no))?;
        doc.validate()
            .map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        out.push(doc);
    }
    Ok(out)
}

fn schema_error(e: serde_json::Error, line: usize) -> Error {
    let msg = e.to_string();
    match msg.strip_prefix("missing field `").and_then(|rest| rest.split('`').next()) {
        Some(field) => Error::Schema {
            field: field.to_string(),
            line,
        },
        None => Error::Parse { line, message: msg },
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn to_jsonl(docs: &[Document]) -> String {
    let mut s = String::new();
    for d in docs {
        s.push_str(&serde_json::to_string(d).expect("documents serialize"));
        s.push('\n');
    }
    s
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl(docs: &[Document], path: &Path) -> Result<()> {
    write_atomic(path, to_jsonl(docs).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generator::{generate, GeneratorConfig, LayoutFamily};

    #[test]
    fn round_trip_is_byte_lossless() {
        for family in [LayoutFamily::FormKv, LayoutFamily::Receipt, LayoutFamily::Table, LayoutFamily::MultiColumn] {
            let cfg = GeneratorConfig {
                family,
                ..Default::default()
            };
            let docs = generate(&cfg, 10).unwrap();
            let text = to_jsonl(&docs);
            let back = parse_jsonl(&text).unwrap();
            assert_eq!(back, docs);
            assert_eq!(to_jsonl(&back), text);
        }
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn unknown_fields_survive() {
        let line = r#"{"page":{"w":10,"h":10,"dpi":300},"blocks":[{"id":0,"text":"a","quad":[0,0,1,0,1,1,0,1],"conf":0.9}],"order":[0],"entities":[],"links":[],"source":"scan-7"}"#;
        let docs = parse_jsonl(line).unwrap();
        assert_eq!(docs[0].extra["source"], "scan-7");
        assert_eq!(docs[0].page.extra["dpi"], 300);
        let again = to_jsonl(&docs);
        let v: serde_json::Value = serde_json::from_str(again.trim()).unwrap();
        assert_eq!(v["blocks"][0]["conf"], 0.9);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = to_jsonl(&generate(&GeneratorConfig::default(), 1).unwrap());
        let text = format!("{good}{{not json\n");
        match parse_jsonl(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_names_the_field() {
        let line = r#"{"page":{"w":10,"h":10},"order":[],"entities":[],"links":[]}"#;
        match parse_jsonl(line) {
            Err(Error::Schema { field, line }) => {
                assert_eq!(field, "blocks");
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let docs = generate(&GeneratorConfig::default(), 3).unwrap();
        write_jsonl(&docs, &path).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), docs);
    }
}
