//! JSONL corpora: one `{"id","lang","document","summary"}` object per line.

use std::path::Path;

use serde_json::Value;

use super::tokenizer::Tokenizer;
use super::{Dataset, Example, Truncation};
use crate::error::{Error, Result};

const FIELDS: [&str; 4] = ["id", "lang", "document", "summary"];

pub fn load_jsonl(path: &Path, tokenizer: &Tokenizer, truncation: Truncation) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, tokenizer, truncation)
}

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
pub fn parse_jsonl(text: &str, tokenizer: &Tokenizer, truncation: Truncation) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: line_no,
            message: format!("invalid JSON: {e}"),
        })?;
        let obj = v.as_object().ok_or_else(|| Error::Schema {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        let mut fields = [""; 4];
        for (slot, name) in fields.iter_mut().zip(FIELDS) {
            *slot = obj
                .get(name)
                .ok_or_else(|| Error::Schema {
                    line: line_no,
                    message: format!("missing field \"{name}\""),
                })?
                .as_str()
                .ok_or_else(|| Error::Schema {
                    line: line_no,
                    message: format!("field \"{name}\" must be a string"),
                })?;
        }
        let [id, lang, document, summary] = fields;
        let mut ex = Example {
            id: id.to_string(),
            lang: lang.to_string(),
            document: tokenizer.encode(document),
            summary: tokenizer.encode(summary),
        };
        truncation.apply(&mut ex);
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::Data("JSONL input holds no records".into()));
    }
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::byte()
    }

    #[test]
    fn order_preserved() {
        let text = r#"{"id":"a","lang":"en","document":"xyz","summary":"x"}
{"id":"b","lang":"en","document":"pq","summary":"p"}
{"id":"c","lang":"fr","document":"rst","summary":"t"}
"#;
        let ds = parse_jsonl(text, &tok(), Truncation::default()).unwrap();
        let ids: Vec<_> = ds.examples.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn missing_field_names_line() {
        let text = "{\"id\":\"a\",\"lang\":\"en\",\"document\":\"x\",\"summary\":\"x\"}\n{\"id\":\"b\",\"lang\":\"en\",\"document\":\"x\"}\n";
        match parse_jsonl(text, &tok(), Truncation::default()) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("summary"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_is_data_error() {
        assert!(matches!(parse_jsonl("\n", &tok(), Truncation::default()), Err(Error::Data(_))));
    }

    #[test]
    fn truncates_document() {
        let doc = "a".repeat(300);
        let text = format!("{{\"id\":\"a\",\"lang\":\"en\",\"document\":\"{doc}\",\"summary\":\"b\"}}");
        let ds = parse_jsonl(&text, &tok(), Truncation::default()).unwrap();
        assert_eq!(ds.examples[0].document.len(), 256);
    }
}
