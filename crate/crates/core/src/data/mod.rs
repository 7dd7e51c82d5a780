//! Joint NLU corpora: examples, on-disk formats, label maps and padded batches.

mod batch;
mod labels;
pub mod synthetic;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{encode_batch, is_punctuation, strip_punctuation, Batch};
pub use labels::{LabelMaps, BOS_TAG, PAD_TAG, PAD_TOKEN, UNK_TAG, UNK_TOKEN};

/// One utterance with its per-token BIO slot tags and its intent label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
}

impl Example {
    pub fn new<S: AsRef<str>>(tokens: &[S], slots: &[S], intent: &str) -> Self {
        Example {
            id: None,
            tokens: tokens.iter().map(|s| s.as_ref().to_string()).collect(),
            slots: slots.iter().map(|s| s.as_ref().to_string()).collect(),
            intent: intent.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("example has no tokens".into());
        }
        if self.tokens.len() != self.slots.len() {
            return Err(format!(
                "{} tokens but {} slot tags",
                self.tokens.len(),
                self.slots.len()
            ));
        }
        if self.tokens.iter().any(String::is_empty) {
            return Err("empty token string".into());
        }
        if self.slots.iter().any(String::is_empty) {
            return Err("empty slot tag".into());
        }
        if self.intent.is_empty() {
            return Err("empty intent label".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tabbed,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tabbed" | "tsv" => Ok(CorpusFormat::Tabbed),
            other => Err(Error::config(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// Reads a corpus file. Examples without an `id` get their zero-based
/// position in the file as id.
pub fn parse_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&text, path),
        CorpusFormat::Tabbed => parse_tabbed(&text, path),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// One JSON object per non-blank line: `{"tokens": [..], "slots": [..], "intent": ".."}`.
pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut ex: Example =
            serde_json::from_str(line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        ex.validate().map_err(|m| parse_error(path, i + 1, m))?;
        if ex.id.is_none() {
            ex.id = Some(out.len().to_string());
        }
        out.push(ex);
    }
    Ok(out)
}

/// Blocks of `token<TAB>tag` lines closed by `intent<TAB><label>`, separated
/// by blank lines.
pub fn parse_tabbed(text: &str, path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut slots = Vec::new();
    let mut block_start = 0usize;
    let mut pending_intent: Option<String> = None;

    let flush = |tokens: &mut Vec<String>,
                     slots: &mut Vec<String>,
                     intent: Option<String>,
                     start: usize,
                     out: &mut Vec<Example>|
     -> Result<()> {
        if tokens.is_empty() && intent.is_none() {
            return Ok(());
        }
        let Some(intent) = intent else {
            return Err(parse_error(path, start, "block has no closing intent line"));
        };
        let ex = Example {
            id: Some(out.len().to_string()),
            tokens: std::mem::take(tokens),
            slots: std::mem::take(slots),
            intent,
        };
        ex.validate().map_err(|m| parse_error(path, start, m))?;
        out.push(ex);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut slots, pending_intent.take(), block_start, &mut out)?;
            continue;
        }
        if tokens.is_empty() && pending_intent.is_none() {
            block_start = lineno;
        }
        if pending_intent.is_some() {
            return Err(parse_error(path, lineno, "line after the intent line of a block"));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[..] {
            ["intent", label] => pending_intent = Some(label.to_string()),
            [token, tag] => {
                tokens.push(token.to_string());
                slots.push(tag.to_string());
            }
            [_] => return Err(parse_error(path, lineno, "token line has no tag (length mismatch)")),
            _ => return Err(parse_error(path, lineno, "expected token<TAB>tag")),
        }
    }
    flush(&mut tokens, &mut slots, pending_intent.take(), block_start, &mut out)?;
    Ok(out)
}

pub fn write_jsonl(examples: &[Example], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train, dev and test splits of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    /// Loads `train`, `dev` and `test` files with the format's extension
    /// (`.jsonl` or `.tsv`) from `dir`.
    pub fn load(dir: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        let dir = dir.as_ref();
        let ext = match format {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Tabbed => "tsv",
        };
        let load = |name: &str| {
            let p = dir.join(format!("{name}.{ext}"));
            if !p.exists() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing split"),
                ));
            }
            parse_corpus(&p, format)
        };
        Ok(Splits {
            train: load("train")?,
            dev: load("dev")?,
            test: load("test")?,
        })
    }

    pub fn write_jsonl(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&self.train, dir.join("train.jsonl"))?;
        write_jsonl(&self.dev, dir.join("dev.jsonl"))?;
        write_jsonl(&self.test, dir.join("test.jsonl"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn jsonl_single_record() {
        let text = r#"{"tokens":["to","boston"],"slots":["O","B-toloc"],"intent":"atis_flight"}"#;
        let out = parse_jsonl(text, p()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 2);
        assert_eq!(out[0].id.as_deref(), Some("0"));
        assert_eq!(out[0].intent, "atis_flight");
    }

    #[test]
    fn jsonl_length_mismatch_reports_line() {
        let text = "\n{\"tokens\":[\"a\"],\"slots\":[\"O\"],\"intent\":\"x\"}\n{\"tokens\":[\"a\",\"b\"],\"slots\":[\"O\"],\"intent\":\"x\"}";
        match parse_jsonl(text, p()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("2 tokens but 1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tabbed_blocks() {
        let text = "to\tO\nboston\tB-toloc\nintent\tatis_flight\n\nhi\tO\nintent\tgreet\n";
        let out = parse_tabbed(text, p()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].slots, vec!["O", "B-toloc"]);
        assert_eq!(out[1].intent, "greet");
    }

    #[test]
    fn tabbed_missing_tag_is_error() {
        let text = "to\tO\nboston\nintent\tatis_flight\n";
        assert!(matches!(parse_tabbed(text, p()), Err(Error::Parse { line: 2, .. })));
        let text = "to\tO\n\n";
        assert!(matches!(parse_tabbed(text, p()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unknown_format_is_config_error() {
        assert!(matches!("xml".parse::<CorpusFormat>(), Err(Error::Config(_))));
    }
}
