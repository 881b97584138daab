//! Labeled text ingestion, vocabulary construction and document encoding.
//!
//! Datasets are UTF-8 TSV files with one `label<TAB>text` example per line.
//! Labels are zero-based class indices.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub label: usize,
    pub text: String,
}

impl RawExample {
    pub fn new(label: usize, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("example text is empty"));
        }
        Ok(Self { label, text })
    }
}

/// Lowercases and splits on whitespace; every punctuation or symbol
/// character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn parse_dataset(contents: &str) -> Result<Vec<RawExample>> {
    let mut examples = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected `label<TAB>text`".into(),
        })?;
        let label: usize = label.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("label {label:?} is not a class index"),
        })?;
        let example = RawExample::new(label, text).map_err(|_| Error::Parse {
            line: line_no,
            message: "empty text".into(),
        })?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let examples = parse_dataset(&contents)?;
    if examples.is_empty() {
        log::warn!("{} contains no examples", path.display());
    } else {
        log::info!("loaded {} examples from {}", examples.len(), path.display());
    }
    Ok(examples)
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[RawExample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!("{}\t{}\n", ex.label, ex.text));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Number of distinct labels, assuming labels are dense in `0..C`.
pub fn num_classes(examples: &[RawExample]) -> usize {
    examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<usize>,
    index: HashMap<String, u32>,
    threshold: usize,
}

impl Vocabulary {
    /// Keeps tokens whose corpus frequency is strictly greater than
    /// `threshold`. Ids after the two reserved slots are assigned by
    /// descending frequency, ties broken lexicographically.
    pub fn build(examples: &[RawExample], threshold: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            for tok in tokenize(&ex.text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c > threshold).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary { threshold });
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut freqs = vec![0, 0];
        for (tok, c) in kept {
            tokens.push(tok);
            freqs.push(c);
        }
        Ok(Self::from_parts(tokens, freqs, threshold))
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<usize>, threshold: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            freqs,
            index,
            threshold,
        }
    }

    /// Total size including the reserved pad and unknown slots.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn freq(&self, id: u32) -> Option<usize> {
        self.freqs.get(id as usize).copied()
    }

    /// Writes `token<TAB>id<TAB>freq` lines sorted by id.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (id, (tok, freq)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            writeln!(file, "{tok}\t{id}\t{freq}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_dump(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut freqs: Vec<usize> = Vec::new();
        for (idx, line) in contents.lines().enumerate() {
            let bad = |message: &str| Error::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(tok), Some(id), Some(freq), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected `token<TAB>id<TAB>freq`"));
            };
            let id: usize = id.parse().map_err(|_| bad("bad id"))?;
            if id != tokens.len() {
                return Err(bad("ids must be dense and sorted"));
            }
            tokens.push(tok.to_string());
            freqs.push(freq.parse().map_err(|_| bad("bad frequency"))?);
        }
        if tokens.len() < 3 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary dump must start with <pad> and <unk>".into(),
            });
        }
        // The threshold is not part of the dump; the smallest kept
        // frequency minus one is the tightest value consistent with it.
        let threshold = freqs[2..].iter().min().map_or(0, |m| m.saturating_sub(1));
        Ok(Self::from_parts(tokens, freqs, threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub token_ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub label: usize,
    /// Every token mapped to the unknown id.
    pub all_unknown: bool,
}

impl Document {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Space-joined token rendering.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn encode(example: &RawExample, vocab: &Vocabulary, max_length: usize) -> Result<Document> {
    encode_text(&example.text, example.label, vocab, max_length)
}

pub fn encode_text(
    text: &str,
    label: usize,
    vocab: &Vocabulary,
    max_length: usize,
) -> Result<Document> {
    if max_length == 0 {
        return Err(Error::invalid("max_length must be at least 1"));
    }
    let mut tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Unexplainable);
    }
    tokens.truncate(max_length);
    let token_ids: Vec<u32> = tokens
        .iter()
        .map(|t| vocab.id(t).unwrap_or(UNK_ID))
        .collect();
    let all_unknown = token_ids.iter().all(|&id| id == UNK_ID);
    Ok(Document {
        token_ids,
        tokens,
        label,
        all_unknown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(label: usize, text: &str) -> RawExample {
        RawExample::new(label, text).unwrap()
    }

    #[test]
    fn parses_tsv_lines() {
        let got = parse_dataset("1\tI love classical music\n0\tterrible\n").unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0]);
        assert_eq!(got[0].text, "I love classical music");
    }

    #[test]
    fn empty_input_gives_no_examples() {
        assert!(parse_dataset("").unwrap().is_empty());
    }

    #[test]
    fn non_integer_label_names_the_line() {
        match parse_dataset("abc\thello") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_dataset("0\tfine\nno tab here") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("Hello, World!  It's"),
            vec!["hello", ",", "world", "!", "it", "'", "s"]
        );
    }

    #[test]
    fn threshold_is_strict() {
        let vocab = Vocabulary::build(&[ex(0, "a a b")], 1).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.id("a"), Some(2));
        assert_eq!(vocab.id("b"), None);
    }

    #[test]
    fn zero_threshold_keeps_everything() {
        let vocab = Vocabulary::build(&[ex(0, "a a b"), ex(1, "c")], 0).unwrap();
        assert_eq!(vocab.len(), 5);
        // frequency first, then lexicographic
        assert_eq!(vocab.token(2), Some("a"));
        assert_eq!(vocab.token(3), Some("b"));
        assert_eq!(vocab.token(4), Some("c"));
    }

    #[test]
    fn all_filtered_is_an_error() {
        assert!(matches!(
            Vocabulary::build(&[ex(0, "a b")], 5),
            Err(Error::EmptyVocabulary { threshold: 5 })
        ));
    }

    #[test]
    fn truncates_to_max_length() {
        let text = vec!["w"; 300].join(" ");
        let vocab = Vocabulary::build(&[ex(0, &text)], 0).unwrap();
        let doc = encode(&ex(0, &text), &vocab, 250).unwrap();
        assert_eq!(doc.len(), 250);
        let short = encode(&ex(0, "w w w"), &vocab, 250).unwrap();
        assert_eq!(short.len(), 3);
    }

    #[test]
    fn oov_maps_to_unknown() {
        let vocab = Vocabulary::build(&[ex(0, "known words")], 0).unwrap();
        let doc = encode(&ex(1, "totally novel"), &vocab, 10).unwrap();
        assert_eq!(doc.token_ids, vec![UNK_ID, UNK_ID]);
        assert!(doc.all_unknown);
        assert_eq!(doc.label, 1);
    }

    #[test]
    fn dump_round_trip() {
        let vocab = Vocabulary::build(&[ex(0, "a a a b b c"), ex(1, "d d")], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        vocab.write_dump(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "<pad>\t0\t0\n<unk>\t1\t0\na\t2\t3\nb\t3\t2\nd\t4\t2\n"
        );
        let back = Vocabulary::read_dump(&path).unwrap();
        assert_eq!(back.len(), vocab.len());
        for id in 0..vocab.len() as u32 {
            assert_eq!(back.token(id), vocab.token(id));
        }
    }
}
