//! Recursive separator-hierarchy text splitting.
//!
//! Text is split on the first separator (in configured order) that occurs in
//! it. Adjacent pieces are merged greedily, with the separator reinstated,
//! while they fit the size limit; a piece that is still too long is split
//! again with the remaining separators. The final separator `""` splits into
//! single characters, so every chunk fits unconditionally.
//!
//! With a non-zero overlap, each chunk after the first starts with the last
//! `chunk_overlap` characters of the chunk before it. Chunk bodies after the
//! first are sized to `chunk_size - chunk_overlap` so the total never exceeds
//! `chunk_size`. All lengths count Unicode scalar values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::defaults;
use crate::ingest::Document;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("invalid split config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub separators: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            chunk_size: defaults::CHUNK_SIZE,
            chunk_overlap: defaults::CHUNK_OVERLAP,
            separators: defaults::SEPARATORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SplitConfig {
    pub fn new(chunk_size: usize, chunk_overlap: usize) -> Self {
        Self {
            chunk_size,
            chunk_overlap,
            ..Self::default()
        }
    }

    pub fn with_separators<S: Into<String>>(mut self, separators: impl IntoIterator<Item = S>) -> Self {
        self.separators = separators.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::InvalidConfig("chunk_size must be > 0".into()));
        }
        if self.chunk_overlap >= self.chunk_size {
            return Err(ChunkError::InvalidConfig(format!(
                "chunk_overlap ({}) must be < chunk_size ({})",
                self.chunk_overlap, self.chunk_size
            )));
        }
        match self.separators.last() {
            None => Err(ChunkError::InvalidConfig("separators must not be empty".into())),
            Some(last) if !last.is_empty() => Err(ChunkError::InvalidConfig(
                "separators must end with the empty string".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// A retrievable fragment of a [`Document`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

impl Chunk {
    pub fn chunk_id(doc_id: &str, seq: usize) -> String {
        format!("{doc_id}-{seq}")
    }

    pub fn source(&self) -> &str {
        self.metadata.get("source").map(String::as_str).unwrap_or("")
    }
}

/// Splits a document into chunks that inherit its metadata plus `seq`.
pub fn split(doc: &Document, cfg: &SplitConfig) -> Result<Vec<Chunk>, ChunkError> {
    Ok(split_text(&doc.text, cfg)?
        .into_iter()
        .enumerate()
        .map(|(seq, text)| {
            let mut metadata = doc.metadata.clone();
            metadata.insert("seq".to_string(), seq.to_string());
            Chunk {
                id: Chunk::chunk_id(&doc.id, seq),
                doc_id: doc.id.clone(),
                seq,
                text,
                metadata,
            }
        })
        .collect())
}

/// Splits raw text into chunk strings.
pub fn split_text(text: &str, cfg: &SplitConfig) -> Result<Vec<String>, ChunkError> {
    cfg.validate()?;
    let mut emitter = Emitter {
        size: cfg.chunk_size,
        overlap: cfg.chunk_overlap,
        out: Vec::new(),
    };
    emitter.split(text, &cfg.separators);
    Ok(emitter.out)
}

/// Characters taken from the end of `prev` to prefix the next chunk.
pub fn overlap_prefix(prev: &str, overlap: usize) -> &str {
    if overlap == 0 {
        return "";
    }
    let n = prev.chars().count();
    let start = prev
        .char_indices()
        .nth(n.saturating_sub(overlap))
        .map(|(i, _)| i)
        .unwrap_or(prev.len());
    prev[start..].trim_start()
}

struct Emitter {
    size: usize,
    overlap: usize,
    out: Vec<String>,
}

impl Emitter {
    /// Room for the body of the next chunk.
    fn capacity(&self) -> usize {
        if self.out.is_empty() {
            self.size
        } else {
            self.size - self.overlap
        }
    }

    fn emit(&mut self, raw: &str) {
        let body = raw.trim();
        if body.is_empty() {
            return;
        }
        let text = match self.out.last() {
            Some(prev) if self.overlap > 0 => format!("{}{}", overlap_prefix(prev, self.overlap), body),
            _ => body.to_string(),
        };
        self.out.push(text);
    }

    fn flush(&mut self, buf: &mut Vec<&str>, buf_len: &mut usize, sep: &str) {
        if !buf.is_empty() {
            let merged = buf.join(sep);
            self.emit(&merged);
            buf.clear();
        }
        *buf_len = 0;
    }

    fn split(&mut self, text: &str, separators: &[String]) {
        let idx = separators
            .iter()
            .position(|s| s.is_empty() || text.contains(s.as_str()))
            .unwrap_or(separators.len().saturating_sub(1));
        let sep = separators.get(idx).map(String::as_str).unwrap_or("");
        let rest = separators.get(idx + 1..).unwrap_or(&[]);

        let pieces: Vec<&str> = if sep.is_empty() {
            text.char_indices()
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect()
        } else {
            text.split(sep).collect()
        };
        let sep_len = sep.chars().count();

        let mut buf: Vec<&str> = Vec::new();
        let mut buf_len = 0usize;
        for piece in pieces {
            let piece_len = piece.chars().count();
            loop {
                let cap = self.capacity();
                if piece_len > cap {
                    self.flush(&mut buf, &mut buf_len, sep);
                    if rest.is_empty() {
                        // Only reachable with a separator list lacking "",
                        // which validation rejects; cut by characters anyway.
                        self.split(piece, &[String::new()]);
                    } else {
                        self.split(piece, rest);
                    }
                    break;
                }
                let joined = if buf.is_empty() {
                    piece_len
                } else {
                    buf_len + sep_len + piece_len
                };
                if joined <= cap {
                    buf.push(piece);
                    buf_len = joined;
                    break;
                }
                self.flush(&mut buf, &mut buf_len, sep);
            }
        }
        self.flush(&mut buf, &mut buf_len, sep);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars_only(cfg: SplitConfig) -> SplitConfig {
        cfg.with_separators([""])
    }

    /// Sliding windows of `size` characters advancing by `size - overlap`,
    /// stopping at the first window that reaches the end.
    fn sliding_window_oracle(text: &str, size: usize, overlap: usize) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let step = size - overlap;
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let end = (start + size).min(chars.len());
            out.push(chars[start..end].iter().collect());
            if end == chars.len() {
                break;
            }
            start += step;
        }
        out
    }

    #[test]
    fn empty_text() {
        assert!(split_text("", &SplitConfig::default()).unwrap().is_empty());
        assert!(split_text("  \n\n ", &SplitConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn sliding_window_example() {
        let cfg = chars_only(SplitConfig::new(3, 1));
        assert_eq!(split_text("abcdef", &cfg).unwrap(), vec!["abc", "cde", "ef"]);
        assert_eq!(sliding_window_oracle("abcdef", 3, 1), vec!["abc", "cde", "ef"]);
    }

    #[test]
    fn paragraph_separator_example() {
        let cfg = SplitConfig::new(2, 0);
        assert_eq!(split_text("aa\n\nbb", &cfg).unwrap(), vec!["aa", "bb"]);
    }

    #[test]
    fn merges_small_pieces() {
        let cfg = SplitConfig::new(11, 0);
        assert_eq!(
            split_text("one two three four", &cfg).unwrap(),
            vec!["one two", "three four"]
        );
    }

    #[test]
    fn falls_through_to_finer_separators() {
        let cfg = SplitConfig::new(10, 0);
        let text = "short\n\na much longer paragraph here";
        assert_eq!(
            split_text(text, &cfg).unwrap(),
            vec!["short", "a much", "longer", "paragraph", "here"]
        );
    }

    #[test]
    fn long_token_is_hard_cut() {
        let cfg = SplitConfig::new(4, 0);
        assert_eq!(split_text("abcdefghij", &cfg).unwrap(), vec!["abcd", "efgh", "ij"]);
    }

    #[test]
    fn unicode_lengths() {
        let cfg = chars_only(SplitConfig::new(2, 0));
        assert_eq!(split_text("äöüß", &cfg).unwrap(), vec!["äö", "üß"]);
    }

    #[test]
    fn invalid_configs() {
        assert!(SplitConfig::new(0, 0).validate().is_err());
        assert!(SplitConfig::new(5, 5).validate().is_err());
        assert!(SplitConfig::new(5, 1).with_separators(["\n"]).validate().is_err());
        assert!(SplitConfig::new(5, 1).with_separators(Vec::<String>::new()).validate().is_err());
        assert!(matches!(
            split_text("x", &SplitConfig::new(3, 3)),
            Err(ChunkError::InvalidConfig(_))
        ));
    }

    #[test]
    fn chunk_metadata() {
        let doc = Document::new("handbook.txt", "alpha beta gamma delta");
        let chunks = split(&doc, &SplitConfig::new(11, 0)).unwrap();
        assert_eq!(chunks.len(), 2);
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.seq, i);
            assert_eq!(c.doc_id, doc.id);
            assert_eq!(c.metadata["seq"], i.to_string());
            assert_eq!(c.source(), "handbook.txt");
        }
        assert_ne!(chunks[0].id, chunks[1].id);
    }

    fn strip_ws(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                4 => "[a-zé]{1,12}",
                2 => Just(" ".to_string()),
                1 => Just("\n".to_string()),
                1 => Just("\n\n".to_string()),
                1 => "[A-Z0-9]{15,40}",
            ],
            0..120,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn size_and_order_invariants(text in text_strategy(), size in 2usize..60, overlap_frac in 0usize..100) {
            let overlap = (size - 1) * overlap_frac / 100;
            let cfg = SplitConfig::new(size, overlap);
            let chunks = split_text(&text, &cfg).unwrap();
            let mut rebuilt = String::new();
            for (i, c) in chunks.iter().enumerate() {
                prop_assert!(c.chars().count() <= size);
                prop_assert!(!c.trim().is_empty());
                let skip = if i == 0 { 0 } else { overlap_prefix(&chunks[i - 1], overlap).len() };
                rebuilt.push_str(&c[skip..]);
            }
            prop_assert_eq!(strip_ws(&rebuilt), strip_ws(&text));
        }

        #[test]
        fn matches_sliding_window_without_whitespace(text in "[a-z0-9]{0,80}", size in 1usize..12, overlap_frac in 0usize..100) {
            let overlap = (size - 1) * overlap_frac / 100;
            let cfg = chars_only(SplitConfig::new(size, overlap));
            prop_assert_eq!(split_text(&text, &cfg).unwrap(), sliding_window_oracle(&text, size, overlap));
        }

        #[test]
        fn deterministic(text in text_strategy()) {
            let cfg = SplitConfig::new(40, 5);
            prop_assert_eq!(split_text(&text, &cfg).unwrap(), split_text(&text, &cfg).unwrap());
        }

        #[test]
        fn larger_size_never_more_chunks(text in text_strategy(), a in 1usize..80, b in 1usize..80) {
            let (small, large) = (a.min(b), a.max(b));
            let n_small = split_text(&text, &SplitConfig::new(small, 0)).unwrap().len();
            let n_large = split_text(&text, &SplitConfig::new(large, 0)).unwrap().len();
            prop_assert!(n_large <= n_small, "{} > {}", n_large, n_small);
        }
    }
}
